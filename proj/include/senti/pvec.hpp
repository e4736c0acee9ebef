#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "senti/corpus.hpp"
#include "senti/nbsvm.hpp"
#include "senti/scores.hpp"

namespace senti {

class PvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary Huffman code over leaves 0..n-1. Internal nodes are numbered in
/// merge order; `points` index the internal-node parameter rows, root first.
struct HuffmanTree {
  std::vector<std::vector<std::uint8_t>> codes;
  std::vector<std::vector<std::uint32_t>> points;

  std::size_t leaves() const { return codes.size(); }
  std::size_t internal_nodes() const { return codes.empty() ? 0 : codes.size() - 1; }
};

/// Repeatedly merges the two lowest (frequency, node id) nodes; leaves have
/// ids 0..n-1 and merged nodes get n, n+1, ... The first of the pair gets bit 0.
HuffmanTree build_huffman(std::span<const std::uint64_t> frequencies);

/// log p(leaf | h) = sum over the path of log sigmoid(+-theta_j . h): bit 0 takes +, bit 1 takes -.
double hs_log_prob(const HuffmanTree& tree, const RowMatrix& nodes, const Eigen::VectorXd& h, std::uint32_t leaf);

/// Gradients of -log p(leaf | h); grad_nodes must be sized like nodes.
double hs_loss_gradient(const HuffmanTree& tree, const RowMatrix& nodes, const Eigen::VectorXd& h,
                        std::uint32_t leaf, Eigen::VectorXd& grad_h, RowMatrix& grad_nodes);

enum class PvMode { Dbow, Dm };

struct PvConfig {
  std::size_t dim = 100;
  std::size_t window = 10;
  std::size_t epochs = 20;
  double lr_start = 0.05;
  double lr_end = 0.0001;
  std::uint64_t seed = 1;
  PvMode mode = PvMode::Dbow;
  /// Skip-gram word training interleaved with DBOW.
  bool train_words = false;
  /// Per-epoch document shuffling. Disabling it exists only to reproduce the
  /// ordered-data artifact; the CLI always shuffles.
  bool shuffle = true;
  std::uint64_t min_count = 2;
  /// Defaults for held-out inference.
  std::size_t infer_steps = 20;
  double infer_lr = 0.05;
};

/// Word and tree parameters are shared; `doc_vectors` row i belongs to doc_ids[i].
struct ParagraphVectorModel {
  std::shared_ptr<const Vocabulary> vocab;
  HuffmanTree tree;  // leaf = vocabulary index - 3 (reserved markers are never predicted)
  RowMatrix word_vectors;
  RowMatrix node_vectors;
  RowMatrix doc_vectors;
  std::vector<std::string> doc_ids;
  PvConfig config;
  std::vector<double> epoch_loss;  // mean -log p per predicted word
  LinearClassifier head;           // empty until fitted

  std::size_t dim() const { return static_cast<std::size_t>(word_vectors.cols()); }
  /// Digest of the shared (word + tree) parameters.
  std::string shared_digest() const;
};

/// Single worker, bit-identical for a fixed seed.
ParagraphVectorModel train_pv(std::span<const Document> docs, const PvConfig& config);

/// Seeded starting point for a new document: entries (u - 0.5) / D, with u
/// drawn from a stream keyed by the model seed and the token sequence.
Eigen::VectorXd initial_doc_vector(const ParagraphVectorModel& model, std::span<const std::string> tokens);

/// Gradient steps on a fresh document vector with word and tree parameters frozen.
Eigen::VectorXd infer_doc_vector(const ParagraphVectorModel& model, std::span<const std::string> tokens,
                                 std::size_t steps, double lr);
RowMatrix infer_doc_vectors(const ParagraphVectorModel& model, std::span<const Document> docs, unsigned workers = 1);

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Logistic regression on training document vectors; fills model.head.
void fit_pv_head(ParagraphVectorModel& model, std::span<const Label> labels, const LinearTrainConfig& config = {});

/// Scores rows of `vectors` with the fitted head.
std::vector<ScoreRecord> pv_classify(const ParagraphVectorModel& model, const RowMatrix& vectors,
                                     std::span<const std::string> ids, const std::string& model_id = "pv");

void save_pv_model(const std::filesystem::path& path, const ParagraphVectorModel& model);
ParagraphVectorModel load_pv_model(const std::filesystem::path& path);

/// `id<TAB>v1 v2 ... vD`, 6 significant digits.
void write_vectors_text(const std::filesystem::path& path, std::span<const std::string> ids, const RowMatrix& v);
/// "SENTIPVV", u64 N, u64 D, then per row: u32 id length, id bytes, D float64.
void write_vectors_binary(const std::filesystem::path& path, std::span<const std::string> ids, const RowMatrix& v);
std::pair<std::vector<std::string>, RowMatrix> read_vectors(const std::filesystem::path& path);

}  // namespace senti

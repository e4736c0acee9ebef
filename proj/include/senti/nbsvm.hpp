#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "senti/corpus.hpp"
#include "senti/scores.hpp"

namespace senti {

class NbsvmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Distinct contiguous 1..n_max-grams, tokens joined with '_', sorted bytewise.
std::vector<std::string> extract_grams(std::span<const std::string> tokens, int n_max);

/// Sorted indices with values; entries may hold explicit zeros.
struct SparseVector {
  std::vector<std::uint32_t> index;
  std::vector<double> value;
  std::size_t size() const { return index.size(); }
};

SparseVector dense_features(std::span<const double> values);

/// Every 1..n_max-gram seen in the training documents. Grams are keyed by
/// packed token ids (21 bits each) and indexed by key rank, so indices are a
/// deterministic function of the gram set.
class NGramFeatureSpace {
 public:
  NGramFeatureSpace() = default;
  static NGramFeatureSpace build(std::span<const Document> train, int n_max, unsigned workers = 1);
  /// Space over an explicit gram list (each gram is its token sequence).
  static NGramFeatureSpace from_grams(std::span<const std::vector<std::string>> grams, int n_max);

  int n_max() const { return n_max_; }
  std::size_t size() const { return keys_.size(); }
  std::optional<std::uint32_t> find(std::span<const std::string> gram) const;
  std::vector<std::string> gram_tokens(std::uint32_t index) const;
  /// Tokens joined with '_'.
  std::string gram(std::uint32_t index) const;

  /// Sorted distinct feature indices of the grams present in `tokens`.
  std::vector<std::uint32_t> present(std::span<const std::string> tokens) const;

 private:
  std::uint32_t token_id(const std::string& token) const;  // 0 when unknown
  std::uint32_t intern(const std::string& token);

  int n_max_ = 1;
  std::unordered_map<std::string, std::uint32_t> token_ids_;
  std::vector<std::string> tokens_ = {""};
  std::vector<std::uint64_t> keys_;  // sorted
};

struct LogRatioWeights {
  std::vector<double> r;  // nats
  double alpha = 1.0;
  std::vector<std::uint32_t> pos_count;  // documents containing each gram
  std::vector<std::uint32_t> neg_count;
};

/// r_i = ln((p_i / |p|_1) / (q_i / |q|_1)) with p_i = alpha + #positive docs containing gram i.
LogRatioWeights compute_log_ratio(std::span<const Document> pos_docs, std::span<const Document> neg_docs,
                                  const NGramFeatureSpace& space, double alpha = 1.0, unsigned workers = 1);

/// r_i at every in-space gram present in the document.
SparseVector featurize(std::span<const std::string> tokens, const NGramFeatureSpace& space,
                       const LogRatioWeights& r);

enum class LinearLoss { Logistic, SquaredHinge };

struct LinearTrainConfig {
  /// L2 strength on the weights (not the bias); negative means 1 / number of examples.
  double l2 = -1;
  /// Optimizer iterations; each one is at least one full pass.
  std::size_t epochs = 200;
  LinearLoss loss = LinearLoss::Logistic;
  double gradient_tolerance = 1e-10;
  /// L-BFGS history length; memory is about 2 * rank * dim doubles.
  int lbfgs_rank = 5;
  unsigned workers = 1;
};

/// Minimizes mean loss + l2/2 |w|^2 with L-BFGS from zero; deterministic.
struct LinearClassifier {
  std::vector<double> weights;
  double bias = 0;
  double l2 = 0;
  LinearLoss loss = LinearLoss::Logistic;
  std::vector<double> loss_trace;  // objective before training, then after each iteration

  double margin(const SparseVector& x) const;
  /// Logistic link on the margin for either loss.
  double p_pos(const SparseVector& x) const;
  Label predict(const SparseVector& x) const { return margin(x) > 0 ? Label::Positive : Label::Negative; }
};

LinearClassifier train_linear(std::span<const SparseVector> features, std::span<const Label> labels,
                              std::size_t dim, const LinearTrainConfig& config = {});

/// Mean loss + l2/2 |w|^2 of a given classifier, for checking the trace.
double linear_objective(const LinearClassifier& model, std::span<const SparseVector> features,
                        std::span<const Label> labels);

struct NbsvmConfig {
  int n_max = 3;
  double alpha = 1.0;
  LinearTrainConfig linear;
};

struct NbsvmModel {
  NGramFeatureSpace space;
  LogRatioWeights ratio;
  LinearClassifier classifier;

  double p_pos(std::span<const std::string> tokens) const;
};

NbsvmModel train_nbsvm(std::span<const Document> train, const NbsvmConfig& config = {});

/// One record per document, model id as given.
std::vector<ScoreRecord> score_nbsvm(const NbsvmModel& model, std::span<const Document> docs,
                                     const std::string& model_id = "nbsvm", unsigned workers = 1);

/// Text format; doubles at full precision, so a reloaded model scores identically.
void save_nbsvm(const std::filesystem::path& path, const NbsvmModel& model);
NbsvmModel load_nbsvm(const std::filesystem::path& path);

/// `gram<TAB>r`, sorted by |r| descending then gram.
void write_feature_dump(const std::filesystem::path& path, const NbsvmModel& model);

}  // namespace senti

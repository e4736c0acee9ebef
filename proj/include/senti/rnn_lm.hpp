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
#include "senti/generative.hpp"

namespace senti {

/// Elman network language model parameters:
///   h_t = sigmoid(embed[x_t] + recurrent * h_{t-1}),  y_t = softmax(output^T h_t + bias).
struct RnnLmParams {
  Eigen::MatrixXd embed;      // V x H, one row per input token
  Eigen::MatrixXd recurrent;  // H x H
  Eigen::MatrixXd output;     // H x V
  Eigen::VectorXd bias;       // V

  static RnnLmParams zeros(std::size_t vocab_size, std::size_t hidden);
  /// Entries uniform in [-scale, scale], seeded.
  static RnnLmParams random(std::size_t vocab_size, std::size_t hidden, std::uint64_t seed, double scale = 0.1);

  std::size_t vocab_size() const { return static_cast<std::size_t>(bias.size()); }
  std::size_t hidden() const { return static_cast<std::size_t>(recurrent.rows()); }
  bool consistent() const;
  bool all_finite() const;
  double squared_norm() const;
  void axpy(double a, const RnnLmParams& x);  // this += a * x
  void scale(double a);
  std::string digest() const;
};

struct RnnForward {
  double log_prob = 0;                        // nats, over all predicted positions
  std::vector<Eigen::VectorXd> distributions;  // filled when requested
};

/// Runs the network over <s> ids... and scores ids... </s>.
RnnForward rnn_forward(const RnnLmParams& params, std::span<const std::uint32_t> ids,
                       bool keep_distributions = false);

/// Gradient of the negative log-likelihood of the document under truncated
/// BPTT: the error at each step propagates back through at most `truncation`
/// earlier steps. Truncation >= number of tokens gives the exact gradient.
RnnLmParams rnn_gradients(const RnnLmParams& params, std::span<const std::uint32_t> ids, std::size_t truncation,
                          double* nll = nullptr);

/// Rescales `grad` to norm `threshold` if its norm exceeds it. Returns the norm before clipping.
double clip_gradient_norm(RnnLmParams& grad, double threshold);

struct RnnTrainConfig {
  double learning_rate = 0.1;
  /// Halve the rate when validation perplexity improves by less than this fraction.
  double min_improvement = 0.001;
  std::size_t truncation = 10;
  /// Tokens per parameter update; the hidden state carries across segments.
  std::size_t segment = 20;
  std::size_t epochs = 10;
  double clip = 5.0;
  std::uint64_t seed = 1;
  double init_scale = 0.1;
  std::filesystem::path dump_dir = std::filesystem::temp_directory_path();
};

struct RnnEpochLog {
  std::size_t epoch = 0;
  double train_perplexity = 0;
  double valid_perplexity = 0;  // of the parameters kept after this epoch
  double learning_rate = 0;
  bool reverted = false;
};

struct RnnTrainResult {
  RnnLmParams params;
  std::vector<RnnEpochLog> log;
};

class RnnDivergedError : public std::runtime_error {
 public:
  RnnDivergedError(const std::string& what, std::filesystem::path dump)
      : std::runtime_error(what + " (state dumped to " + dump.string() + ")"), dump_(std::move(dump)) {}
  const std::filesystem::path& dump_path() const { return dump_; }

 private:
  std::filesystem::path dump_;
};

/// Single-writer SGD; bit-identical given the same inputs and seed.
RnnTrainResult train_rnn_lm(std::span<const std::vector<std::uint32_t>> train,
                            std::span<const std::vector<std::uint32_t>> valid, std::size_t vocab_size,
                            std::size_t hidden, const RnnTrainConfig& config);

double rnn_perplexity(const RnnLmParams& params, std::span<const std::vector<std::uint32_t>> docs);

/// Trained network plus its vocabulary, usable as a class-conditional scorer.
class RnnLm : public DocumentScorer {
 public:
  RnnLm(std::shared_ptr<const Vocabulary> vocab, RnnLmParams params);

  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const RnnLmParams& params() const { return params_; }
  double doc_logprob(std::span<const std::string> tokens) const override;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  RnnLmParams params_;
};

/// Flat binary: "SENTIRNN", u32 version, u64 V, u64 H, row-major f32 embed,
/// recurrent, output, bias, then the V vocabulary tokens (u32 length + bytes).
void save_rnn_model(const std::filesystem::path& path, const Vocabulary& vocab, const RnnLmParams& params);
RnnLm load_rnn_model(const std::filesystem::path& path);

}  // namespace senti

#include "senti/rnn_lm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "senti/util.hpp"

namespace senti {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'N', 'T', 'I', 'R', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

Eigen::VectorXd sigmoid_vec(const Eigen::VectorXd& a) {
  return a.unaryExpr([](double x) { return sigmoid(x); });
}

// Softmax of logits written into `p`; returns log-sum-exp.
double softmax_into(const Eigen::VectorXd& logits, Eigen::VectorXd& p) {
  const double m = logits.maxCoeff();
  p = (logits.array() - m).exp();
  const double s = p.sum();
  p /= s;
  return m + std::log(s);
}

// Inputs are <s> ids..., targets are ids... </s>.
void make_io(std::span<const std::uint32_t> ids, std::vector<std::uint32_t>& in, std::vector<std::uint32_t>& out) {
  in.assign(1, Vocabulary::kBos);
  in.insert(in.end(), ids.begin(), ids.end());
  out.assign(ids.begin(), ids.end());
  out.push_back(Vocabulary::kEos);
}

void check_ids(const RnnLmParams& p, std::span<const std::uint32_t> ids) {
  for (auto id : ids)
    if (id >= p.vocab_size()) throw std::out_of_range("token id outside the RNN vocabulary");
}

// Accumulates into `grad` the truncated-BPTT gradient of the NLL of `targets`
// given `inputs`, starting from hidden state h0 (treated as a constant).
double segment_gradient(const RnnLmParams& p, std::span<const std::uint32_t> inputs,
                        std::span<const std::uint32_t> targets, const Eigen::VectorXd& h0, std::size_t truncation,
                        RnnLmParams& grad, Eigen::VectorXd* h_last) {
  const std::size_t n = inputs.size();
  std::vector<Eigen::VectorXd> hs(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Eigen::VectorXd& prev = t ? hs[t - 1] : h0;
    hs[t] = sigmoid_vec(p.embed.row(inputs[t]).transpose() + p.recurrent * prev);
  }
  double nll = 0;
  Eigen::VectorXd probs, logits, delta;
  for (std::size_t t = 0; t < n; ++t) {
    logits.noalias() = p.output.transpose() * hs[t];
    logits += p.bias;
    const double lse = softmax_into(logits, probs);
    nll -= logits[targets[t]] - lse;
    probs[targets[t]] -= 1.0;  // d nll / d logits
    grad.output.noalias() += hs[t] * probs.transpose();
    grad.bias += probs;
    delta = (p.output * probs).cwiseProduct(hs[t]).cwiseProduct((1.0 - hs[t].array()).matrix());
    for (std::size_t k = 0;; ++k) {
      const std::size_t s = t - k;
      const Eigen::VectorXd& prev = s ? hs[s - 1] : h0;
      grad.embed.row(inputs[s]) += delta.transpose();
      grad.recurrent.noalias() += delta * prev.transpose();
      if (k == truncation || s == 0) break;
      delta = (p.recurrent.transpose() * delta).cwiseProduct(prev).cwiseProduct((1.0 - prev.array()).matrix());
    }
  }
  if (h_last) *h_last = n ? hs[n - 1] : h0;
  return nll;
}

void write_params(std::ofstream& out, const RnnLmParams& p) {
  auto put = [&](double v) {
    float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  };
  for (Eigen::Index r = 0; r < p.embed.rows(); ++r)
    for (Eigen::Index c = 0; c < p.embed.cols(); ++c) put(p.embed(r, c));
  for (Eigen::Index r = 0; r < p.recurrent.rows(); ++r)
    for (Eigen::Index c = 0; c < p.recurrent.cols(); ++c) put(p.recurrent(r, c));
  for (Eigen::Index r = 0; r < p.output.rows(); ++r)
    for (Eigen::Index c = 0; c < p.output.cols(); ++c) put(p.output(r, c));
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) put(p.bias[i]);
}

void write_header(std::ofstream& out, std::uint64_t v, std::uint64_t h) {
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
}

std::filesystem::path dump_state(const RnnTrainConfig& config, const RnnLmParams& p) {
  std::filesystem::create_directories(config.dump_dir);
  auto path = config.dump_dir / ("rnn_diverged_seed" + std::to_string(config.seed) + ".bin");
  std::ofstream out(path, std::ios::binary);
  write_header(out, p.vocab_size(), p.hidden());
  write_params(out, p);
  std::uint64_t none = 0;
  out.write(reinterpret_cast<const char*>(&none), sizeof none);
  return path;
}

}  // namespace

RnnLmParams RnnLmParams::zeros(std::size_t vocab_size, std::size_t hidden) {
  const auto v = static_cast<Eigen::Index>(vocab_size), h = static_cast<Eigen::Index>(hidden);
  return {Eigen::MatrixXd::Zero(v, h), Eigen::MatrixXd::Zero(h, h), Eigen::MatrixXd::Zero(h, v),
          Eigen::VectorXd::Zero(v)};
}

RnnLmParams RnnLmParams::random(std::size_t vocab_size, std::size_t hidden, std::uint64_t seed, double scale) {
  RnnLmParams p = zeros(vocab_size, hidden);
  Rng rng(seed);
  auto fill = [&](auto& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-scale, scale);
  };
  fill(p.embed);
  fill(p.recurrent);
  fill(p.output);
  return p;
}

bool RnnLmParams::consistent() const {
  return embed.rows() == bias.size() && embed.cols() == recurrent.rows() && recurrent.rows() == recurrent.cols() &&
         output.rows() == recurrent.rows() && output.cols() == bias.size();
}

bool RnnLmParams::all_finite() const {
  return embed.allFinite() && recurrent.allFinite() && output.allFinite() && bias.allFinite();
}

double RnnLmParams::squared_norm() const {
  return embed.squaredNorm() + recurrent.squaredNorm() + output.squaredNorm() + bias.squaredNorm();
}

void RnnLmParams::axpy(double a, const RnnLmParams& x) {
  embed += a * x.embed;
  recurrent += a * x.recurrent;
  output += a * x.output;
  bias += a * x.bias;
}

void RnnLmParams::scale(double a) {
  embed *= a;
  recurrent *= a;
  output *= a;
  bias *= a;
}

std::string RnnLmParams::digest() const {
  Fnv1a h;
  h.update(embed.data(), sizeof(double) * static_cast<std::size_t>(embed.size()));
  h.update(recurrent.data(), sizeof(double) * static_cast<std::size_t>(recurrent.size()));
  h.update(output.data(), sizeof(double) * static_cast<std::size_t>(output.size()));
  h.update(bias.data(), sizeof(double) * static_cast<std::size_t>(bias.size()));
  return h.hex();
}

RnnForward rnn_forward(const RnnLmParams& p, std::span<const std::uint32_t> ids, bool keep_distributions) {
  check_ids(p, ids);
  RnnForward result;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.hidden()));
  Eigen::VectorXd logits, probs;
  auto step = [&](std::uint32_t input, std::uint32_t target) {
    h = sigmoid_vec(p.embed.row(input).transpose() + p.recurrent * h);
    logits.noalias() = p.output.transpose() * h;
    logits += p.bias;
    if (keep_distributions) {
      softmax_into(logits, probs);
      result.distributions.push_back(probs);
    }
    const double m = logits.maxCoeff();
    result.log_prob += logits[target] - (m + std::log((logits.array() - m).exp().sum()));
  };
  std::uint32_t prev = Vocabulary::kBos;
  for (auto id : ids) {
    step(prev, id);
    prev = id;
  }
  step(prev, Vocabulary::kEos);
  return result;
}

RnnLmParams rnn_gradients(const RnnLmParams& params, std::span<const std::uint32_t> ids, std::size_t truncation,
                          double* nll) {
  if (truncation < 1) throw std::invalid_argument("truncation must be >= 1");
  check_ids(params, ids);
  std::vector<std::uint32_t> in, out;
  make_io(ids, in, out);
  RnnLmParams grad = RnnLmParams::zeros(params.vocab_size(), params.hidden());
  Eigen::VectorXd h0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.hidden()));
  double loss = segment_gradient(params, in, out, h0, truncation, grad, nullptr);
  if (nll) *nll = loss;
  return grad;
}

double clip_gradient_norm(RnnLmParams& grad, double threshold) {
  const double norm = std::sqrt(grad.squared_norm());
  if (norm > threshold && norm > 0) grad.scale(threshold / norm);
  return norm;
}

double rnn_perplexity(const RnnLmParams& params, std::span<const std::vector<std::uint32_t>> docs) {
  double nll = 0, n = 0;
  for (const auto& d : docs) {
    nll -= rnn_forward(params, d).log_prob;
    n += static_cast<double>(d.size() + 1);
  }
  return n > 0 ? std::exp(nll / n) : std::numeric_limits<double>::quiet_NaN();
}

RnnTrainResult train_rnn_lm(std::span<const std::vector<std::uint32_t>> train,
                            std::span<const std::vector<std::uint32_t>> valid, std::size_t vocab_size,
                            std::size_t hidden, const RnnTrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_rnn_lm: empty corpus");
  if (config.truncation < 1 || config.segment < 1 || config.learning_rate <= 0 || config.clip <= 0 ||
      hidden < 1 || vocab_size < 2)
    throw std::invalid_argument("train_rnn_lm: invalid configuration");

  RnnTrainResult result;
  RnnLmParams params = RnnLmParams::random(vocab_size, hidden, config.seed, config.init_scale);
  RnnLmParams best = params;
  RnnLmParams grad = RnnLmParams::zeros(vocab_size, hidden);
  double best_valid = std::numeric_limits<double>::infinity();
  double lr = config.learning_rate;
  Rng rng(config.seed * 0x2545f4914f6cdd1dULL + 7);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::uint32_t> in, out;
  Eigen::VectorXd h, h_next;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double train_nll = 0, train_n = 0;
    for (std::size_t idx : order) {
      check_ids(params, train[idx]);
      make_io(train[idx], in, out);
      h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
      for (std::size_t start = 0; start < in.size(); start += config.segment) {
        const std::size_t len = std::min(config.segment, in.size() - start);
        grad.embed.setZero();
        grad.recurrent.setZero();
        grad.output.setZero();
        grad.bias.setZero();
        double nll = segment_gradient(params, std::span(in).subspan(start, len), std::span(out).subspan(start, len),
                                      h, config.truncation, grad, &h_next);
        if (!std::isfinite(nll)) throw RnnDivergedError("RNN training diverged (non-finite loss)", dump_state(config, params));
        clip_gradient_norm(grad, config.clip);
        params.axpy(-lr, grad);
        h = h_next;
        train_nll += nll;
        train_n += static_cast<double>(len);
      }
    }
    const double train_ppl = std::exp(train_nll / train_n);
    if (!std::isfinite(train_ppl) || !params.all_finite())
      throw RnnDivergedError("RNN training diverged (perplexity NaN)", dump_state(config, params));
    const double valid_ppl = valid.empty() ? train_ppl : rnn_perplexity(params, valid);

    RnnEpochLog entry;
    entry.epoch = epoch;
    entry.train_perplexity = train_ppl;
    if (epoch == 1 || valid_ppl < best_valid * (1.0 - config.min_improvement)) {
      best = params;
      best_valid = valid_ppl;
    } else if (valid_ppl <= best_valid) {
      best = params;
      best_valid = valid_ppl;
      lr *= 0.5;
    } else {
      params = best;
      lr *= 0.5;
      entry.reverted = true;
    }
    entry.valid_perplexity = best_valid;
    entry.learning_rate = lr;
    result.log.push_back(entry);
  }
  result.params = std::move(best);
  return result;
}

RnnLm::RnnLm(std::shared_ptr<const Vocabulary> vocab, RnnLmParams params)
    : vocab_(std::move(vocab)), params_(std::move(params)) {
  if (!vocab_ || vocab_->size() != params_.vocab_size() || !params_.consistent())
    throw std::invalid_argument("RnnLm: vocabulary and parameter dimensions disagree");
}

double RnnLm::doc_logprob(std::span<const std::string> tokens) const {
  auto ids = vocab_->encode(tokens);
  return rnn_forward(params_, ids).log_prob;
}

void save_rnn_model(const std::filesystem::path& path, const Vocabulary& vocab, const RnnLmParams& params) {
  if (vocab.size() != params.vocab_size() || !params.consistent())
    throw std::invalid_argument("save_rnn_model: dimension mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_header(out, params.vocab_size(), params.hidden());
  write_params(out, params);
  std::uint64_t n = vocab.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& t : vocab.tokens()) {
    auto len = static_cast<std::uint32_t>(t.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(t.data(), len);
  }
  if (!out) throw std::runtime_error("error writing " + path.string());
}

RnnLm load_rnn_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto fail = [&](const std::string& why) -> RnnLm { throw std::runtime_error(path.string() + ": " + why); };
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t v = 0, h = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  in.read(reinterpret_cast<char*>(&h), sizeof h);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) return fail("not an RNN model file");
  if (version != kVersion) return fail("unsupported version " + std::to_string(version));
  if (v < 2 || h < 1 || v > (1u << 24) || h > (1u << 14)) return fail("implausible dimensions");

  RnnLmParams p = RnnLmParams::zeros(v, h);
  auto get = [&]() {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof f);
    return static_cast<double>(f);
  };
  for (Eigen::Index r = 0; r < p.embed.rows(); ++r)
    for (Eigen::Index c = 0; c < p.embed.cols(); ++c) p.embed(r, c) = get();
  for (Eigen::Index r = 0; r < p.recurrent.rows(); ++r)
    for (Eigen::Index c = 0; c < p.recurrent.cols(); ++c) p.recurrent(r, c) = get();
  for (Eigen::Index r = 0; r < p.output.rows(); ++r)
    for (Eigen::Index c = 0; c < p.output.cols(); ++c) p.output(r, c) = get();
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = get();
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in) return fail("truncated parameter block");
  if (n != v) return fail("vocabulary has " + std::to_string(n) + " tokens, expected " + std::to_string(v));
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1u << 20)) return fail("truncated vocabulary");
    std::string t(len, '\0');
    in.read(t.data(), len);
    if (!in) return fail("truncated vocabulary");
    tokens.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) return fail("trailing bytes");
  if (tokens.size() < 3 || tokens[0] != Vocabulary::kBosToken || tokens[1] != Vocabulary::kEosToken ||
      tokens[2] != Vocabulary::kUnkToken)
    return fail("reserved markers missing");
  for (std::size_t i = 3; i < tokens.size(); ++i) entries.emplace_back(tokens[i], 0);
  auto vocab = std::make_shared<Vocabulary>(Vocabulary::from_entries(entries, 0));
  return RnnLm(std::move(vocab), std::move(p));
}

}  // namespace senti

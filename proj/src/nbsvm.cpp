#include "senti/nbsvm.hpp"

#include <ceres/ceres.h>
#include <glog/logging.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "senti/util.hpp"

namespace senti {

namespace {

constexpr int kIdBits = 21;
constexpr std::uint64_t kIdMask = (1ULL << kIdBits) - 1;

std::uint64_t pack(std::span<const std::uint32_t> ids) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) key |= static_cast<std::uint64_t>(ids[i]) << (kIdBits * i);
  return key;
}

void check_order(int n_max) {
  if (n_max < 1 || n_max > 3) throw NbsvmError("n-gram order must be 1, 2 or 3 (got " + std::to_string(n_max) + ")");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Appends the keys of every gram whose tokens are all known.
void gram_keys(std::span<const std::uint32_t> ids, int n_max, std::vector<std::uint64_t>& out) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int n = 1; n <= n_max && i + static_cast<std::size_t>(n) <= ids.size(); ++n) {
      if (ids[i + static_cast<std::size_t>(n) - 1] == 0) break;
      out.push_back(pack(ids.subspan(i, static_cast<std::size_t>(n))));
    }
  }
}

}  // namespace

std::vector<std::string> extract_grams(std::span<const std::string> tokens, int n_max) {
  check_order(n_max);
  std::set<std::string> grams;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string g;
    for (int n = 0; n < n_max && i + static_cast<std::size_t>(n) < tokens.size(); ++n) {
      if (n) g += '_';
      g += tokens[i + static_cast<std::size_t>(n)];
      grams.insert(g);
    }
  }
  return {grams.begin(), grams.end()};
}

SparseVector dense_features(std::span<const double> values) {
  SparseVector v;
  v.index.resize(values.size());
  std::iota(v.index.begin(), v.index.end(), 0u);
  v.value.assign(values.begin(), values.end());
  return v;
}

std::uint32_t NGramFeatureSpace::token_id(const std::string& token) const {
  auto it = token_ids_.find(token);
  return it == token_ids_.end() ? 0 : it->second;
}

std::uint32_t NGramFeatureSpace::intern(const std::string& token) {
  auto [it, inserted] = token_ids_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
  if (inserted) {
    if (tokens_.size() > kIdMask) throw NbsvmError("too many distinct tokens for the gram key (max 2^21 - 1)");
    tokens_.push_back(token);
  }
  return it->second;
}

NGramFeatureSpace NGramFeatureSpace::build(std::span<const Document> train, int n_max, unsigned workers) {
  check_order(n_max);
  NGramFeatureSpace space;
  space.n_max_ = n_max;
  std::vector<std::vector<std::uint32_t>> ids(train.size());
  for (std::size_t d = 0; d < train.size(); ++d) {
    ids[d].reserve(train[d].tokens.size());
    for (const auto& t : train[d].tokens) ids[d].push_back(space.intern(t));
  }
  std::vector<std::vector<std::uint64_t>> per_doc(train.size());
  parallel_for(train.size(), workers, [&](std::size_t d) {
    gram_keys(ids[d], n_max, per_doc[d]);
    std::sort(per_doc[d].begin(), per_doc[d].end());
    per_doc[d].erase(std::unique(per_doc[d].begin(), per_doc[d].end()), per_doc[d].end());
  });
  ids.clear();
  ids.shrink_to_fit();
  std::size_t total = 0;
  for (const auto& k : per_doc) total += k.size();
  space.keys_.reserve(total);
  for (auto& k : per_doc) {
    space.keys_.insert(space.keys_.end(), k.begin(), k.end());
    std::vector<std::uint64_t>().swap(k);
  }
  std::sort(space.keys_.begin(), space.keys_.end());
  space.keys_.erase(std::unique(space.keys_.begin(), space.keys_.end()), space.keys_.end());
  space.keys_.shrink_to_fit();
  return space;
}

NGramFeatureSpace NGramFeatureSpace::from_grams(std::span<const std::vector<std::string>> grams, int n_max) {
  check_order(n_max);
  NGramFeatureSpace space;
  space.n_max_ = n_max;
  std::vector<std::uint32_t> ids;
  for (const auto& g : grams) {
    if (g.empty() || g.size() > static_cast<std::size_t>(n_max)) throw NbsvmError("gram length outside 1..n_max");
    ids.clear();
    for (const auto& t : g) ids.push_back(space.intern(t));
    space.keys_.push_back(pack(ids));
  }
  std::sort(space.keys_.begin(), space.keys_.end());
  if (std::adjacent_find(space.keys_.begin(), space.keys_.end()) != space.keys_.end())
    throw NbsvmError("duplicate gram in feature list");
  return space;
}

std::optional<std::uint32_t> NGramFeatureSpace::find(std::span<const std::string> gram) const {
  if (gram.empty() || gram.size() > static_cast<std::size_t>(n_max_)) return std::nullopt;
  std::vector<std::uint32_t> ids;
  for (const auto& t : gram) {
    auto id = token_id(t);
    if (id == 0) return std::nullopt;
    ids.push_back(id);
  }
  auto key = pack(ids);
  auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
  if (it == keys_.end() || *it != key) return std::nullopt;
  return static_cast<std::uint32_t>(it - keys_.begin());
}

std::vector<std::string> NGramFeatureSpace::gram_tokens(std::uint32_t index) const {
  std::vector<std::string> out;
  for (auto key = keys_.at(index); key; key >>= kIdBits) out.push_back(tokens_[key & kIdMask]);
  return out;
}

std::string NGramFeatureSpace::gram(std::uint32_t index) const {
  std::string s;
  for (const auto& t : gram_tokens(index)) s += (s.empty() ? "" : "_") + t;
  return s;
}

std::vector<std::uint32_t> NGramFeatureSpace::present(std::span<const std::string> tokens) const {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(token_id(t));
  std::vector<std::uint64_t> keys;
  gram_keys(ids, n_max_, keys);
  std::vector<std::uint32_t> out;
  out.reserve(keys.size());
  for (auto key : keys) {
    auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
    if (it != keys_.end() && *it == key) out.push_back(static_cast<std::uint32_t>(it - keys_.begin()));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

LogRatioWeights compute_log_ratio(std::span<const Document> pos_docs, std::span<const Document> neg_docs,
                                  const NGramFeatureSpace& space, double alpha, unsigned workers) {
  if (!(alpha > 0)) throw NbsvmError("alpha must be positive");
  if (pos_docs.empty() || neg_docs.empty()) throw NbsvmError("log-count ratio needs documents of both classes");
  LogRatioWeights w;
  w.alpha = alpha;
  w.pos_count.assign(space.size(), 0);
  w.neg_count.assign(space.size(), 0);
  auto count = [&](std::span<const Document> docs, std::vector<std::uint32_t>& counts) {
    std::vector<std::vector<std::uint32_t>> present(docs.size());
    parallel_for(docs.size(), workers, [&](std::size_t d) { present[d] = space.present(docs[d].tokens); });
    for (const auto& p : present)
      for (auto i : p) ++counts[i];
  };
  count(pos_docs, w.pos_count);
  count(neg_docs, w.neg_count);
  double p_norm = 0, q_norm = 0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    p_norm += alpha + w.pos_count[i];
    q_norm += alpha + w.neg_count[i];
  }
  w.r.resize(space.size());
  for (std::size_t i = 0; i < space.size(); ++i)
    w.r[i] = std::log((alpha + w.pos_count[i]) / p_norm) - std::log((alpha + w.neg_count[i]) / q_norm);
  return w;
}

SparseVector featurize(std::span<const std::string> tokens, const NGramFeatureSpace& space,
                       const LogRatioWeights& r) {
  SparseVector v;
  v.index = space.present(tokens);
  v.value.reserve(v.index.size());
  for (auto i : v.index) v.value.push_back(r.r[i]);
  return v;
}

double LinearClassifier::margin(const SparseVector& x) const {
  double m = bias;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (x.index[k] < weights.size()) m += weights[x.index[k]] * x.value[k];
  return m;
}

double LinearClassifier::p_pos(const SparseVector& x) const { return sigmoid(margin(x)); }

namespace {

struct LossTerm {
  double loss, slope;  // value and derivative with respect to the margin
};

LossTerm loss_term(LinearLoss loss, double y, double margin) {
  if (loss == LinearLoss::Logistic) return {softplus(-y * margin), -y * sigmoid(-y * margin)};
  double slack = std::max(0.0, 1.0 - y * margin);
  return {slack * slack, -2.0 * y * slack};
}

class LinearObjective : public ceres::FirstOrderFunction {
 public:
  LinearObjective(std::span<const SparseVector> x, std::span<const Label> y, std::size_t dim, double l2,
                  LinearLoss loss, unsigned workers)
      : x_(x), y_(y), dim_(dim), l2_(l2), loss_(loss), workers_(workers), terms_(x.size()) {}

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const double* w = params;
    const double b = params[dim_];
    parallel_for(x_.size(), workers_, [&](std::size_t i) {
      double m = b;
      const auto& xi = x_[i];
      for (std::size_t k = 0; k < xi.size(); ++k) m += w[xi.index[k]] * xi.value[k];
      terms_[i] = loss_term(loss_, y_[i] == Label::Positive ? 1.0 : -1.0, m);
    });
    const double inv_n = 1.0 / static_cast<double>(x_.size());
    double total = 0, reg = 0;
    for (const auto& t : terms_) total += t.loss;
    for (std::size_t j = 0; j < dim_; ++j) reg += w[j] * w[j];
    *cost = total * inv_n + 0.5 * l2_ * reg;
    if (!std::isfinite(*cost)) return false;
    if (gradient) {
      std::fill(gradient, gradient + dim_ + 1, 0.0);
      for (std::size_t i = 0; i < x_.size(); ++i) {
        double c = terms_[i].slope * inv_n;
        const auto& xi = x_[i];
        for (std::size_t k = 0; k < xi.size(); ++k) gradient[xi.index[k]] += c * xi.value[k];
        gradient[dim_] += c;
      }
      for (std::size_t j = 0; j < dim_; ++j) gradient[j] += l2_ * w[j];
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(dim_ + 1); }

 private:
  std::span<const SparseVector> x_;
  std::span<const Label> y_;
  std::size_t dim_;
  double l2_;
  LinearLoss loss_;
  unsigned workers_;
  mutable std::vector<LossTerm> terms_;
};

class TraceCallback : public ceres::IterationCallback {
 public:
  explicit TraceCallback(std::vector<double>& trace) : trace_(trace) {}
  ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
    // Iteration 0 reports the starting point; unsuccessful steps keep the old cost.
    if (s.iteration == 0 || s.step_is_successful) trace_.push_back(s.cost);
    return ceres::SOLVER_CONTINUE;
  }

 private:
  std::vector<double>& trace_;
};

}  // namespace

LinearClassifier train_linear(std::span<const SparseVector> features, std::span<const Label> labels,
                              std::size_t dim, const LinearTrainConfig& config) {
  if (features.empty()) throw NbsvmError("cannot train a linear classifier on an empty dataset");
  if (features.size() != labels.size()) throw NbsvmError("feature and label counts differ");
  for (const auto& x : features)
    for (auto i : x.index)
      if (i >= dim) throw NbsvmError("feature index out of range");
  for (auto l : labels)
    if (l == Label::Unlabeled) throw NbsvmError("unlabeled example in training data");

  // Ceres reports line-search corner cases through glog warnings; keep them off stderr.
  static const bool quiet = [] {
    FLAGS_minloglevel = std::max(FLAGS_minloglevel, 2);
    return true;
  }();
  (void)quiet;

  LinearClassifier model;
  model.loss = config.loss;
  model.l2 = config.l2 < 0 ? 1.0 / static_cast<double>(features.size()) : config.l2;
  std::vector<double> params(dim + 1, 0.0);

  ceres::GradientProblem problem(
      new LinearObjective(features, labels, dim, model.l2, config.loss, std::max(1u, config.workers)));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_lbfgs_rank = config.lbfgs_rank;
  options.max_num_iterations = static_cast<int>(config.epochs);
  options.gradient_tolerance = config.gradient_tolerance;
  options.function_tolerance = 1e-14;
  options.parameter_tolerance = 1e-14;
  options.logging_type = ceres::SILENT;
  TraceCallback trace(model.loss_trace);
  options.callbacks.push_back(&trace);
  ceres::GradientProblemSolver::Summary summary;
  if (config.epochs > 0) {
    ceres::Solve(options, problem, params.data(), &summary);
    if (summary.termination_type == ceres::FAILURE || !std::all_of(params.begin(), params.end(), [](double v) {
          return std::isfinite(v);
        }))
      throw NbsvmError("linear classifier training diverged (" + summary.message +
                       "); try a smaller step, a larger l2 or rescaled features");
  } else {
    double cost;
    problem.Evaluate(params.data(), &cost, nullptr);
    model.loss_trace.push_back(cost);
  }
  model.bias = params[dim];
  params.pop_back();
  model.weights = std::move(params);
  return model;
}

double linear_objective(const LinearClassifier& model, std::span<const SparseVector> features,
                        std::span<const Label> labels) {
  double total = 0, reg = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    total += loss_term(model.loss, labels[i] == Label::Positive ? 1.0 : -1.0, model.margin(features[i])).loss;
  for (double w : model.weights) reg += w * w;
  return total / static_cast<double>(features.size()) + 0.5 * model.l2 * reg;
}

double NbsvmModel::p_pos(std::span<const std::string> tokens) const {
  return classifier.p_pos(featurize(tokens, space, ratio));
}

NbsvmModel train_nbsvm(std::span<const Document> train, const NbsvmConfig& config) {
  std::vector<Document> labeled;
  for (const auto& d : train)
    if (d.label != Label::Unlabeled) labeled.push_back(d);
  const unsigned workers = std::max(1u, config.linear.workers);
  NbsvmModel model;
  model.space = NGramFeatureSpace::build(labeled, config.n_max, workers);
  auto pos = select_label(labeled, Label::Positive);
  auto neg = select_label(labeled, Label::Negative);
  model.ratio = compute_log_ratio(pos, neg, model.space, config.alpha, workers);
  std::vector<SparseVector> x(labeled.size());
  std::vector<Label> y(labeled.size());
  parallel_for(labeled.size(), workers, [&](std::size_t i) {
    x[i] = featurize(labeled[i].tokens, model.space, model.ratio);
    y[i] = labeled[i].label;
  });
  model.classifier = train_linear(x, y, model.space.size(), config.linear);
  return model;
}

std::vector<ScoreRecord> score_nbsvm(const NbsvmModel& model, std::span<const Document> docs,
                                     const std::string& model_id, unsigned workers) {
  std::vector<ScoreRecord> out(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t i) {
    out[i].id = docs[i].id;
    out[i].model = model_id;
    out[i].p_pos = clamp_probability(model.p_pos(docs[i].tokens));
  });
  return out;
}

void save_nbsvm(const std::filesystem::path& path, const NbsvmModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NbsvmError("cannot write " + path.string());
  const auto& c = model.classifier;
  out << "nbsvm 1\n";
  out << "n_max " << model.space.n_max() << '\n';
  out << "alpha " << fmt(model.ratio.alpha) << '\n';
  out << "l2 " << fmt(c.l2) << '\n';
  out << "loss " << (c.loss == LinearLoss::Logistic ? "logistic" : "squared_hinge") << '\n';
  out << "bias " << fmt(c.bias) << '\n';
  out << "features " << model.space.size() << '\n';
  // Tokens never contain whitespace, so a space-joined gram is unambiguous.
  for (std::uint32_t i = 0; i < model.space.size(); ++i) {
    auto toks = model.space.gram_tokens(i);
    for (std::size_t k = 0; k < toks.size(); ++k) out << (k ? " " : "") << toks[k];
    out << '\t' << fmt(model.ratio.r[i]) << '\t' << fmt(c.weights[i]) << '\t' << model.ratio.pos_count[i] << '\t'
        << model.ratio.neg_count[i] << '\n';
  }
  if (!out) throw NbsvmError("write failed: " + path.string());
}

NbsvmModel load_nbsvm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NbsvmError("cannot read " + path.string());
  auto fail = [&](const std::string& what) { throw NbsvmError(path.string() + ": " + what); };
  std::string line, key;
  auto header = [&](const std::string& expect) {
    if (!std::getline(in, line)) fail("truncated header");
    std::istringstream ss(line);
    std::string value;
    ss >> key >> value;
    if (key != expect) fail("expected '" + expect + "', found '" + key + "'");
    return value;
  };
  if (header("nbsvm") != "1") fail("unsupported version");
  int n_max = std::stoi(header("n_max"));
  double alpha = std::stod(header("alpha"));
  double l2 = std::stod(header("l2"));
  auto loss = header("loss");
  double bias = std::stod(header("bias"));
  std::size_t n = std::stoull(header("features"));

  std::vector<std::vector<std::string>> grams(n);
  std::vector<double> r(n), w(n);
  std::vector<std::uint32_t> pc(n), nc(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) fail("expected " + std::to_string(n) + " features, found " + std::to_string(i));
    std::istringstream ss(line);
    std::string gram, rs, ws, ps, ns;
    if (!std::getline(ss, gram, '\t') || !std::getline(ss, rs, '\t') || !std::getline(ss, ws, '\t') ||
        !std::getline(ss, ps, '\t') || !std::getline(ss, ns))
      fail("malformed feature line " + std::to_string(i + 1));
    std::istringstream gs(gram);
    for (std::string t; gs >> t;) grams[i].push_back(t);
    r[i] = std::stod(rs);
    w[i] = std::stod(ws);
    pc[i] = static_cast<std::uint32_t>(std::stoul(ps));
    nc[i] = static_cast<std::uint32_t>(std::stoul(ns));
  }
  NbsvmModel model;
  model.space = NGramFeatureSpace::from_grams(grams, n_max);
  model.ratio.alpha = alpha;
  model.ratio.r.resize(n);
  model.ratio.pos_count.resize(n);
  model.ratio.neg_count.resize(n);
  model.classifier.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto j = *model.space.find(grams[i]);
    model.ratio.r[j] = r[i];
    model.ratio.pos_count[j] = pc[i];
    model.ratio.neg_count[j] = nc[i];
    model.classifier.weights[j] = w[i];
  }
  model.classifier.bias = bias;
  model.classifier.l2 = l2;
  model.classifier.loss = loss == "logistic" ? LinearLoss::Logistic : LinearLoss::SquaredHinge;
  return model;
}

void write_feature_dump(const std::filesystem::path& path, const NbsvmModel& model) {
  std::vector<std::uint32_t> order(model.space.size());
  std::iota(order.begin(), order.end(), 0u);
  std::vector<std::string> names(order.size());
  for (auto i : order) names[i] = model.space.gram(i);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    double ra = std::abs(model.ratio.r[a]), rb = std::abs(model.ratio.r[b]);
    if (ra != rb) return ra > rb;
    return names[a] < names[b];
  });
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NbsvmError("cannot write " + path.string());
  for (auto i : order) out << names[i] << '\t' << fmt(model.ratio.r[i]) << '\n';
}

}  // namespace senti

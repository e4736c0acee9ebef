#include "senti/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "senti/util.hpp"

namespace senti {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EnsembleError("cannot write " + path.string());
  return out;
}

int ticks_per_unit(double step) {
  if (!(step > 0) || step > 1) throw EnsembleError("grid step must be in (0, 1]");
  double n = std::round(1.0 / step);
  if (std::abs(n * step - 1.0) > 1e-9) throw EnsembleError("grid step must divide 1 exactly");
  return static_cast<int>(n);
}

void require_generative(const ScoreRecord& r) {
  if (!r.log_p_pos || !r.log_p_neg || !r.n_tokens)
    throw EnsembleError("record " + r.id + " of model " + r.model + " has no generative log-likelihoods");
}

// Every document predicts its tokens plus the end marker.
std::size_t predicted_events(const ScoreRecord& r) { return *r.n_tokens + 1; }

double generative_p(const ScoreRecord& r, double temperature) {
  require_generative(r);
  return calibrate_generative(*r.log_p_pos, *r.log_p_neg, r.prior_log_odds.value_or(0.0), 0.0, predicted_events(r),
                              temperature);
}

}  // namespace

double calibrate_generative(double log_p_pos, double log_p_neg, double log_prior_pos, double log_prior_neg,
                            std::size_t doc_length, double temperature) {
  if (doc_length < 1) throw EnsembleError("document length must be at least 1");
  if (!(temperature > 0)) throw EnsembleError("temperature must be positive");
  double z = ((log_p_pos - log_p_neg) / static_cast<double>(doc_length) + log_prior_pos - log_prior_neg) / temperature;
  if (std::isnan(z)) throw EnsembleError("calibration input is not finite");
  return clamp_probability(sigmoid(z));
}

std::vector<ScoreRecord> recalibrate(std::span<const ScoreRecord> records, double temperature) {
  std::vector<ScoreRecord> out(records.begin(), records.end());
  for (auto& r : out) r.p_pos = generative_p(r, temperature);
  return out;
}

double tune_temperature(std::span<const ScoreRecord> records, const std::map<std::string, Label>& labels) {
  std::vector<std::pair<double, double>> zy;  // (uncalibrated logit, +-1)
  for (const auto& r : records) {
    auto it = labels.find(r.id);
    if (it == labels.end() || it->second == Label::Unlabeled) continue;
    require_generative(r);
    double z = (*r.log_p_pos - *r.log_p_neg) / static_cast<double>(predicted_events(r)) + r.prior_log_odds.value_or(0.0);
    zy.emplace_back(z, it->second == Label::Positive ? 1.0 : -1.0);
  }
  if (zy.empty()) throw EnsembleError("no labeled records to tune the temperature on");
  auto loss = [&](double inv_t) {
    double s = 0;
    for (auto [z, y] : zy) s += softplus(-y * z * inv_t);
    return s / static_cast<double>(zy.size());
  };
  double lo = 0.01, hi = 100.0;
  const double g = (std::sqrt(5.0) - 1) / 2;
  double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
  double fa = loss(a), fb = loss(b);
  for (int i = 0; i < 200; ++i) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - g * (hi - lo);
      fa = loss(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + g * (hi - lo);
      fb = loss(b);
    }
  }
  return 1.0 / ((lo + hi) / 2);
}

ScoreTable align_scores(std::span<const std::vector<ScoreRecord>> per_model) {
  if (per_model.empty()) throw EnsembleError("no score files given");
  ScoreTable t;
  std::unordered_map<std::string, std::size_t> pos;
  for (const auto& r : per_model[0]) {
    if (!pos.emplace(r.id, t.ids.size()).second) throw EnsembleError("duplicate document " + r.id);
    t.ids.push_back(r.id);
  }
  for (const auto& records : per_model) {
    if (records.empty()) throw EnsembleError("empty score file");
    const std::string model = records.front().model;
    if (std::find(t.models.begin(), t.models.end(), model) != t.models.end())
      throw EnsembleError("model " + model + " given twice");
    std::vector<double> p(t.ids.size(), -1.0);
    for (const auto& r : records) {
      if (r.model != model) throw EnsembleError("score file mixes models " + model + " and " + r.model);
      auto it = pos.find(r.id);
      if (it == pos.end())
        throw EnsembleError("model " + model + " scores document " + r.id + " that " +
                            per_model[0].front().model + " does not");
      if (p[it->second] >= 0) throw EnsembleError("duplicate document " + r.id + " for model " + model);
      p[it->second] = clamp_probability(r.p_pos);
    }
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] < 0) throw EnsembleError("missing score for document " + t.ids[i] + " from model " + model);
    t.models.push_back(model);
    t.p.push_back(std::move(p));
  }
  return t;
}

ScoreTable select_models(const ScoreTable& table, std::span<const std::string> models) {
  ScoreTable t;
  t.ids = table.ids;
  for (const auto& m : models) {
    auto it = std::find(table.models.begin(), table.models.end(), m);
    if (it == table.models.end()) throw EnsembleError("no scores for model " + m);
    t.models.push_back(m);
    t.p.push_back(table.p[static_cast<std::size_t>(it - table.models.begin())]);
  }
  return t;
}

std::vector<double> EnsembleWeights::alphas() const {
  std::vector<double> a;
  for (std::size_t k = 0; k < ticks.size(); ++k) a.push_back(alpha(k));
  return a;
}

Combined combine(std::span<const double> p, std::span<const double> alpha) {
  if (p.size() != alpha.size()) throw EnsembleError("score and weight counts differ");
  Combined c;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (alpha[k] == 0) continue;
    c.s_pos += alpha[k] * std::log(p[k]);
    c.s_neg += alpha[k] * std::log1p(-p[k]);
  }
  c.label = c.s_pos > c.s_neg ? Label::Positive : Label::Negative;
  c.p_pos = sigmoid(c.s_pos - c.s_neg);
  return c;
}

Combined combine(const std::string& doc_id, const std::map<std::string, double>& scores,
                 const EnsembleWeights& weights) {
  std::vector<double> p, a;
  for (std::size_t k = 0; k < weights.models.size(); ++k) {
    if (weights.ticks[k] == 0) continue;
    auto it = scores.find(weights.models[k]);
    if (it == scores.end())
      throw EnsembleError("document " + doc_id + " has no score from model " + weights.models[k]);
    p.push_back(clamp_probability(it->second));
    a.push_back(weights.alpha(k));
  }
  return combine(p, a);
}

std::vector<ScoreRecord> ensemble_records(const ScoreTable& table, const EnsembleWeights& weights,
                                          const std::string& model_id) {
  auto t = select_models(table, weights.models);
  auto alpha = weights.alphas();
  std::vector<ScoreRecord> out(t.docs());
  std::vector<double> p(t.models.size());
  for (std::size_t i = 0; i < t.docs(); ++i) {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = t.p[k][i];
    auto c = combine(p, alpha);
    out[i].id = t.ids[i];
    out[i].model = model_id;
    // sigmoid rounds to 0.5 for tiny margins; keep "p_pos > 0.5" equal to the decision.
    double p_pos = clamp_probability(c.p_pos);
    if (c.label == Label::Positive && p_pos <= 0.5) p_pos = std::nextafter(0.5, 1.0);
    if (c.label == Label::Negative && p_pos > 0.5) p_pos = 0.5;
    out[i].p_pos = p_pos;
  }
  return out;
}

std::vector<Label> aligned_labels(const ScoreTable& table, const std::map<std::string, Label>& labels) {
  std::vector<Label> out;
  out.reserve(table.docs());
  for (const auto& id : table.ids) {
    auto it = labels.find(id);
    if (it == labels.end() || it->second == Label::Unlabeled) throw EnsembleError("no label for document " + id);
    out.push_back(it->second);
  }
  return out;
}

std::size_t count_correct(const ScoreTable& table, std::span<const double> alpha, std::span<const Label> labels) {
  std::vector<double> p(table.models.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < table.docs(); ++i) {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = table.p[k][i];
    correct += combine(p, alpha).label == labels[i];
  }
  return correct;
}

GridResult grid_search(const ScoreTable& valid, const std::map<std::string, Label>& labels, double step,
                       unsigned workers) {
  if (valid.models.empty()) throw EnsembleError("grid search needs at least one model");
  if (valid.docs() == 0) throw EnsembleError("empty validation set");
  const int n = ticks_per_unit(step);
  const std::size_t K = valid.models.size();
  auto y = aligned_labels(valid, labels);
  std::size_t tuples = 1;
  for (std::size_t k = 0; k < K; ++k) {
    tuples *= static_cast<std::size_t>(n + 1);
    if (tuples > 50'000'000) throw EnsembleError("weight grid too large");
  }
  // Tuple index t enumerates ticks lexicographically (first model most significant).
  auto decode = [&](std::size_t t) {
    std::vector<int> ticks(K);
    for (std::size_t k = K; k-- > 0;) {
      ticks[k] = static_cast<int>(t % static_cast<std::size_t>(n + 1));
      t /= static_cast<std::size_t>(n + 1);
    }
    return ticks;
  };
  std::vector<std::size_t> correct(tuples, 0);
  parallel_for(tuples, workers, [&](std::size_t t) {
    if (t == 0) return;  // all-zero tuple
    auto ticks = decode(t);
    std::vector<double> alpha(K);
    for (std::size_t k = 0; k < K; ++k) alpha[k] = ticks[k] * step;
    correct[t] = count_correct(valid, alpha, y);
  });
  std::size_t best = 1;
  for (std::size_t t = 2; t < tuples; ++t)
    if (correct[t] > correct[best]) best = t;
  GridResult r;
  r.weights.models = valid.models;
  r.weights.ticks = decode(best);
  r.weights.step = step;
  r.correct = correct[best];
  r.total = valid.docs();
  return r;
}

std::vector<AblationRow> ablate(const ScoreTable& valid, const std::map<std::string, Label>& valid_labels,
                                const ScoreTable* test, const std::map<std::string, Label>* test_labels, double step,
                                unsigned workers) {
  if (valid.models.size() < 2) throw EnsembleError("ablation needs at least two models");
  std::vector<AblationRow> rows;
  auto run = [&](std::vector<std::string> models, std::string removed) {
    AblationRow row;
    row.models = models;
    row.removed = std::move(removed);
    row.valid = grid_search(select_models(valid, models), valid_labels, step, workers);
    if (test && test_labels) {
      auto t = select_models(*test, models);
      auto y = aligned_labels(t, *test_labels);
      row.test_correct = count_correct(t, row.valid.weights.alphas(), y);
      row.test_total = t.docs();
    }
    rows.push_back(std::move(row));
  };
  run(valid.models, "");
  for (const auto& drop : valid.models) {
    std::vector<std::string> rest;
    for (const auto& m : valid.models)
      if (m != drop) rest.push_back(m);
    run(rest, drop);
  }
  return rows;
}

std::string excerpt(std::string_view text, std::size_t max_bytes) {
  std::size_t n = std::min(text.size(), max_bytes);
  // Back off to a UTF-8 sequence boundary.
  if (n < text.size())
    while (n > 0 && (static_cast<unsigned char>(text[n]) & 0xC0) == 0x80) --n;
  std::string out(text.substr(0, n));
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

std::vector<ErrorEntry> inspect_errors(const ScoreTable& table, std::span<const Label> ensemble_predictions,
                                       const std::map<std::string, Label>& labels,
                                       const std::map<std::string, std::string>& texts) {
  if (ensemble_predictions.size() != table.docs()) throw EnsembleError("prediction count does not match scores");
  auto y = aligned_labels(table, labels);
  std::vector<ErrorEntry> out;
  for (std::size_t k = 0; k < table.models.size(); ++k) {
    for (std::size_t i = 0; i < table.docs(); ++i) {
      Label single = table.p[k][i] > 0.5 ? Label::Positive : Label::Negative;
      if (single == y[i] || ensemble_predictions[i] != y[i]) continue;
      auto t = texts.find(table.ids[i]);
      out.push_back({table.models[k], table.ids[i], y[i], t == texts.end() ? "" : excerpt(t->second)});
    }
  }
  return out;
}

std::string format_alpha(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", a);
  return buf;
}

void write_weights(const std::filesystem::path& path, const EnsembleWeights& w) {
  auto out = open_out(path);
  for (std::size_t k = 0; k < w.models.size(); ++k) out << w.models[k] << '=' << format_alpha(w.alpha(k)) << '\n';
}

EnsembleWeights read_weights(const std::filesystem::path& path, double step) {
  std::ifstream in(path);
  if (!in) throw EnsembleError("cannot read " + path.string());
  const int n = ticks_per_unit(step);
  EnsembleWeights w;
  w.step = step;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw EnsembleError(where + "expected model=alpha");
    double a;
    try {
      a = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw EnsembleError(where + "bad weight");
    }
    double ticks = std::round(a / step);
    if (std::abs(ticks * step - a) > 1e-9 || ticks < 0 || ticks > n)
      throw EnsembleError(where + "weight " + line.substr(eq + 1) + " is not a grid value");
    w.models.push_back(line.substr(0, eq));
    w.ticks.push_back(static_cast<int>(ticks));
  }
  if (std::all_of(w.ticks.begin(), w.ticks.end(), [](int t) { return t == 0; }))
    throw EnsembleError(path.string() + ": at least one weight must be positive");
  return w;
}

void write_ablation_tsv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  auto out = open_out(path);
  out << "models\tremoved\tweights\tvalid_accuracy\ttest_accuracy\n";
  char buf[32];
  for (const auto& r : rows) {
    std::string models, weights;
    for (std::size_t k = 0; k < r.models.size(); ++k) {
      models += (k ? "+" : "") + r.models[k];
      weights += (k ? "," : "") + format_alpha(r.valid.weights.alpha(k));
    }
    out << models << '\t' << (r.removed.empty() ? "-" : r.removed) << '\t' << weights << '\t';
    std::snprintf(buf, sizeof buf, "%.4f", 100.0 * r.valid.accuracy());
    out << buf << '\t';
    if (r.test_total) {
      std::snprintf(buf, sizeof buf, "%.4f", 100.0 * static_cast<double>(r.test_correct) / static_cast<double>(r.test_total));
      out << buf;
    } else {
      out << "-";
    }
    out << '\n';
  }
}

void write_errors_tsv(const std::filesystem::path& path, std::span<const ErrorEntry> errors) {
  auto out = open_out(path);
  out << "model\tid\tlabel\texcerpt\n";
  for (const auto& e : errors) out << e.model << '\t' << e.id << '\t' << to_string(e.label) << '\t' << e.excerpt << '\n';
}

}  // namespace senti

#include "senti/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include "senti/corpus.hpp"
#include "senti/ensemble.hpp"
#include "senti/nbsvm.hpp"
#include "senti/ngram_lm.hpp"
#include "senti/pvec.hpp"
#include "senti/rnn_lm.hpp"
#include "senti/scores.hpp"
#include "senti/util.hpp"

namespace fs = std::filesystem;

namespace senti {

namespace {

class CliError : public std::runtime_error {
 public:
  CliError(int code, std::string kind, const std::string& detail)
      : std::runtime_error(detail), code_(code), kind_(std::move(kind)) {}
  int code() const { return code_; }
  const std::string& kind() const { return kind_; }

 private:
  int code_;
  std::string kind_;
};

CliError missing(const fs::path& p) { return {kExitMissingArtifact, "missing-artifact", p.string()}; }
CliError usage(const std::string& what) { return {kExitUsage, "usage", what}; }

const fs::path& require(const fs::path& p) {
  if (!fs::exists(p)) throw missing(p);
  return p;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(require(p), std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// `key=value` lines; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& where) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw usage(where + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

std::map<std::string, std::string> read_meta(const fs::path& p) {
  auto kv = parse_key_values(read_file(p), p.string());
  return {kv.begin(), kv.end()};
}

const std::string& meta_value(const std::map<std::string, std::string>& meta, const std::string& key,
                              const fs::path& p) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error(p.string() + ": missing key " + key);
  return it->second;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

using Settings = std::vector<std::pair<std::string, std::string>>;

struct Ctx {
  fs::path root;
  unsigned workers = 1;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  fs::path data(const std::string& split) const { return root / "data" / (split + ".tok"); }
  fs::path model(const std::string& name) const { return root / "models" / name; }
  fs::path scores(const std::string& model, const std::string& split) const {
    return root / "scores" / (model + "." + split + ".jsonl");
  }
  fs::path ensemble(const std::string& name) const { return root / "ensemble" / name; }
  fs::path report(const std::string& name) const { return root / "reports" / name; }
  fs::path manifest() const { return root / "manifest.txt"; }
};

class Stage {
 public:
  Stage(const Ctx& ctx, std::string name, Settings settings)
      : ctx_(ctx), name_(std::move(name)), settings_(std::move(settings)), start_(std::chrono::steady_clock::now()) {}

  void output(const fs::path& p) { outputs_.push_back(p); }

  /// Records the stage in the manifest; `extra` goes in at top level.
  void finish(const Settings& extra = {}) {
    auto manifest = RunManifest::load(ctx_.manifest());
    manifest.clear_stage(name_);
    const std::string prefix = "stage." + name_ + ".";
    Fnv1a h;
    for (const auto& [k, v] : settings_) {
      h.update(k).update("=").update(v).update("\n");
      manifest.set(prefix + "config." + k, v);
    }
    manifest.set(prefix + "config_hash", h.hex());
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest.set(prefix + "seconds", fmt("%.3f", seconds));
    for (const auto& p : outputs_)
      manifest.set(prefix + "output." + fs::relative(p, ctx_.root).generic_string(), file_digest(p.string()));
    for (const auto& [k, v] : extra) manifest.set(k, v);
    manifest.save(ctx_.manifest());
  }

 private:
  const Ctx& ctx_;
  std::string name_;
  Settings settings_;
  std::chrono::steady_clock::time_point start_;
  std::vector<fs::path> outputs_;
};

std::vector<Document> load_split(const Ctx& ctx, const std::string& split, std::size_t subset) {
  auto docs = read_token_cache(require(ctx.data(split)), parse_split(split));
  if (subset > 0) docs = cap_per_class(docs, subset);
  return docs;
}

std::map<std::string, Label> labels_of(std::span<const Document> docs) {
  std::map<std::string, Label> out;
  for (const auto& d : docs) out[d.id] = d.label;
  return out;
}

std::string joined(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

void print_accuracy(std::ostream& out, const AccuracyResult& acc) { out << "accuracy " << fmt("%.4f", acc.accuracy()) << "\n"; }

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string imdb_dir;
  double valid_fraction = 0.2;
  std::uint64_t seed = 42;
  std::size_t subset = 0;
  bool unlabeled = false;
};

void run_prepare(const Ctx& ctx, const PrepareArgs& a) {
  fs::path root = a.imdb_dir;
  for (const char* leaf : {"train/pos", "train/neg", "test/pos", "test/neg"})
    if (!fs::is_directory(root / leaf)) throw missing(root / leaf);
  Stage stage(ctx, "prepare",
              {{"imdb_dir", fs::absolute(root).lexically_normal().string()},
               {"seed", std::to_string(a.seed)},
               {"subset", std::to_string(a.subset)},
               {"tokenizer", TokenizerConfig{}.hash()},
               {"unlabeled", a.unlabeled ? "1" : "0"},
               {"valid_fraction", fmt("%.17g", a.valid_fraction)}});
  auto set = load_imdb(root, {}, ctx.workers);
  for (const auto& w : set.warnings) *ctx.err << "warning: " << one_line(w) << "\n";
  std::vector<Document> train, test;
  for (auto& d : set.documents) (d.split == Split::Test ? test : train).push_back(std::move(d));
  if (a.subset > 0) {
    train = cap_per_class(train, a.subset);
    test = cap_per_class(test, a.subset);
  }
  auto [train_sub, valid] = split_validation(train, a.valid_fraction, a.seed);
  fs::create_directories(ctx.root / "data");
  write_token_cache(ctx.data("train"), train_sub);
  write_token_cache(ctx.data("valid"), valid);
  write_token_cache(ctx.data("test"), test);
  for (const char* s : {"train", "valid", "test"}) stage.output(ctx.data(s));
  std::size_t n_unsup = 0;
  if (a.unlabeled) {
    auto unsup = load_unlabeled(root, {}, ctx.workers);
    if (a.subset > 0) unsup = cap_per_class(unsup, a.subset);
    n_unsup = unsup.size();
    write_token_cache(ctx.data("unsup"), unsup);
    stage.output(ctx.data("unsup"));
  }
  auto vocab = build_vocab(train_sub, 1);
  *ctx.out << "train " << train_sub.size() << "\nvalid " << valid.size() << "\ntest " << test.size()
           << "\nvocabulary " << vocab.size() << "\n";
  stage.finish({{"split.seed", std::to_string(a.seed)},
                {"split.valid_fraction", fmt("%.17g", a.valid_fraction)},
                {"split.train", std::to_string(train_sub.size())},
                {"split.valid", std::to_string(valid.size())},
                {"split.test", std::to_string(test.size())},
                {"split.unsup", std::to_string(n_unsup)},
                {"vocab.size", std::to_string(vocab.size())},
                {"tokenizer.hash", TokenizerConfig{}.hash()}});
}

// ---------------------------------------------------------------- train-ngram

struct NgramArgs {
  std::size_t order = 5;
  std::size_t subset = 0;
  std::uint64_t min_count = 1;
  bool separate_vocab = false;
  double oov_penalty = std::log(1e-7);
};

void run_train_ngram(const Ctx& ctx, const NgramArgs& a) {
  if (a.order < 1) throw usage("--order must be at least 1");
  Stage stage(ctx, "train-ngram",
              {{"min_count", std::to_string(a.min_count)},
               {"oov_penalty", fmt("%.17g", a.oov_penalty)},
               {"order", std::to_string(a.order)},
               {"separate_vocab", a.separate_vocab ? "1" : "0"},
               {"subset", std::to_string(a.subset)}});
  auto train = load_split(ctx, "train", a.subset);
  auto pos = select_label(train, Label::Positive);
  auto neg = select_label(train, Label::Negative);
  auto shared = std::make_shared<const Vocabulary>(build_vocab(train, a.min_count));
  for (auto [docs, tag] : {std::pair{&pos, "pos"}, std::pair{&neg, "neg"}}) {
    auto vocab = a.separate_vocab ? std::make_shared<const Vocabulary>(build_vocab(*docs, a.min_count)) : shared;
    auto model = estimate_kneser_ney(count_ngrams(*docs, a.order, *vocab, ctx.workers), vocab);
    for (const auto& w : model.warnings()) *ctx.err << "warning: " << tag << ": " << one_line(w) << "\n";
    fs::path p = ctx.model(std::string("ngram.") + tag + ".arpa");
    write_file(p, export_arpa(model));
    stage.output(p);
  }
  std::ostringstream meta;
  meta << "order=" << a.order << "\nn_pos=" << pos.size() << "\nn_neg=" << neg.size()
       << "\nseparate_vocab=" << (a.separate_vocab ? 1 : 0) << "\noov_penalty=" << fmt("%.17g", a.oov_penalty) << "\n";
  write_file(ctx.model("ngram.meta"), meta.str());
  stage.output(ctx.model("ngram.meta"));
  *ctx.out << "trained ngram order " << a.order << " on " << pos.size() << " pos / " << neg.size() << " neg\n";
  stage.finish();
}

// ---------------------------------------------------------------- train-rnn

struct RnnArgs {
  std::size_t hidden = 64;
  std::size_t epochs = 10;
  std::size_t vocab_cap = 10000;
  std::size_t truncation = 10;
  double lr = 0.1;
  double clip = 5.0;
  std::uint64_t seed = 1;
  std::size_t subset = 0;
};

void run_train_rnn(const Ctx& ctx, const RnnArgs& a) {
  Stage stage(ctx, "train-rnn",
              {{"clip", fmt("%.17g", a.clip)},
               {"epochs", std::to_string(a.epochs)},
               {"hidden", std::to_string(a.hidden)},
               {"lr", fmt("%.17g", a.lr)},
               {"seed", std::to_string(a.seed)},
               {"subset", std::to_string(a.subset)},
               {"truncation", std::to_string(a.truncation)},
               {"vocab_cap", std::to_string(a.vocab_cap)}});
  auto train = load_split(ctx, "train", a.subset);
  auto valid = load_split(ctx, "valid", a.subset);
  auto vocab = build_vocab(train, 1, a.vocab_cap);
  RnnTrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.truncation = a.truncation;
  cfg.epochs = a.epochs;
  cfg.clip = a.clip;
  cfg.seed = a.seed;
  cfg.dump_dir = ctx.root / "models";
  std::ostringstream log;
  log << "class\tepoch\ttrain_perplexity\tvalid_perplexity\tlearning_rate\treverted\n";
  std::size_t counts[2] = {0, 0};
  for (Label label : {Label::Positive, Label::Negative}) {
    const std::string tag = label == Label::Positive ? "pos" : "neg";
    std::vector<std::vector<std::uint32_t>> tr, va;
    for (const auto& d : train)
      if (d.label == label) tr.push_back(vocab.encode(d.tokens));
    for (const auto& d : valid)
      if (d.label == label) va.push_back(vocab.encode(d.tokens));
    counts[label == Label::Positive ? 0 : 1] = tr.size();
    auto result = train_rnn_lm(tr, va, vocab.size(), a.hidden, cfg);
    for (const auto& e : result.log)
      log << tag << '\t' << e.epoch << '\t' << fmt("%.6f", e.train_perplexity) << '\t'
          << fmt("%.6f", e.valid_perplexity) << '\t' << fmt("%.6g", e.learning_rate) << '\t' << (e.reverted ? 1 : 0)
          << '\n';
    fs::path p = ctx.model("rnn." + tag + ".bin");
    save_rnn_model(p, vocab, result.params);
    stage.output(p);
    if (!result.log.empty())
      *ctx.out << "rnn " << tag << " valid perplexity " << fmt("%.3f", result.log.back().valid_perplexity) << "\n";
  }
  write_file(ctx.model("rnn.meta"), "n_pos=" + std::to_string(counts[0]) + "\nn_neg=" + std::to_string(counts[1]) +
                                        "\nhidden=" + std::to_string(a.hidden) + "\n");
  write_file(ctx.report("rnn.train.tsv"), log.str());
  stage.output(ctx.model("rnn.meta"));
  stage.output(ctx.report("rnn.train.tsv"));
  stage.finish();
}

// ---------------------------------------------------------------- train-nbsvm

struct NbsvmArgs {
  int ngram = 3;
  double alpha = 1.0;
  double l2 = -1;
  std::string loss = "logistic";
  std::string name;
  std::size_t subset = 0;
  bool dump_features = false;
};

std::string default_nbsvm_name(int n) { return n == 1 ? "nbsvm-uni" : n == 2 ? "nbsvm-bi" : "nbsvm"; }

void run_train_nbsvm(const Ctx& ctx, NbsvmArgs a) {
  if (a.name.empty()) a.name = default_nbsvm_name(a.ngram);
  NbsvmConfig cfg;
  cfg.n_max = a.ngram;
  cfg.alpha = a.alpha;
  cfg.linear.l2 = a.l2;
  cfg.linear.workers = ctx.workers;
  if (a.loss == "logistic") {
    cfg.linear.loss = LinearLoss::Logistic;
  } else if (a.loss == "squared-hinge") {
    cfg.linear.loss = LinearLoss::SquaredHinge;
  } else {
    throw usage("--loss must be logistic or squared-hinge");
  }
  Stage stage(ctx, "train-nbsvm." + a.name,
              {{"alpha", fmt("%.17g", a.alpha)},
               {"l2", fmt("%.17g", a.l2)},
               {"loss", a.loss},
               {"ngram", std::to_string(a.ngram)},
               {"subset", std::to_string(a.subset)}});
  auto train = load_split(ctx, "train", a.subset);
  auto model = train_nbsvm(train, cfg);
  fs::path p = ctx.model(a.name + ".txt");
  save_nbsvm(p, model);
  stage.output(p);
  if (a.dump_features) {
    write_feature_dump(ctx.report(a.name + ".features.tsv"), model);
    stage.output(ctx.report(a.name + ".features.tsv"));
  }
  *ctx.out << a.name << " features " << model.space.size() << " l2 " << fmt("%.6g", model.classifier.l2) << "\n";
  stage.finish();
}

// ---------------------------------------------------------------- train-pv

struct PvArgs {
  std::size_t dim = 100;
  std::size_t window = 10;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::uint64_t min_count = 2;
  double lr = 0.05;
  std::string mode = "dbow";
  bool train_words = false;
  bool unlabeled = false;
  std::size_t subset = 0;
};

void run_train_pv(const Ctx& ctx, const PvArgs& a) {
  PvConfig cfg;
  cfg.dim = a.dim;
  cfg.window = a.window;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.min_count = a.min_count;
  cfg.lr_start = a.lr;
  cfg.infer_lr = a.lr;
  cfg.train_words = a.train_words;
  if (a.mode == "dbow") {
    cfg.mode = PvMode::Dbow;
  } else if (a.mode == "dm") {
    cfg.mode = PvMode::Dm;
  } else {
    throw usage("--mode must be dbow or dm");
  }
  Stage stage(ctx, "train-pv",
              {{"dim", std::to_string(a.dim)},
               {"epochs", std::to_string(a.epochs)},
               {"lr", fmt("%.17g", a.lr)},
               {"min_count", std::to_string(a.min_count)},
               {"mode", a.mode},
               {"seed", std::to_string(a.seed)},
               {"subset", std::to_string(a.subset)},
               {"train_words", a.train_words ? "1" : "0"},
               {"unlabeled", a.unlabeled ? "1" : "0"},
               {"window", std::to_string(a.window)}});
  auto docs = load_split(ctx, "train", a.subset);
  if (a.unlabeled) {
    auto unsup = read_token_cache(require(ctx.data("unsup")), Split::Train);
    if (a.subset > 0) unsup = cap_per_class(unsup, a.subset);
    docs.insert(docs.end(), unsup.begin(), unsup.end());
  }
  auto model = train_pv(docs, cfg);
  std::vector<Label> labels;
  for (const auto& d : docs) labels.push_back(d.label);
  LinearTrainConfig head;
  head.workers = ctx.workers;
  fit_pv_head(model, labels, head);
  fs::path p = ctx.model("pv.bin");
  save_pv_model(p, model);
  stage.output(p);
  if (!model.epoch_loss.empty()) *ctx.out << "pv final epoch loss " << fmt("%.6f", model.epoch_loss.back()) << "\n";
  stage.finish();
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string model;
  std::string split;
  double temperature = 1.0;
  std::size_t subset = 0;
};

std::vector<ScoreRecord> generative_records(const std::string& model_id, std::span<const Document> docs,
                                            const DocumentScorer& pos, const DocumentScorer& neg,
                                            double prior_log_odds, double temperature, unsigned workers) {
  std::vector<ScoreRecord> out(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t i) {
    ScoreRecord& r = out[i];
    r.id = docs[i].id;
    r.model = model_id;
    r.log_p_pos = pos.doc_logprob(docs[i].tokens);
    r.log_p_neg = neg.doc_logprob(docs[i].tokens);
    r.n_tokens = docs[i].tokens.size();
    r.prior_log_odds = prior_log_odds;
    r.p_pos = calibrate_generative(*r.log_p_pos, *r.log_p_neg, prior_log_odds, 0.0, docs[i].tokens.size() + 1,
                                   temperature);
  });
  return out;
}

double prior_from_meta(const std::map<std::string, std::string>& meta, const fs::path& p) {
  double n_pos = std::stod(meta_value(meta, "n_pos", p));
  double n_neg = std::stod(meta_value(meta, "n_neg", p));
  if (n_pos <= 0 || n_neg <= 0) throw std::runtime_error(p.string() + ": a class has no training documents");
  return std::log(n_pos / n_neg);
}

void run_score(const Ctx& ctx, const ScoreArgs& a) {
  parse_split(a.split);
  std::vector<fs::path> inputs;
  if (a.model == "ngram") {
    inputs = {ctx.model("ngram.pos.arpa"), ctx.model("ngram.neg.arpa"), ctx.model("ngram.meta")};
  } else if (a.model == "rnn") {
    inputs = {ctx.model("rnn.pos.bin"), ctx.model("rnn.neg.bin"), ctx.model("rnn.meta")};
  } else if (a.model == "pv") {
    inputs = {ctx.model("pv.bin")};
  } else if (a.model.rfind("nbsvm", 0) == 0) {
    inputs = {ctx.model(a.model + ".txt")};
  } else {
    throw usage("unknown model '" + a.model + "' (ngram, rnn, pv, nbsvm*)");
  }
  for (const auto& p : inputs) require(p);
  auto docs = load_split(ctx, a.split, a.subset);
  Stage stage(ctx, "score." + a.model + "." + a.split,
              {{"subset", std::to_string(a.subset)}, {"temperature", fmt("%.17g", a.temperature)}});

  std::vector<ScoreRecord> records;
  if (a.model == "ngram") {
    auto meta = read_meta(inputs[2]);
    auto pos = import_arpa(read_file(inputs[0]));
    auto neg = import_arpa(read_file(inputs[1]));
    if (meta_value(meta, "separate_vocab", inputs[2]) == "1") {
      double penalty = std::stod(meta_value(meta, "oov_penalty", inputs[2]));
      pos.set_oov_penalty(penalty);
      neg.set_oov_penalty(penalty);
    }
    records = generative_records(a.model, docs, pos, neg, prior_from_meta(meta, inputs[2]), a.temperature,
                                 ctx.workers);
  } else if (a.model == "rnn") {
    auto meta = read_meta(inputs[2]);
    auto pos = load_rnn_model(inputs[0]);
    auto neg = load_rnn_model(inputs[1]);
    records = generative_records(a.model, docs, pos, neg, prior_from_meta(meta, inputs[2]), a.temperature,
                                 ctx.workers);
  } else if (a.model == "pv") {
    auto model = load_pv_model(inputs[0]);
    auto vectors = infer_doc_vectors(model, docs, ctx.workers);
    std::vector<std::string> ids;
    for (const auto& d : docs) ids.push_back(d.id);
    records = pv_classify(model, vectors, ids, a.model);
  } else {
    records = score_nbsvm(load_nbsvm(inputs[0]), docs, a.model, ctx.workers);
  }
  fs::path out = ctx.scores(a.model, a.split);
  write_scores_jsonl(out, records);
  stage.output(out);
  auto labels = labels_of(docs);
  auto acc = score_accuracy(records, labels);
  if (acc.total > 0) print_accuracy(*ctx.out, acc);
  stage.finish();
}

// ---------------------------------------------------------------- ensemble

struct EnsembleArgs {
  std::string models = "rnn,pv,nbsvm";
  double step = 0.1;
  bool fixed_temperature = false;
};

/// Score tables over the requested models. Generative models get their
/// temperature tuned on validation scores unless disabled.
class ScoreLoader {
 public:
  ScoreLoader(const Ctx& ctx, bool tune) : ctx_(ctx), tune_(tune) {}

  ScoreTable table(std::span<const std::string> models, const std::string& split) {
    std::vector<std::vector<ScoreRecord>> per_model;
    for (const auto& m : models) per_model.push_back(records(m, split));
    return align_scores(per_model);
  }

  std::vector<ScoreRecord> records(const std::string& model, const std::string& split) {
    auto recs = read_scores(require(ctx_.scores(model, split)), model);
    for (auto& r : recs) r.model = model;
    if (!is_generative(recs)) return recs;
    return recalibrate(recs, temperature(model, recs, split));
  }

  const std::map<std::string, double>& temperatures() const { return temps_; }

 private:
  static bool is_generative(std::span<const ScoreRecord> recs) {
    return !recs.empty() && std::all_of(recs.begin(), recs.end(), [](const ScoreRecord& r) {
      return r.log_p_pos && r.log_p_neg && r.n_tokens;
    });
  }

  double temperature(const std::string& model, std::span<const ScoreRecord> recs, const std::string& split) {
    if (!tune_) return 1.0;
    auto it = temps_.find(model);
    if (it != temps_.end()) return it->second;
    std::vector<ScoreRecord> valid;
    if (split == "valid") {
      valid.assign(recs.begin(), recs.end());
    } else {
      valid = read_scores(require(ctx_.scores(model, "valid")), model);
    }
    double t = tune_temperature(valid, valid_labels());
    temps_[model] = t;
    return t;
  }

  const std::map<std::string, Label>& valid_labels() {
    if (!valid_labels_) valid_labels_ = read_labels(require(ctx_.data("valid")));
    return *valid_labels_;
  }

  const Ctx& ctx_;
  bool tune_;
  std::map<std::string, double> temps_;
  std::optional<std::map<std::string, Label>> valid_labels_;
};

std::vector<std::string> model_list(const std::string& s) {
  auto models = split_list(s);
  if (models.empty()) throw usage("--models is empty");
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (models[i] == models[j]) throw usage("--models lists " + models[i] + " twice");
  return models;
}

void write_temperatures(const fs::path& p, const std::map<std::string, double>& temps) {
  std::string text;
  for (const auto& [m, t] : temps) text += m + "=" + fmt("%.10g", t) + "\n";
  write_file(p, text);
}

std::map<std::string, double> read_temperatures(const fs::path& p) {
  std::map<std::string, double> out;
  if (!fs::exists(p)) return out;
  for (const auto& [k, v] : read_meta(p)) out[k] = std::stod(v);
  return out;
}

std::string weights_line(const EnsembleWeights& w) {
  std::string s;
  for (std::size_t k = 0; k < w.models.size(); ++k) s += (k ? " " : "") + w.models[k] + "=" + format_alpha(w.alpha(k));
  return s;
}

Settings ensemble_settings(const EnsembleArgs& a) {
  return {{"fixed_temperature", a.fixed_temperature ? "1" : "0"}, {"models", a.models}, {"step", fmt("%.17g", a.step)}};
}

void run_ensemble_search(const Ctx& ctx, const EnsembleArgs& a) {
  auto models = model_list(a.models);
  ScoreLoader loader(ctx, !a.fixed_temperature);
  auto valid = loader.table(models, "valid");
  auto valid_labels = read_labels(require(ctx.data("valid")));
  Stage stage(ctx, "ensemble-search", ensemble_settings(a));
  auto result = grid_search(valid, valid_labels, a.step, ctx.workers);
  write_weights(ctx.ensemble("weights.txt"), result.weights);
  write_temperatures(ctx.ensemble("temperatures.txt"), loader.temperatures());
  stage.output(ctx.ensemble("weights.txt"));
  stage.output(ctx.ensemble("temperatures.txt"));
  *ctx.out << "weights " << weights_line(result.weights) << "\n";
  *ctx.out << "valid_accuracy " << fmt("%.4f", result.accuracy()) << "\n";

  auto valid_recs = ensemble_records(valid, result.weights);
  write_scores_jsonl(ctx.scores("ensemble", "valid"), valid_recs);
  stage.output(ctx.scores("ensemble", "valid"));
  bool have_test = std::all_of(models.begin(), models.end(), [&](const std::string& m) {
    return fs::exists(ctx.scores(m, "test"));
  });
  if (have_test) {
    auto test = loader.table(models, "test");
    auto recs = ensemble_records(test, result.weights);
    write_scores_jsonl(ctx.scores("ensemble", "test"), recs);
    stage.output(ctx.scores("ensemble", "test"));
    if (fs::exists(ctx.data("test"))) {
      auto acc = score_accuracy(recs, read_labels(ctx.data("test")));
      *ctx.out << "test_accuracy " << fmt("%.4f", acc.accuracy()) << "\n";
    }
  }
  stage.finish();
}

void run_ablate(const Ctx& ctx, const EnsembleArgs& a) {
  auto models = model_list(a.models);
  if (models.size() < 2) throw usage("ablation needs at least two models");
  ScoreLoader loader(ctx, !a.fixed_temperature);
  auto valid = loader.table(models, "valid");
  auto test = loader.table(models, "test");
  auto valid_labels = read_labels(require(ctx.data("valid")));
  auto test_labels = read_labels(require(ctx.data("test")));
  Stage stage(ctx, "ablate", ensemble_settings(a));
  auto rows = ablate(valid, valid_labels, &test, &test_labels, a.step, ctx.workers);
  write_ablation_tsv(ctx.ensemble("ablation.tsv"), rows);
  stage.output(ctx.ensemble("ablation.tsv"));
  *ctx.out << read_file(ctx.ensemble("ablation.tsv"));
  stage.finish();
}

// ---------------------------------------------------------------- evaluate / inspect-errors

void run_evaluate(const Ctx& ctx, const std::string& scores_path, const std::string& labels_path) {
  auto records = read_scores(require(scores_path));
  auto labels = read_labels(require(labels_path));
  auto acc = score_accuracy(records, labels);
  if (acc.total == 0) throw std::runtime_error("no scored document has a label");
  print_accuracy(*ctx.out, acc);
}

struct InspectArgs {
  std::string split = "test";
  std::size_t limit = 0;
};

void run_inspect_errors(const Ctx& ctx, const InspectArgs& a) {
  parse_split(a.split);
  auto weights = read_weights(require(ctx.ensemble("weights.txt")));
  auto temps = read_temperatures(ctx.ensemble("temperatures.txt"));
  std::vector<std::vector<ScoreRecord>> per_model;
  for (const auto& m : weights.models) {
    auto recs = read_scores(require(ctx.scores(m, a.split)), m);
    for (auto& r : recs) r.model = m;
    if (auto it = temps.find(m); it != temps.end()) recs = recalibrate(recs, it->second);
    per_model.push_back(std::move(recs));
  }
  auto table = align_scores(per_model);
  auto docs = load_split(ctx, a.split, 0);
  Stage stage(ctx, "inspect-errors." + a.split, {{"limit", std::to_string(a.limit)}});
  std::map<std::string, std::string> texts;
  for (const auto& d : docs) texts[d.id] = joined(d.tokens);
  auto alpha = weights.alphas();
  std::vector<Label> preds(table.docs());
  std::vector<double> p(table.models.size());
  for (std::size_t i = 0; i < table.docs(); ++i) {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = table.p[k][i];
    preds[i] = combine(p, alpha).label;
  }
  auto errors = inspect_errors(table, preds, labels_of(docs), texts);
  if (a.limit > 0) {
    std::map<std::string, std::size_t> kept;
    std::erase_if(errors, [&](const ErrorEntry& e) { return kept[e.model]++ >= a.limit; });
  }
  fs::path out = ctx.report("errors." + a.split + ".tsv");
  write_errors_tsv(out, errors);
  stage.output(out);
  std::map<std::string, std::size_t> per;
  for (const auto& e : errors) ++per[e.model];
  for (const auto& m : table.models) *ctx.out << "fixed_by_ensemble " << m << " " << per[m] << "\n";
  stage.finish();
}

// ---------------------------------------------------------------- report

std::string display_name(const std::string& model) {
  static const std::map<std::string, std::string> names = {
      {"ngram", "N-gram"},       {"rnn", "RNN-LM"}, {"pv", "Sentence Vectors"}, {"nbsvm", "NB-SVM Trigram"},
      {"nbsvm-uni", "NB-SVM Unigram"}, {"nbsvm-bi", "NB-SVM Bigram"}};
  auto it = names.find(model);
  return it == names.end() ? model : it->second;
}

void run_report(const Ctx& ctx) {
  auto labels = read_labels(require(ctx.data("test")));
  Stage stage(ctx, "report", {});
  auto accuracy_of = [&](const std::string& model) -> std::optional<double> {
    fs::path p = ctx.scores(model, "test");
    if (!fs::exists(p)) return std::nullopt;
    auto acc = score_accuracy(read_scores(p, model), labels);
    return 100.0 * acc.accuracy();
  };
  using Rows = std::vector<std::pair<std::string, double>>;
  auto render = [&](const std::string& title, const std::string& file, const std::string& column, const Rows& rows) {
    std::string text = column + "\taccuracy\n";
    for (const auto& [name, acc] : rows) text += name + "\t" + fmt("%.2f", acc) + "\n";
    write_file(ctx.report(file), text);
    stage.output(ctx.report(file));
    *ctx.out << "# " << title << "\n" << text << "\n";
  };

  Rows t1, t2, t3;
  const std::pair<const char*, const char*> features[] = {
      {"nbsvm-uni", "Unigrams"}, {"nbsvm-bi", "Unigrams+Bigrams"}, {"nbsvm", "Unigrams+Bigrams+Trigrams"}};
  for (auto [model, name] : features)
    if (auto acc = accuracy_of(model)) t1.emplace_back(name, *acc);
  for (const char* model : {"ngram", "rnn", "pv", "nbsvm"})
    if (auto acc = accuracy_of(model)) t2.emplace_back(display_name(model), *acc);

  fs::path ablation = ctx.ensemble("ablation.tsv");
  if (fs::exists(ablation)) {
    std::istringstream in(read_file(ablation));
    std::string line;
    std::getline(in, line);
    std::optional<std::pair<std::string, double>> full;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, '\t');) f.push_back(cell);
      if (f.size() != 5 || f[4] == "-") continue;
      std::string name;
      std::string models = f[0];
      std::replace(models.begin(), models.end(), '+', ',');
      for (const auto& m : split_list(models)) name += (name.empty() ? "" : " + ") + display_name(m);
      if (f[1] == "-") {
        full = {{"All", std::stod(f[4])}};
      } else {
        t3.emplace_back(name, std::stod(f[4]));
      }
    }
    if (full) t3.push_back(*full);
  } else if (auto acc = accuracy_of("ensemble")) {
    t3.emplace_back("All", *acc);
  }
  if (t1.empty() && t2.empty() && t3.empty()) throw missing(ctx.root / "scores");
  render("NB-SVM features", "table1.tsv", "features", t1);
  render("Individual models", "table2.tsv", "method", t2);
  render("Ensembles", "table3.tsv", "ensemble", t3);
  stage.finish();
}

// ---------------------------------------------------------------- argument plumbing

/// Adds `--key=value` for config-file keys the chosen subcommand (or the top
/// level) accepts and the command line does not already set.
std::vector<std::string> apply_config(CLI::App& app, std::vector<std::string> args) {
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  auto kv = parse_key_values(read_file(config), config);

  CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size() && !sub; ++i)
    for (auto* s : app.get_subcommands([](CLI::App*) { return true; }))
      if (s->get_name() == args[i]) sub = s;
  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin() + 1, args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> top, tail;
  for (const auto& [key, value] : kv) {
    const std::string flag = "--" + key;
    if (key == "config" || given(flag)) continue;
    if (sub && sub->get_option_no_throw(flag)) {
      tail.push_back(flag + "=" + value);
    } else if (app.get_option_no_throw(flag)) {
      top.push_back(flag + "=" + value);
    } else {
      throw usage(config + ": unknown key '" + key + "'" + (sub ? " for " + sub->get_name() : ""));
    }
  }
  args.insert(args.begin() + 1, top.begin(), top.end());
  args.insert(args.end(), tail.begin(), tail.end());
  return args;
}

}  // namespace

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  if (!fs::exists(path)) return m;
  for (auto& [k, v] : parse_key_values(read_file(path), path.string())) m.values_[k] = v;
  return m;
}

void RunManifest::save(const fs::path& path) const {
  std::string text;
  for (const auto& [k, v] : values_) text += k + "=" + v + "\n";
  write_file(path, text);
}

const std::string* RunManifest::get(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

void RunManifest::clear_stage(const std::string& stage) {
  const std::string prefix = "stage." + stage + ".";
  std::erase_if(values_, [&](const auto& kv) { return kv.first.rfind(prefix, 0) == 0; });
}

int cli_dispatch(std::span<const std::string> argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentiment classifiers and their geometric-mean ensemble.", "senti"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string out_dir = "run";
  unsigned workers = 1;
  std::string config_path;
  app.add_option("--out-dir", out_dir, "Run directory")->capture_default_str();
  app.add_option("--workers", workers, "Threads per stage; 1 is the deterministic reference")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();
  app.add_option("--config", config_path, "key=value file; command-line flags win");

  PrepareArgs prep;
  auto* c_prepare = app.add_subcommand("prepare", "Tokenize an IMDB directory into train/valid/test caches");
  c_prepare->add_option("imdb_dir", prep.imdb_dir, "Directory with train/{pos,neg} and test/{pos,neg}")->required();
  c_prepare->add_option("--valid-fraction", prep.valid_fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c_prepare->add_option("--seed", prep.seed)->capture_default_str();
  c_prepare->add_option("--subset", prep.subset, "Documents per class and split (0 keeps all)")->capture_default_str();
  c_prepare->add_flag("--unlabeled", prep.unlabeled, "Also cache train/unsup for paragraph vectors");

  NgramArgs ng;
  auto* c_ngram = app.add_subcommand("train-ngram", "Per-class Kneser-Ney language models");
  c_ngram->add_option("--order", ng.order)->capture_default_str();
  c_ngram->add_option("--subset", ng.subset)->capture_default_str();
  c_ngram->add_option("--min-count", ng.min_count)->check(CLI::PositiveNumber)->capture_default_str();
  c_ngram->add_flag("--separate-vocab", ng.separate_vocab, "One vocabulary per class with an OOV penalty");
  c_ngram->add_option("--oov-penalty", ng.oov_penalty, "Log penalty (nats) per unknown token")->capture_default_str();

  RnnArgs rnn;
  auto* c_rnn = app.add_subcommand("train-rnn", "Per-class recurrent language models");
  c_rnn->add_option("--hidden", rnn.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  c_rnn->add_option("--epochs", rnn.epochs)->capture_default_str();
  c_rnn->add_option("--vocab-cap", rnn.vocab_cap)->check(CLI::PositiveNumber)->capture_default_str();
  c_rnn->add_option("--truncation", rnn.truncation)->check(CLI::PositiveNumber)->capture_default_str();
  c_rnn->add_option("--lr", rnn.lr)->check(CLI::PositiveNumber)->capture_default_str();
  c_rnn->add_option("--clip", rnn.clip)->check(CLI::PositiveNumber)->capture_default_str();
  c_rnn->add_option("--seed", rnn.seed)->capture_default_str();
  c_rnn->add_option("--subset", rnn.subset)->capture_default_str();

  NbsvmArgs nb;
  auto* c_nbsvm = app.add_subcommand("train-nbsvm", "Log-count-ratio linear classifier");
  c_nbsvm->add_option("--ngram", nb.ngram, "Largest n-gram order")->check(CLI::Range(1, 3))->capture_default_str();
  c_nbsvm->add_option("--alpha", nb.alpha, "Count smoothing")->check(CLI::PositiveNumber)->capture_default_str();
  c_nbsvm->add_option("--l2", nb.l2, "L2 strength; negative means 1/n")->capture_default_str();
  c_nbsvm->add_option("--loss", nb.loss, "logistic or squared-hinge")->capture_default_str();
  c_nbsvm->add_option("--name", nb.name, "Model id (default nbsvm-uni, nbsvm-bi or nbsvm)");
  c_nbsvm->add_option("--subset", nb.subset)->capture_default_str();
  c_nbsvm->add_flag("--dump-features", nb.dump_features, "Write grams sorted by |r|");

  PvArgs pv;
  auto* c_pv = app.add_subcommand("train-pv", "Paragraph vectors plus a logistic head");
  c_pv->add_option("--dim", pv.dim)->check(CLI::PositiveNumber)->capture_default_str();
  c_pv->add_option("--window", pv.window)->check(CLI::PositiveNumber)->capture_default_str();
  c_pv->add_option("--epochs", pv.epochs)->capture_default_str();
  c_pv->add_option("--seed", pv.seed)->capture_default_str();
  c_pv->add_option("--min-count", pv.min_count)->check(CLI::PositiveNumber)->capture_default_str();
  c_pv->add_option("--lr", pv.lr)->check(CLI::PositiveNumber)->capture_default_str();
  c_pv->add_option("--mode", pv.mode, "dbow or dm")->capture_default_str();
  c_pv->add_flag("--train-words", pv.train_words, "Also train word vectors (skip-gram)");
  c_pv->add_flag("--unlabeled", pv.unlabeled, "Add the cached unlabeled reviews to vector training");
  c_pv->add_option("--subset", pv.subset)->capture_default_str();

  ScoreArgs sc;
  auto* c_score = app.add_subcommand("score", "Write p(positive) for every document of a split");
  c_score->add_option("model", sc.model, "ngram, rnn, pv or an nbsvm model id")->required();
  c_score->add_option("split", sc.split, "train, valid or test")->required();
  c_score->add_option("--temperature", sc.temperature, "Generative calibration temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_score->add_option("--subset", sc.subset)->capture_default_str();

  EnsembleArgs ens;
  auto add_ensemble_flags = [&](CLI::App* c) {
    c->add_option("--models", ens.models, "Comma-separated model ids")->capture_default_str();
    c->add_option("--step", ens.step, "Grid step")->capture_default_str();
    c->add_flag("--fixed-temperature", ens.fixed_temperature, "Keep generative scores at temperature 1");
  };
  auto* c_search = app.add_subcommand("ensemble-search", "Grid-search ensemble weights on validation scores");
  add_ensemble_flags(c_search);
  auto* c_ablate = app.add_subcommand("ablate", "Leave-one-model-out ensembles");
  add_ensemble_flags(c_ablate);

  std::string eval_scores, eval_labels;
  auto* c_eval = app.add_subcommand("evaluate", "Accuracy of a score file against labels");
  c_eval->add_option("scores", eval_scores)->required();
  c_eval->add_option("labels", eval_labels, "Label file or token cache")->required();

  InspectArgs insp;
  auto* c_inspect = app.add_subcommand("inspect-errors", "Documents a single model misses and the ensemble fixes");
  c_inspect->add_option("--split", insp.split)->capture_default_str();
  c_inspect->add_option("--limit", insp.limit, "Rows per model (0 keeps all)")->capture_default_str();

  auto* c_report = app.add_subcommand("report", "Render accuracy tables from stored scores");

  auto fail = [&](int code, const std::string& kind, const std::string& detail) {
    err << "error code=" << code << " kind=" << kind << " detail=" << one_line(detail) << "\n";
    return code;
  };

  std::vector<std::string> args(argv.begin(), argv.end());
  if (args.empty()) args.push_back("senti");
  try {
    for (std::size_t i = 1; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a == "--out-dir" || a == "--workers" || a == "--config") {
        ++i;
        continue;
      }
      if (a.empty() || a[0] == '-') continue;
      if (!app.get_subcommand_no_throw(a)) throw usage("unknown subcommand '" + a + "'");
      break;
    }
    args = apply_config(app, args);
    std::vector<const char*> raw;
    for (const auto& a : args) raw.push_back(a.c_str());
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    CLI::App* shown = &app;
    for (auto* s : app.get_subcommands()) shown = s;
    err << shown->help();
    return fail(kExitUsage, "usage", e.what());
  } catch (const CliError& e) {
    err << app.help();
    return fail(e.code(), e.kind(), e.what());
  }

  Ctx ctx;
  ctx.root = out_dir;
  ctx.workers = workers;
  ctx.out = &out;
  ctx.err = &err;
  try {
    if (c_prepare->parsed()) run_prepare(ctx, prep);
    else if (c_ngram->parsed()) run_train_ngram(ctx, ng);
    else if (c_rnn->parsed()) run_train_rnn(ctx, rnn);
    else if (c_nbsvm->parsed()) run_train_nbsvm(ctx, nb);
    else if (c_pv->parsed()) run_train_pv(ctx, pv);
    else if (c_score->parsed()) run_score(ctx, sc);
    else if (c_search->parsed()) run_ensemble_search(ctx, ens);
    else if (c_ablate->parsed()) run_ablate(ctx, ens);
    else if (c_eval->parsed()) run_evaluate(ctx, eval_scores, eval_labels);
    else if (c_inspect->parsed()) run_inspect_errors(ctx, insp);
    else if (c_report->parsed()) run_report(ctx);
  } catch (const CliError& e) {
    if (e.code() == kExitUsage) {
      for (auto* s : app.get_subcommands()) err << s->help();
    }
    return fail(e.code(), e.kind(), e.what());
  } catch (const CorpusError& e) {
    return fail(kExitFailure, "corpus", e.what());
  } catch (const ScoreFileError& e) {
    return fail(kExitFailure, "scores", e.what());
  } catch (const EnsembleError& e) {
    return fail(kExitFailure, "ensemble", e.what());
  } catch (const RnnDivergedError& e) {
    return fail(kExitFailure, "diverged", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "runtime", e.what());
  }
  return kExitOk;
}

}  // namespace senti

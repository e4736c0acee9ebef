#include "senti/scores.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace senti {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScoreFileError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScoreFileError("cannot read " + path.string());
  return in;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double clamp_probability(double p) {
  if (std::isnan(p)) throw ScoreFileError("probability is NaN");
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

void write_scores_jsonl(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["model"] = r.model;
    j["p_pos"] = r.p_pos;
    if (r.log_p_pos) j["log_p_pos"] = *r.log_p_pos;
    if (r.log_p_neg) j["log_p_neg"] = *r.log_p_neg;
    if (r.n_tokens) j["n_tokens"] = *r.n_tokens;
    if (r.prior_log_odds) j["prior_log_odds"] = *r.prior_log_odds;
    out << j.dump() << '\n';
  }
}

std::vector<ScoreRecord> read_scores_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<ScoreRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      auto j = nlohmann::json::parse(line);
      ScoreRecord r;
      r.id = j.at("id").get<std::string>();
      r.model = j.at("model").get<std::string>();
      r.p_pos = clamp_probability(j.at("p_pos").get<double>());
      if (j.contains("log_p_pos")) r.log_p_pos = j["log_p_pos"].get<double>();
      if (j.contains("log_p_neg")) r.log_p_neg = j["log_p_neg"].get<double>();
      if (j.contains("n_tokens")) r.n_tokens = j["n_tokens"].get<std::size_t>();
      if (j.contains("prior_log_odds")) r.prior_log_odds = j["prior_log_odds"].get<double>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ScoreFileError(where + e.what());
    } catch (const ScoreFileError& e) {
      throw ScoreFileError(where + e.what());
    }
  }
  return records;
}

void write_scores_tsv(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  auto out = open_out(path);
  for (const auto& r : records) out << r.id << '\t' << fmt_double(r.p_pos) << '\n';
}

std::vector<ScoreRecord> read_scores_tsv(const std::filesystem::path& path, const std::string& model) {
  auto in = open_in(path);
  std::vector<ScoreRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ScoreFileError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>p_pos");
    ScoreRecord r;
    r.id = line.substr(0, tab);
    r.model = model;
    try {
      r.p_pos = clamp_probability(std::stod(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw ScoreFileError(path.string() + ":" + std::to_string(lineno) + ": bad probability");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path, const std::string& model) {
  if (path.extension() == ".tsv") return read_scores_tsv(path, model.empty() ? path.stem().string() : model);
  return read_scores_jsonl(path);
}

void write_labels(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = open_out(path);
  for (const auto& d : docs)
    if (d.label != Label::Unlabeled) out << d.id << '\t' << to_string(d.label) << '\n';
}

std::map<std::string, Label> read_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::map<std::string, Label> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    // Accept both label files (id, label) and token caches (id, label, tokens).
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ScoreFileError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>label");
    auto end = line.find('\t', tab + 1);
    try {
      labels[line.substr(0, tab)] = parse_label(line.substr(tab + 1, end == std::string::npos ? end : end - tab - 1));
    } catch (const std::exception& e) {
      throw ScoreFileError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return labels;
}

AccuracyResult score_accuracy(std::span<const ScoreRecord> records, const std::map<std::string, Label>& labels) {
  AccuracyResult acc;
  for (const auto& r : records) {
    auto it = labels.find(r.id);
    if (it == labels.end()) throw ScoreFileError("no label for document " + r.id);
    if (it->second == Label::Unlabeled) continue;
    Label predicted = r.p_pos > 0.5 ? Label::Positive : Label::Negative;
    acc.correct += predicted == it->second;
    ++acc.total;
  }
  return acc;
}

}  // namespace senti

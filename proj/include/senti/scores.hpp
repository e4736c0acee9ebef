#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "senti/corpus.hpp"

namespace senti {

inline constexpr double kProbFloor = 1e-9;

/// Clamps into [1e-9, 1 - 1e-9]. NaN is rejected.
double clamp_probability(double p);

struct ScoreRecord {
  std::string id;
  std::string model;
  double p_pos = 0.5;
  // Generative models only.
  std::optional<double> log_p_pos;
  std::optional<double> log_p_neg;
  std::optional<std::size_t> n_tokens;
  std::optional<double> prior_log_odds;
};

class ScoreFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON object per line: {"id", "model", "p_pos"} plus the optional fields when set.
void write_scores_jsonl(const std::filesystem::path& path, std::span<const ScoreRecord> records);
/// p_pos is clamped on the way in. Errors carry the line number.
std::vector<ScoreRecord> read_scores_jsonl(const std::filesystem::path& path);

/// `id<TAB>p_pos`, full double precision.
void write_scores_tsv(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores_tsv(const std::filesystem::path& path, const std::string& model);

/// Either format, chosen by extension (.jsonl / .tsv).
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path, const std::string& model = "");

/// `id<TAB>positive|negative` for every labeled document.
void write_labels(const std::filesystem::path& path, std::span<const Document> docs);
std::map<std::string, Label> read_labels(const std::filesystem::path& path);

struct AccuracyResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Thresholds p_pos at 0.5 (ties negative). Every record must have a label.
AccuracyResult score_accuracy(std::span<const ScoreRecord> records, const std::map<std::string, Label>& labels);

}  // namespace senti

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "senti/corpus.hpp"
#include "senti/scores.hpp"

namespace senti {

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-token log-likelihood ratio plus prior log-odds, divided by the
/// temperature and squashed; clamped like every ingested probability.
double calibrate_generative(double log_p_pos, double log_p_neg, double log_prior_pos, double log_prior_neg,
                            std::size_t doc_length, double temperature = 1.0);

/// Recomputes p_pos of generative records at a new temperature. Records
/// without the raw fields are rejected.
std::vector<ScoreRecord> recalibrate(std::span<const ScoreRecord> records, double temperature);

/// Temperature in [0.01, 100] minimizing mean log-loss; the loss is convex in
/// 1/T, so a golden-section search finds the minimum.
double tune_temperature(std::span<const ScoreRecord> records, const std::map<std::string, Label>& labels);

/// Scores of several models over one shared, ordered set of documents.
struct ScoreTable {
  std::vector<std::string> models;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> p;  // p[model][doc]

  std::size_t docs() const { return ids.size(); }
};

/// Aligns per-model records by document id (order of the first model).
/// Every model must cover exactly the same ids.
ScoreTable align_scores(std::span<const std::vector<ScoreRecord>> per_model);

/// Keeps the named models, in the given order.
ScoreTable select_models(const ScoreTable& table, std::span<const std::string> models);

struct EnsembleWeights {
  std::vector<std::string> models;
  std::vector<int> ticks;  // alpha_k = ticks[k] * step
  double step = 0.1;

  double alpha(std::size_t k) const { return ticks[k] * step; }
  std::vector<double> alphas() const;
};

struct Combined {
  Label label = Label::Negative;
  double s_pos = 0;  // sum alpha_k ln p_k
  double s_neg = 0;  // sum alpha_k ln(1 - p_k)
  /// Normalized geometric-mean posterior, sigmoid(s_pos - s_neg).
  double p_pos = 0.5;
};

/// Positive iff s_pos > s_neg.
Combined combine(std::span<const double> p, std::span<const double> alpha);

/// Looks up each weighted model's score for one document; a missing score for
/// a model with alpha > 0 is an error naming both.
Combined combine(const std::string& doc_id, const std::map<std::string, double>& scores,
                 const EnsembleWeights& weights);

/// Ensemble score records for every document of the table.
std::vector<ScoreRecord> ensemble_records(const ScoreTable& table, const EnsembleWeights& weights,
                                          const std::string& model_id = "ensemble");

struct GridResult {
  EnsembleWeights weights;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Correct decisions of a weighted ensemble against labels.
std::size_t count_correct(const ScoreTable& table, std::span<const double> alpha, std::span<const Label> labels);

/// Labels aligned to table.ids; every document needs a label.
std::vector<Label> aligned_labels(const ScoreTable& table, const std::map<std::string, Label>& labels);

/// Exhaustive search over {0, step, ..., 1}^K minus the all-zero tuple. The
/// first tuple in lexicographic tick order with the most correct decisions wins.
GridResult grid_search(const ScoreTable& valid, const std::map<std::string, Label>& labels, double step = 0.1,
                       unsigned workers = 1);

struct AblationRow {
  std::vector<std::string> models;
  std::string removed;  // empty for the full ensemble
  GridResult valid;
  std::size_t test_correct = 0;
  std::size_t test_total = 0;
};

/// Full-set row followed by one leave-one-out row per model (K + 1 rows).
/// Weights are re-searched for every subset. Test accuracy is filled when a
/// test table is given.
std::vector<AblationRow> ablate(const ScoreTable& valid, const std::map<std::string, Label>& valid_labels,
                                const ScoreTable* test, const std::map<std::string, Label>* test_labels,
                                double step = 0.1, unsigned workers = 1);

struct ErrorEntry {
  std::string model;
  std::string id;
  Label label = Label::Negative;
  std::string excerpt;
};

/// Text cut to at most max_bytes without splitting a UTF-8 sequence; tabs and newlines become spaces.
std::string excerpt(std::string_view text, std::size_t max_bytes = 200);

/// Documents each single model gets wrong (p_pos > 0.5 rule) and the ensemble gets right.
std::vector<ErrorEntry> inspect_errors(const ScoreTable& table, std::span<const Label> ensemble_predictions,
                                       const std::map<std::string, Label>& labels,
                                       const std::map<std::string, std::string>& texts);

/// `model=alpha` lines.
void write_weights(const std::filesystem::path& path, const EnsembleWeights& w);
EnsembleWeights read_weights(const std::filesystem::path& path, double step = 0.1);

void write_ablation_tsv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_errors_tsv(const std::filesystem::path& path, std::span<const ErrorEntry> errors);

std::string format_alpha(double a);

}  // namespace senti

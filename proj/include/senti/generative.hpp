#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>

#include "senti/corpus.hpp"

namespace senti {

/// A class-conditional document likelihood, p(doc | class).
class DocumentScorer {
 public:
  virtual ~DocumentScorer() = default;
  /// Natural-log probability of the document followed by the end marker.
  virtual double doc_logprob(std::span<const std::string> tokens) const = 0;
};

struct BayesDecision {
  Label label = Label::Negative;
  double log_p_pos = 0;
  double log_p_neg = 0;
  double log_ratio = 0;
};

/// Positive iff the log Bayes ratio is strictly positive; ties go negative.
inline BayesDecision bayes_decide(double log_p_pos, double log_p_neg, double log_prior_pos,
                                  double log_prior_neg) {
  BayesDecision d;
  d.log_p_pos = log_p_pos;
  d.log_p_neg = log_p_neg;
  d.log_ratio = (log_p_pos - log_p_neg) + (log_prior_pos - log_prior_neg);
  d.label = d.log_ratio > 0 ? Label::Positive : Label::Negative;
  return d;
}

/// Pair of class-conditional language models combined through Bayes' rule.
class GenerativeClassifier {
 public:
  GenerativeClassifier(std::shared_ptr<const DocumentScorer> pos, std::shared_ptr<const DocumentScorer> neg,
                       double log_prior_pos, double log_prior_neg);

  /// Priors from class counts.
  static GenerativeClassifier with_class_counts(std::shared_ptr<const DocumentScorer> pos,
                                                std::shared_ptr<const DocumentScorer> neg,
                                                std::size_t n_pos, std::size_t n_neg);

  BayesDecision classify(std::span<const std::string> tokens) const;

  GenerativeClassifier swapped() const { return {neg_, pos_, log_prior_neg_, log_prior_pos_}; }

  double log_prior_pos() const { return log_prior_pos_; }
  double log_prior_neg() const { return log_prior_neg_; }
  const DocumentScorer& pos_model() const { return *pos_; }
  const DocumentScorer& neg_model() const { return *neg_; }

 private:
  std::shared_ptr<const DocumentScorer> pos_;
  std::shared_ptr<const DocumentScorer> neg_;
  double log_prior_pos_;
  double log_prior_neg_;
};

}  // namespace senti

#include "senti/generative.hpp"

#include <stdexcept>

namespace senti {

GenerativeClassifier::GenerativeClassifier(std::shared_ptr<const DocumentScorer> pos,
                                           std::shared_ptr<const DocumentScorer> neg, double log_prior_pos,
                                           double log_prior_neg)
    : pos_(std::move(pos)), neg_(std::move(neg)), log_prior_pos_(log_prior_pos), log_prior_neg_(log_prior_neg) {
  if (!pos_ || !neg_) throw std::invalid_argument("GenerativeClassifier: null model");
  double total = std::exp(log_prior_pos_) + std::exp(log_prior_neg_);
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GenerativeClassifier: priors must sum to 1");
}

GenerativeClassifier GenerativeClassifier::with_class_counts(std::shared_ptr<const DocumentScorer> pos,
                                                             std::shared_ptr<const DocumentScorer> neg,
                                                             std::size_t n_pos, std::size_t n_neg) {
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("GenerativeClassifier: empty class");
  double total = static_cast<double>(n_pos + n_neg);
  return {std::move(pos), std::move(neg), std::log(static_cast<double>(n_pos) / total),
          std::log1p(-static_cast<double>(n_pos) / total)};
}

BayesDecision GenerativeClassifier::classify(std::span<const std::string> tokens) const {
  return bayes_decide(pos_->doc_logprob(tokens), neg_->doc_logprob(tokens), log_prior_pos_, log_prior_neg_);
}

}  // namespace senti

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "senti/corpus.hpp"
#include "senti/generative.hpp"

namespace senti {

inline constexpr std::size_t kMaxNgramOrder = 6;
inline constexpr unsigned kGramIdBits = 21;
inline constexpr std::uint32_t kMaxGramVocab = (1u << kGramIdBits) - 1;

/// Up to kMaxNgramOrder token ids packed 21 bits each into 128 bits.
struct PackedGram {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  static PackedGram pack(std::span<const std::uint32_t> ids);
  std::uint32_t at(std::size_t i) const;
  bool operator==(const PackedGram&) const = default;
};

struct PackedGramHash {
  std::size_t operator()(const PackedGram& g) const noexcept {
    std::uint64_t h = g.lo * 0x9e3779b97f4a7c15ULL ^ (g.hi + 0x632be59bd9b4e019ULL);
    h ^= h >> 29;
    h *= 0xbf58476d1ce4e5b9ULL;
    return static_cast<std::size_t>(h ^ (h >> 32));
  }
};

class NgramError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact k-gram counts for k = 1..order. A k-gram is counted once for every
/// predicted position (document tokens and the end marker) with its k-1 preceding
/// tokens, where the document is left-padded with order-1 start markers.
class NGramCountTable {
 public:
  using Map = std::unordered_map<PackedGram, std::uint64_t, PackedGramHash>;

  explicit NGramCountTable(std::size_t order);

  std::size_t order() const { return tables_.size(); }
  void add_document(std::span<const std::uint32_t> ids);
  void merge(const NGramCountTable& other);

  std::uint64_t count(std::span<const std::uint32_t> gram) const;
  const Map& table(std::size_t k) const { return tables_.at(k - 1); }
  bool empty() const { return tables_.empty() || tables_[0].empty(); }

  /// Number of distinct tokens v with count(v + gram) > 0, for |gram| < order.
  std::uint64_t continuation_count(std::span<const std::uint32_t> gram) const;

 private:
  std::vector<Map> tables_;
};

NGramCountTable count_ngrams(std::span<const Document> docs, std::size_t order, const Vocabulary& vocab,
                             unsigned workers = 1);
NGramCountTable count_ngrams(std::span<const std::vector<std::uint32_t>> docs, std::size_t order,
                             unsigned workers = 1);

struct Discounts {
  double d1 = 0.5;
  double d2 = 1.0;
  double d3plus = 1.5;
  std::array<std::uint64_t, 4> count_of_counts{};
  bool fallback = false;

  double operator()(std::uint64_t count) const {
    if (count == 0) return 0.0;
    if (count == 1) return d1;
    if (count == 2) return d2;
    return d3plus;
  }
};

/// Modified Kneser-Ney discounts from count-of-counts n1..n4; falls back to
/// (0.5, 1.0, 1.5) when a statistic is zero or a discount leaves its range.
Discounts modified_kn_discounts(const std::array<std::uint64_t, 4>& n);

/// Back-off n-gram model. Probabilities are stored in the interpolated form, so
/// p(w|h) = stored(h w) when present, else bow(h) * p(w|h') recursively.
class KneserNeyModel : public DocumentScorer {
 public:
  struct Entry {
    double log_prob = 0;  // nats; -inf for context-only entries
    double log_bow = 0;   // nats
    bool has_bow = false;
  };
  using Map = std::unordered_map<PackedGram, Entry, PackedGramHash>;

  KneserNeyModel(std::shared_ptr<const Vocabulary> vocab, std::size_t order);

  std::size_t order() const { return tables_.size(); }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const Map& table(std::size_t k) const { return tables_.at(k - 1); }
  Map& mutable_table(std::size_t k) { return tables_.at(k - 1); }
  const std::vector<Discounts>& discounts() const { return discounts_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Log penalty (nats) added for every unknown-marker token; disabled by default.
  void set_oov_penalty(std::optional<double> penalty) { oov_penalty_ = penalty; }
  std::optional<double> oov_penalty() const { return oov_penalty_; }

  /// ln p(word | context); only the last order-1 context ids are used.
  double log_prob(std::span<const std::uint32_t> context, std::uint32_t word) const;

  /// Sum of ln p over the document and end marker, contexts padded with <s>.
  double doc_logprob_ids(std::span<const std::uint32_t> ids) const;
  double doc_logprob(std::span<const std::string> tokens) const override;

 private:
  friend KneserNeyModel estimate_kneser_ney(const NGramCountTable&, std::shared_ptr<const Vocabulary>);

  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<Map> tables_;
  std::vector<Discounts> discounts_;
  std::vector<std::string> warnings_;
  std::optional<double> oov_penalty_;
};

/// Interpolated modified Kneser-Ney. The highest order and grams beginning
/// with <s> use raw counts; other lower orders use continuation counts. The
/// unigram level interpolates with the uniform distribution over every
/// vocabulary entry except <s>.
KneserNeyModel estimate_kneser_ney(const NGramCountTable& counts, std::shared_ptr<const Vocabulary> vocab);

/// ARPA text format with base-10 log probabilities.
std::string export_arpa(const KneserNeyModel& model);
KneserNeyModel import_arpa(std::string_view text);

class ArpaParseError : public NgramError {
 public:
  ArpaParseError(std::size_t line, const std::string& what)
      : NgramError("ARPA line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace senti

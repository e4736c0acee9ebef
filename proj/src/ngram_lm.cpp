#include "senti/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "senti/util.hpp"

namespace senti {

namespace {

constexpr std::uint64_t kIdMask = (std::uint64_t{1} << kGramIdBits) - 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// ln(10^-99): what ARPA readers conventionally use for "probability zero".
const double kFloorLogProb = -99.0 * std::log(10.0);

struct ContextStats {
  std::uint64_t total = 0;
  std::uint64_t n1 = 0;
  std::uint64_t n2 = 0;
  std::uint64_t n3plus = 0;

  void add(std::uint64_t a) {
    total += a;
    if (a == 1) ++n1;
    else if (a == 2) ++n2;
    else if (a >= 3) ++n3plus;
  }

  double gamma(const Discounts& d) const {
    return (d.d1 * static_cast<double>(n1) + d.d2 * static_cast<double>(n2) +
            d.d3plus * static_cast<double>(n3plus)) /
           static_cast<double>(total);
  }
};

}  // namespace

PackedGram PackedGram::pack(std::span<const std::uint32_t> ids) {
  PackedGram g;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::uint64_t v = ids[i] & kIdMask;
    if (i < 3) g.lo |= v << (i * kGramIdBits);
    else g.hi |= v << ((i - 3) * kGramIdBits);
  }
  return g;
}

std::uint32_t PackedGram::at(std::size_t i) const {
  if (i < 3) return static_cast<std::uint32_t>((lo >> (i * kGramIdBits)) & kIdMask);
  return static_cast<std::uint32_t>((hi >> ((i - 3) * kGramIdBits)) & kIdMask);
}

NGramCountTable::NGramCountTable(std::size_t order) {
  if (order < 1) throw NgramError("n-gram order must be >= 1");
  if (order > kMaxNgramOrder) throw NgramError("n-gram order must be <= " + std::to_string(kMaxNgramOrder));
  tables_.resize(order);
}

void NGramCountTable::add_document(std::span<const std::uint32_t> ids) {
  const std::size_t n = order();
  std::vector<std::uint32_t> padded(n - 1, Vocabulary::kBos);
  padded.insert(padded.end(), ids.begin(), ids.end());
  padded.push_back(Vocabulary::kEos);
  for (std::uint32_t id : padded)
    if (id > kMaxGramVocab) throw NgramError("token id exceeds packed gram capacity");
  for (std::size_t pos = n - 1; pos < padded.size(); ++pos) {
    for (std::size_t k = 1; k <= n; ++k) {
      auto gram = std::span<const std::uint32_t>(padded).subspan(pos + 1 - k, k);
      ++tables_[k - 1][PackedGram::pack(gram)];
    }
  }
}

void NGramCountTable::merge(const NGramCountTable& other) {
  if (other.order() != order()) throw NgramError("cannot merge count tables of different order");
  for (std::size_t k = 0; k < tables_.size(); ++k)
    for (const auto& [g, c] : other.tables_[k]) tables_[k][g] += c;
}

std::uint64_t NGramCountTable::count(std::span<const std::uint32_t> gram) const {
  if (gram.empty() || gram.size() > order()) return 0;
  const auto& t = tables_[gram.size() - 1];
  auto it = t.find(PackedGram::pack(gram));
  return it == t.end() ? 0 : it->second;
}

std::uint64_t NGramCountTable::continuation_count(std::span<const std::uint32_t> gram) const {
  if (gram.empty() || gram.size() >= order()) return 0;
  std::uint64_t n = 0;
  const std::size_t k = gram.size();
  for (const auto& [g, c] : tables_[k]) {
    bool match = true;
    for (std::size_t i = 0; i < k && match; ++i) match = g.at(i + 1) == gram[i];
    if (match) ++n;
  }
  return n;
}

NGramCountTable count_ngrams(std::span<const std::vector<std::uint32_t>> docs, std::size_t order,
                             unsigned workers) {
  NGramCountTable total(order);
  if (workers <= 1) {
    for (const auto& d : docs) total.add_document(d);
    return total;
  }
  std::vector<NGramCountTable> partial(workers, NGramCountTable(order));
  parallel_for(workers, workers, [&](std::size_t w) {
    for (std::size_t i = w; i < docs.size(); i += workers) partial[w].add_document(docs[i]);
  });
  for (const auto& p : partial) total.merge(p);
  return total;
}

NGramCountTable count_ngrams(std::span<const Document> docs, std::size_t order, const Vocabulary& vocab,
                             unsigned workers) {
  std::vector<std::vector<std::uint32_t>> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(vocab.encode(d.tokens));
  return count_ngrams(ids, order, workers);
}

Discounts modified_kn_discounts(const std::array<std::uint64_t, 4>& n) {
  Discounts d;
  d.count_of_counts = n;
  if (n[0] == 0 || n[1] == 0 || n[2] == 0 || n[3] == 0) {
    d.fallback = true;
    return d;
  }
  const double n1 = static_cast<double>(n[0]), n2 = static_cast<double>(n[1]);
  const double n3 = static_cast<double>(n[2]), n4 = static_cast<double>(n[3]);
  const double y = n1 / (n1 + 2 * n2);
  Discounts out;
  out.count_of_counts = n;
  out.d1 = 1 - 2 * y * n2 / n1;
  out.d2 = 2 - 3 * y * n3 / n2;
  out.d3plus = 3 - 4 * y * n4 / n3;
  // Discounts must stay positive and below their bucket's smallest count.
  if (!(out.d1 > 0 && out.d1 <= 1 && out.d2 > 0 && out.d2 <= 2 && out.d3plus > 0 && out.d3plus <= 3)) {
    d.fallback = true;
    return d;
  }
  return out;
}

KneserNeyModel::KneserNeyModel(std::shared_ptr<const Vocabulary> vocab, std::size_t order)
    : vocab_(std::move(vocab)) {
  if (!vocab_) throw NgramError("KneserNeyModel: null vocabulary");
  if (order < 1 || order > kMaxNgramOrder) throw NgramError("KneserNeyModel: invalid order");
  if (vocab_->size() > kMaxGramVocab) throw NgramError("vocabulary too large for packed grams");
  tables_.resize(order);
}

double KneserNeyModel::log_prob(std::span<const std::uint32_t> context, std::uint32_t word) const {
  const std::size_t n = std::min(context.size(), order() - 1);
  context = context.last(n);
  std::array<std::uint32_t, kMaxNgramOrder> buf{};
  double bow = 0;
  for (std::size_t len = n;; --len) {
    auto ctx = context.last(len);
    std::copy(ctx.begin(), ctx.end(), buf.begin());
    buf[len] = word;
    const auto& t = tables_[len];
    auto it = t.find(PackedGram::pack(std::span<const std::uint32_t>(buf.data(), len + 1)));
    if (it != t.end() && it->second.log_prob != kNegInf) return bow + it->second.log_prob;
    if (len == 0) break;
    const auto& ct = tables_[len - 1];
    auto c = ct.find(PackedGram::pack(ctx));
    if (c != ct.end() && c->second.has_bow) bow += c->second.log_bow;
  }
  return bow + kFloorLogProb;
}

double KneserNeyModel::doc_logprob_ids(std::span<const std::uint32_t> ids) const {
  const std::size_t keep = order() - 1;
  std::vector<std::uint32_t> history(keep, Vocabulary::kBos);
  history.reserve(keep + ids.size() + 1);
  double total = 0;
  for (std::uint32_t id : ids) {
    total += log_prob(history, id);
    if (id == Vocabulary::kUnk && oov_penalty_) total += *oov_penalty_;
    history.push_back(id);
  }
  return total + log_prob(history, Vocabulary::kEos);
}

double KneserNeyModel::doc_logprob(std::span<const std::string> tokens) const {
  auto ids = vocab_->encode(tokens);
  return doc_logprob_ids(ids);
}

KneserNeyModel estimate_kneser_ney(const NGramCountTable& counts, std::shared_ptr<const Vocabulary> vocab) {
  if (counts.empty()) throw NgramError("estimate_kneser_ney: empty counts");
  const std::size_t order = counts.order();
  KneserNeyModel model(std::move(vocab), order);
  const Vocabulary& v = model.vocab();
  const double uniform = 1.0 / static_cast<double>(v.size() - 1);

  std::array<std::uint32_t, kMaxNgramOrder> buf{};
  for (std::size_t k = 1; k <= order; ++k) {
    // Continuation counts for this order: distinct left extensions in order k+1.
    NGramCountTable::Map continuation;
    if (k < order) {
      continuation.reserve(counts.table(k).size());
      for (const auto& [g, c] : counts.table(k + 1)) {
        for (std::size_t i = 0; i < k; ++i) buf[i] = g.at(i + 1);
        ++continuation[PackedGram::pack(std::span<const std::uint32_t>(buf.data(), k))];
      }
    }
    auto adjusted = [&](const PackedGram& g, std::uint64_t raw) -> std::uint64_t {
      if (k == order || g.at(0) == Vocabulary::kBos) return raw;
      auto it = continuation.find(g);
      return it == continuation.end() ? 0 : it->second;
    };

    std::array<std::uint64_t, 4> coc{};
    std::unordered_map<PackedGram, ContextStats, PackedGramHash> stats;
    for (const auto& [g, raw] : counts.table(k)) {
      std::uint64_t a = adjusted(g, raw);
      if (a >= 1 && a <= 4) ++coc[a - 1];
      for (std::size_t i = 0; i + 1 < k; ++i) buf[i] = g.at(i);
      stats[PackedGram::pack(std::span<const std::uint32_t>(buf.data(), k - 1))].add(a);
    }
    Discounts d = modified_kn_discounts(coc);
    if (d.fallback)
      model.warnings_.push_back("order " + std::to_string(k) +
                                ": degenerate count-of-counts, using default discounts (0.5, 1.0, 1.5)");
    model.discounts_.push_back(d);

    auto& table = model.tables_[k - 1];
    if (k == 1) {
      const ContextStats& s = stats[PackedGram{}];
      const double gamma = s.gamma(d);
      const double total = static_cast<double>(s.total);
      table.reserve(v.size());
      for (std::uint32_t w = 0; w < v.size(); ++w) {
        if (w == Vocabulary::kBos) {
          if (order > 1) table[PackedGram::pack(std::span(&w, 1))].log_prob = kNegInf;
          continue;
        }
        std::uint64_t a = 0;
        if (auto it = counts.table(1).find(PackedGram::pack(std::span(&w, 1))); it != counts.table(1).end())
          a = adjusted(it->first, it->second);
        double p = (static_cast<double>(a) - d(a)) / total + gamma * uniform;
        table[PackedGram::pack(std::span(&w, 1))].log_prob = std::log(p);
      }
      continue;
    }

    table.reserve(counts.table(k).size());
    for (const auto& [g, raw] : counts.table(k)) {
      std::uint64_t a = adjusted(g, raw);
      for (std::size_t i = 0; i < k; ++i) buf[i] = g.at(i);
      auto hist = std::span<const std::uint32_t>(buf.data(), k - 1);
      const ContextStats& s = stats.at(PackedGram::pack(hist));
      double lower = std::exp(model.log_prob(hist.subspan(1), buf[k - 1]));
      double p = (static_cast<double>(a) - d(a)) / static_cast<double>(s.total) + s.gamma(d) * lower;
      table[g].log_prob = std::log(p);
    }
    // Back-off weights live on the context entries one order down.
    auto& ctx_table = model.tables_[k - 2];
    for (const auto& [h, s] : stats) {
      auto [it, inserted] = ctx_table.try_emplace(h);
      if (inserted) it->second.log_prob = kNegInf;
      it->second.has_bow = true;
      it->second.log_bow = std::log(s.gamma(d));
    }
  }
  return model;
}

}  // namespace senti

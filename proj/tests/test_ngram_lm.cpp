#include <cmath>
#include <map>

#include "doctest.h"
#include "senti/ngram_lm.hpp"
#include "oracles/kn_oracle.hpp"
#include "test_support.hpp"

using namespace senti;
using senti::testing::make_doc;
using senti::oracle::KnOracle;

namespace {

using Ids = std::vector<std::uint32_t>;

std::vector<std::string> toks(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

std::shared_ptr<const Vocabulary> vocab_of(const std::vector<Document>& docs) {
  return std::make_shared<Vocabulary>(build_vocab(docs, 1));
}

std::vector<Document> cat_corpus() {
  return {make_doc("1", toks({"the", "cat", "sat"}), Label::Positive),
          make_doc("2", toks({"the", "cat", "ran"}), Label::Positive)};
}

double sum_over_vocab(const KneserNeyModel& m, const Ids& ctx) {
  double s = 0;
  for (std::uint32_t w = 0; w < m.vocab().size(); ++w)
    if (w != Vocabulary::kBos) s += std::exp(m.log_prob(ctx, w));
  return s;
}

}  // namespace

TEST_CASE("count_ngrams enumerates padded grams") {
  std::vector<Document> docs = {make_doc("d", toks({"a", "b", "a"}), Label::Positive)};
  auto v = vocab_of(docs);
  const auto a = v->index("a"), b = v->index("b");
  const auto bos = Vocabulary::kBos, eos = Vocabulary::kEos;

  auto c2 = count_ngrams(docs, 2, *v);
  CHECK(c2.table(2).size() == 4);
  CHECK(c2.count(Ids{bos, a}) == 1);
  CHECK(c2.count(Ids{a, b}) == 1);
  CHECK(c2.count(Ids{b, a}) == 1);
  CHECK(c2.count(Ids{a, eos}) == 1);

  auto c1 = count_ngrams(docs, 1, *v);
  CHECK(c1.table(1).size() == 3);
  CHECK(c1.count(Ids{a}) == 2);
  CHECK(c1.count(Ids{b}) == 1);
  CHECK(c1.count(Ids{eos}) == 1);
  CHECK(c1.count(Ids{bos}) == 0);

  CHECK_THROWS_AS(count_ngrams(docs, 0, *v), NgramError);
}

TEST_CASE("count tables: consistency, determinism, order independence") {
  Rng rng(5);
  std::vector<Document> docs;
  for (int i = 0; i < 30; ++i) {
    std::vector<std::string> t;
    auto len = rng.below(12);
    for (std::size_t j = 0; j < len; ++j) t.push_back(std::string(1, static_cast<char>('a' + rng.below(5))));
    docs.push_back(make_doc(std::to_string(i), t, Label::Positive));
  }
  auto v = vocab_of(docs);
  auto c = count_ngrams(docs, 3, *v);

  // Sum over w of count(ctx w) equals the number of positions with ctx as prefix.
  for (std::size_t k = 2; k <= 3; ++k) {
    std::map<Ids, std::uint64_t> by_ctx;
    for (const auto& [g, n] : c.table(k)) {
      Ids ctx;
      for (std::size_t i = 0; i + 1 < k; ++i) ctx.push_back(g.at(i));
      by_ctx[ctx] += n;
    }
    for (const auto& [ctx, total] : by_ctx) {
      std::uint64_t positions = 0;
      for (const auto& d : docs) {
        auto ids = v->encode(d.tokens);
        Ids padded(2, Vocabulary::kBos);
        padded.insert(padded.end(), ids.begin(), ids.end());
        padded.push_back(Vocabulary::kEos);
        for (std::size_t p = 2; p < padded.size(); ++p)
          if (std::equal(ctx.begin(), ctx.end(), padded.begin() + static_cast<long>(p + 1 - k))) ++positions;
      }
      CHECK(total == positions);
    }
    for (const auto& [g, n] : c.table(k)) CHECK(n >= 1);
  }

  auto reversed = docs;
  std::reverse(reversed.begin(), reversed.end());
  auto c_rev = count_ngrams(reversed, 3, *v, 3);
  for (std::size_t k = 1; k <= 3; ++k) {
    CHECK(c_rev.table(k).size() == c.table(k).size());
    for (const auto& [g, n] : c.table(k)) CHECK(c_rev.table(k).at(g) == n);
  }
}

TEST_CASE("continuation counts") {
  auto docs = cat_corpus();
  auto v = vocab_of(docs);
  auto c = count_ngrams(docs, 2, *v);
  CHECK(c.continuation_count(Ids{Vocabulary::kEos}) == 2);  // sat </s>, ran </s>
  CHECK(c.continuation_count(Ids{v->index("cat")}) == 1);
}

TEST_CASE("toy corpus: hand-computed interpolated probabilities") {
  auto docs = cat_corpus();
  auto v = vocab_of(docs);
  auto model = estimate_kneser_ney(count_ngrams(docs, 2, *v), v);
  const auto the = v->index("the"), cat = v->index("cat"), sat = v->index("sat");
  // Both orders have n3 = 0, so the default discounts apply.
  CHECK(model.discounts()[0].fallback);
  CHECK(model.discounts()[1].fallback);
  CHECK(model.warnings().size() == 2);
  CHECK(std::exp(model.log_prob(Ids{the}, cat)) == doctest::Approx(7.0 / 12).epsilon(1e-12));
  CHECK(std::exp(model.log_prob(Ids{the}, the)) == doctest::Approx(1.0 / 12).epsilon(1e-12));
  CHECK(std::exp(model.log_prob(Ids{the}, Vocabulary::kEos)) == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(std::exp(model.log_prob(Ids{the}, Vocabulary::kUnk)) == doctest::Approx(1.0 / 24).epsilon(1e-12));
  double expected = std::log(7.0 / 12) + std::log(7.0 / 12) + std::log(1.0 / 3) + std::log(0.625);
  CHECK(model.doc_logprob(toks({"the", "cat", "sat"})) == doctest::Approx(expected).epsilon(1e-12));
  (void)sat;

  KnOracle oracle({v->encode(docs[0].tokens), v->encode(docs[1].tokens)}, 2, v->size());
  for (std::uint32_t h = 0; h < v->size(); ++h)
    for (std::uint32_t w = 1; w < v->size(); ++w)
      CHECK(std::exp(model.log_prob(Ids{h}, w)) == doctest::Approx(oracle.prob(Ids{h}, w)).epsilon(1e-10));
}

TEST_CASE("oracle equivalence on random tiny corpora") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t order = 1 + rng.below(3);
    std::vector<Document> docs;
    std::size_t budget = 10 + rng.below(41);  // total tokens <= 50
    const std::size_t alphabet = 2 + rng.below(5);
    while (budget > 0) {
      std::size_t len = std::min<std::size_t>(budget, 1 + rng.below(8));
      std::vector<std::string> t;
      for (std::size_t j = 0; j < len; ++j) t.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
      budget -= len;
      docs.push_back(make_doc(std::to_string(docs.size()), t, Label::Positive));
    }
    auto v = vocab_of(docs);
    auto model = estimate_kneser_ney(count_ngrams(docs, order, *v), v);
    std::vector<Ids> enc;
    for (const auto& d : docs) enc.push_back(v->encode(d.tokens));
    KnOracle oracle(enc, order, v->size());

    auto ctxs = oracle.contexts();
    // Also probe unseen contexts.
    for (int i = 0; i < 5; ++i) {
      Ids ctx;
      for (std::size_t j = 0; j + 1 < order; ++j) ctx.push_back(static_cast<std::uint32_t>(rng.below(v->size())));
      ctxs.push_back(ctx);
    }
    for (const auto& ctx : ctxs) {
      for (std::uint32_t w = 1; w < v->size(); ++w) {
        double got = std::exp(model.log_prob(ctx, w));
        double want = oracle.prob(ctx, w);
        CHECK(std::abs(got - want) <= 1e-10);
      }
      CHECK(std::abs(sum_over_vocab(model, ctx) - 1.0) <= 1e-6);
    }
    for (const auto& d : enc) CHECK(model.doc_logprob_ids(d) == doctest::Approx(oracle.doc_logprob(d)).epsilon(1e-10));
  }
}

TEST_CASE("non-degenerate discounts are in range") {
  Rng rng(9);
  std::vector<Document> docs;
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> t;
    for (int j = 0; j < 20; ++j) {
      // Zipf-ish draw
      auto r = rng.uniform();
      t.push_back("w" + std::to_string(static_cast<int>(std::floor(std::pow(200.0, r)))));
    }
    docs.push_back(make_doc(std::to_string(i), t, Label::Positive));
  }
  auto v = vocab_of(docs);
  auto model = estimate_kneser_ney(count_ngrams(docs, 3, *v), v);
  for (const auto& d : model.discounts()) {
    CHECK(d.d1 > 0);
    CHECK(d.d1 <= 1);
    CHECK(d.d2 > 0);
    CHECK(d.d2 <= 2);
    CHECK(d.d3plus > 0);
    CHECK(d.d3plus <= 3);
  }
  CHECK_FALSE(model.discounts()[1].fallback);
  CHECK_FALSE(model.discounts()[2].fallback);
  // Normalization on random contexts, including unseen ones.
  for (int i = 0; i < 50; ++i) {
    Ids ctx = {static_cast<std::uint32_t>(rng.below(v->size())), static_cast<std::uint32_t>(rng.below(v->size()))};
    CHECK(std::abs(sum_over_vocab(model, ctx) - 1.0) <= 1e-6);
  }
}

TEST_CASE("discount formula") {
  auto d = modified_kn_discounts({100, 40, 20, 10});
  double y = 100.0 / (100 + 80);
  CHECK(d.d1 == doctest::Approx(1 - 2 * y * 40 / 100));
  CHECK(d.d2 == doctest::Approx(2 - 3 * y * 20 / 40));
  CHECK(d.d3plus == doctest::Approx(3 - 4 * y * 10 / 20));
  CHECK_FALSE(d.fallback);
  auto f = modified_kn_discounts({5, 0, 1, 1});
  CHECK(f.fallback);
  CHECK(f.d1 == 0.5);
  CHECK(f.d2 == 1.0);
  CHECK(f.d3plus == 1.5);
}

TEST_CASE("degenerate corpus falls back and still normalizes") {
  std::vector<Document> docs = {make_doc("1", toks({"a", "b", "c", "d"}), Label::Positive)};
  auto v = vocab_of(docs);
  auto model = estimate_kneser_ney(count_ngrams(docs, 3, *v), v);
  for (const auto& d : model.discounts()) CHECK(d.fallback);
  for (std::uint32_t x = 0; x < v->size(); ++x)
    for (std::uint32_t y = 0; y < v->size(); ++y) CHECK(std::abs(sum_over_vocab(model, Ids{x, y}) - 1.0) <= 1e-6);
  CHECK_THROWS_AS(estimate_kneser_ney(NGramCountTable(2), v), NgramError);
}

TEST_CASE("doc_logprob boundary cases") {
  const char* uniform4 =
      "\\data\\\nngram 1=4\n\n\\1-grams:\n"
      "-0.602059991327962\ta\n-0.602059991327962\tb\n-0.602059991327962\t</s>\n-0.602059991327962\t<unk>\n"
      "\n\\end\\\n";
  auto uni = import_arpa(uniform4);
  CHECK(uni.order() == 1);
  CHECK(uni.doc_logprob(toks({"a", "b", "a"})) == doctest::Approx(4 * std::log(0.25)).epsilon(1e-12));

  auto docs = cat_corpus();
  auto v = vocab_of(docs);
  auto model = estimate_kneser_ney(count_ngrams(docs, 2, *v), v);
  Ids bos = {Vocabulary::kBos};
  CHECK(model.doc_logprob({}) == doctest::Approx(model.log_prob(bos, Vocabulary::kEos)));
  CHECK(std::isfinite(model.doc_logprob(toks({"never", "seen"}))));
}

TEST_CASE("appending a token strictly decreases doc_logprob") {
  auto docs = cat_corpus();
  auto v = vocab_of(docs);
  auto model = estimate_kneser_ney(count_ngrams(docs, 3, *v), v);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> doc;
    for (std::size_t j = 0, n = rng.below(6); j < n; ++j) doc.push_back(v->token(3 + rng.below(v->size() - 3)));
    // Without the end marker each step multiplies by p < 1.
    Ids ids = v->encode(doc);
    Ids hist(2, Vocabulary::kBos);
    double prefix = 0;
    for (auto w : ids) {
      double lp = model.log_prob(hist, w);
      CHECK(lp < 0);
      prefix += lp;
      hist.push_back(w);
    }
    auto ext = ids;
    ext.push_back(static_cast<std::uint32_t>(3 + rng.below(v->size() - 3)));
    Ids hist2(2, Vocabulary::kBos);
    double prefix2 = 0;
    for (auto w : ext) {
      prefix2 += model.log_prob(hist2, w);
      hist2.push_back(w);
    }
    CHECK(prefix2 < prefix);
  }
}

TEST_CASE("generative classification") {
  auto docs = cat_corpus();
  auto v = vocab_of(docs);
  auto m = std::make_shared<KneserNeyModel>(estimate_kneser_ney(count_ngrams(docs, 2, *v), v));
  GenerativeClassifier same(m, m, std::log(0.5), std::log(0.5));
  auto tie = same.classify(toks({"the", "cat"}));
  CHECK(tie.log_ratio == 0.0);
  CHECK(tie.label == Label::Negative);

  std::vector<Document> pos = {make_doc("p", toks({"good", "good"}), Label::Positive)};
  std::vector<Document> neg = {make_doc("n", toks({"bad", "bad"}), Label::Negative)};
  std::vector<Document> all = {pos[0], neg[0]};
  auto shared = vocab_of(all);
  auto pm = std::make_shared<KneserNeyModel>(estimate_kneser_ney(count_ngrams(pos, 2, *shared), shared));
  auto nm = std::make_shared<KneserNeyModel>(estimate_kneser_ney(count_ngrams(neg, 2, *shared), shared));
  auto clf = GenerativeClassifier::with_class_counts(pm, nm, 1, 1);
  CHECK(std::exp(clf.log_prior_pos()) + std::exp(clf.log_prior_neg()) == doctest::Approx(1.0).epsilon(1e-12));

  KnOracle pos_oracle({shared->encode(pos[0].tokens)}, 2, shared->size());
  KnOracle neg_oracle({shared->encode(neg[0].tokens)}, 2, shared->size());
  auto good = clf.classify(toks({"good"}));
  Ids g = shared->encode(toks({"good"}));
  CHECK(good.label == Label::Positive);
  CHECK(good.log_ratio > 0);
  CHECK(good.log_ratio == doctest::Approx(pos_oracle.doc_logprob(g) - neg_oracle.doc_logprob(g)).epsilon(1e-10));
  CHECK(clf.classify(toks({"bad"})).label == Label::Negative);

  // Label symmetry: swapping models negates the ratio exactly.
  auto sw = clf.swapped();
  for (auto doc : {toks({"good"}), toks({"bad", "good", "bad"}), toks({})}) {
    auto a = clf.classify(doc), b = sw.classify(doc);
    CHECK(a.log_ratio == -b.log_ratio);
    if (a.log_ratio != 0) CHECK(a.label != b.label);
  }
  CHECK_THROWS(GenerativeClassifier(pm, nm, std::log(0.5), std::log(0.6)));
}

TEST_CASE("separate vocabularies with OOV penalty") {
  std::vector<Document> pos = {make_doc("p", toks({"good", "film"}), Label::Positive)};
  std::vector<Document> neg = {make_doc("n", toks({"bad", "film"}), Label::Negative)};
  auto pv = vocab_of(pos), nv = vocab_of(neg);
  auto pm = estimate_kneser_ney(count_ngrams(pos, 2, *pv), pv);
  double plain = pm.doc_logprob(toks({"bad"}));
  pm.set_oov_penalty(std::log(1e-7));
  CHECK(pm.doc_logprob(toks({"bad"})) == doctest::Approx(plain + std::log(1e-7)));
  CHECK(pm.doc_logprob(toks({"good"})) < 0);
}

TEST_CASE("ARPA export of a uniform two-symbol model") {
  const char* two = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.30103\ta\n-0.30103\t</s>\n\n\\end\\\n";
  auto m = import_arpa(two);
  auto text = export_arpa(m);
  CHECK(text.find("\\data\\\nngram 1=2\n") == 0);
  CHECK(text.find("\\1-grams:\n") != std::string::npos);
  CHECK(text.find("-0.30103\ta\n") != std::string::npos);
  CHECK(text.find("-0.30103\t</s>\n") != std::string::npos);
  CHECK(text.find("\\end\\") != std::string::npos);
}

TEST_CASE("ARPA round trip preserves probabilities") {
  Rng rng(12);
  std::vector<Document> docs;
  for (int i = 0; i < 40; ++i) {
    std::vector<std::string> t;
    for (std::size_t j = 0, n = 3 + rng.below(10); j < n; ++j)
      t.push_back(std::string(1, static_cast<char>('a' + rng.below(6))));
    docs.push_back(make_doc(std::to_string(i), t, Label::Positive));
  }
  auto v = vocab_of(docs);
  for (std::size_t order : {1, 2, 3}) {
    auto model = estimate_kneser_ney(count_ngrams(docs, order, *v), v);
    auto text = export_arpa(model);
    auto back = import_arpa(text);
    CHECK(back.order() == order);
    CHECK(export_arpa(back) == text);
    const double ln10 = std::log(10.0);
    for (std::size_t k = 1; k <= order; ++k) {
      for (const auto& [g, e] : model.table(k)) {
        std::vector<std::string> words;
        for (std::size_t i = 0; i < k; ++i) words.push_back(v->token(g.at(i)));
        Ids ids;
        for (auto& w : words) ids.push_back(back.vocab().index(w));
        const auto& e2 = back.table(k).at(PackedGram::pack(ids));
        if (std::isfinite(e.log_prob)) CHECK(std::abs(e.log_prob - e2.log_prob) / ln10 <= 1e-4);
        if (e.has_bow && k < order) CHECK(std::abs(e.log_bow - e2.log_bow) / ln10 <= 1e-4);
      }
    }
    auto sentence = toks({"a", "b", "c", "a", "f"});
    CHECK(std::abs(model.doc_logprob(sentence) - back.doc_logprob(sentence)) / ln10 <= 1e-4);
  }
}

TEST_CASE("ARPA parse errors carry line numbers") {
  try {
    import_arpa("\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\ta\n-0.3\tb\n\n\\end\\\n");
    FAIL("expected parse error");
  } catch (const ArpaParseError& e) {
    CHECK(std::string(e.what()).find("\\1-grams:") != std::string::npos);
    CHECK(e.line() == 8);
  }
  try {
    import_arpa("hello\n");
    FAIL("expected parse error");
  } catch (const ArpaParseError& e) {
    CHECK(e.line() == 1);
  }
  CHECK_THROWS_AS(import_arpa("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.3\n\\end\\\n"), ArpaParseError);
  CHECK_THROWS_AS(import_arpa("\\data\\\nngram 1=1\n\n\\1-grams:\nx\ta\n\\end\\\n"), ArpaParseError);
}

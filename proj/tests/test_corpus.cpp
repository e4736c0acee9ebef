#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "senti/corpus.hpp"
#include "test_support.hpp"

using namespace senti;
using senti::testing::TempDir;
using senti::testing::write_text;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

std::string join(const std::vector<std::string>& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + t[i];
  return s;
}

}  // namespace

TEST_CASE("tokenize default rules") {
  CHECK(tokenize("Class acting!") == toks({"class", "acting", "!"}));
  CHECK(tokenize("it doesn't even come close") == toks({"it", "doesn't", "even", "come", "close"}));
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \n\t ").empty());
  CHECK(tokenize("one<br /><br />two<BR>three") == toks({"one", "two", "three"}));
}

TEST_CASE("tokenize matches reference golden file") {
  std::ifstream in(SENTI_TEST_DATA_DIR "/golden/tokenizer.tsv");
  REQUIRE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    CHECK(join(tokenize(line.substr(0, tab))) == line.substr(tab + 1));
    ++n;
  }
  CHECK(n == 6);
}

TEST_CASE("tokenize without punctuation splitting keeps punctuation attached") {
  TokenizerConfig cfg;
  cfg.split_punctuation = false;
  CHECK(tokenize("Class acting!", cfg) == toks({"class", "acting!"}));
  cfg.lowercase = false;
  CHECK(tokenize("Class acting!", cfg) == toks({"Class", "acting!"}));
}

TEST_CASE("tokenize is idempotent under join and re-tokenize") {
  Rng rng(7);
  const std::string alphabet = "ab'C.,!? <>/br\n-";
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    auto len = rng.below(40);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.below(alphabet.size())];
    if (rng.uniform() < 0.2) text += "<br />";
    auto once = tokenize(text);
    auto twice = tokenize(join(once));
    CHECK_MESSAGE(once == twice, "text=" << text);
    if (!text.empty() && std::any_of(text.begin(), text.end(), [](char c) { return c != ' ' && c != '\n'; }) &&
        text.find("<br") == std::string::npos)
      CHECK(!once.empty());
  }
}

TEST_CASE("tokenizer config hash is stable and sensitive") {
  TokenizerConfig a, b;
  CHECK(a.hash() == b.hash());
  b.lowercase = false;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("build_vocab thresholds and reserved markers") {
  std::vector<Document> docs = {senti::testing::make_doc("d", toks({"a", "a", "b"}), Label::Positive)};
  auto v2 = build_vocab(docs, 2);
  CHECK(v2.size() == 4);
  CHECK(v2.contains("a"));
  CHECK_FALSE(v2.contains("b"));
  CHECK(v2.frequency(v2.index("a")) == 2);
  CHECK(v2.token(Vocabulary::kBos) == "<s>");
  CHECK(v2.token(Vocabulary::kEos) == "</s>");
  CHECK(v2.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v2.index("b") == Vocabulary::kUnk);

  auto v1 = build_vocab(docs, 1);
  CHECK(v1.size() == 5);
  CHECK(v1.contains("b"));
  CHECK(v1.index("a") == 3);  // most frequent first

  CHECK_THROWS_AS(build_vocab(std::vector<Document>{}, 1), CorpusError);
  CHECK_THROWS_AS(build_vocab(docs, 0), CorpusError);

  auto capped = build_vocab(docs, 1, 1);
  CHECK(capped.size() == 4);
  CHECK(capped.contains("a"));
}

TEST_CASE("vocabulary is a bijection with reserved markers once") {
  std::vector<Document> docs = {senti::testing::make_doc("d", toks({"<s>", "x", "</s>", "y", "x"}), Label::Negative)};
  auto v = build_vocab(docs, 1);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < v.size(); ++i) {
    CHECK(v.index(v.token(i)) == i);
    CHECK(seen.insert(v.token(i)).second);
    if (i >= 3) CHECK(v.frequency(i) >= v.min_count());
  }
  CHECK(v.size() == 5);
}

TEST_CASE("load_imdb single file") {
  TempDir dir("imdb1");
  for (auto leaf : {"train/neg", "test/pos", "test/neg"}) std::filesystem::create_directories(dir / leaf);
  write_text(dir / "train/pos/0_10.txt", "good");
  auto set = load_imdb(dir.path());
  REQUIRE(set.documents.size() == 1);
  CHECK(set.documents[0].id == "train/pos/0_10");
  CHECK(set.documents[0].label == Label::Positive);
  CHECK(set.documents[0].split == Split::Train);
  CHECK(set.documents[0].tokens == toks({"good"}));
  CHECK_FALSE(set.warnings.empty());  // empty leaves are reported, not fatal
}

TEST_CASE("load_imdb errors name the missing directory") {
  TempDir dir("imdb2");
  std::filesystem::create_directories(dir / "train/pos");
  std::filesystem::create_directories(dir / "train/neg");
  std::filesystem::create_directories(dir / "test/pos");
  try {
    load_imdb(dir.path());
    FAIL("expected error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find("test/neg") != std::string::npos);
  }
}

TEST_CASE("load_imdb truncated corpus counts and ordering") {
  TempDir dir("imdb3");
  senti::testing::write_synthetic_imdb(dir.path(), 100, 3);
  auto set = load_imdb(dir.path(), {}, 2);
  // Count on disk independently.
  std::size_t on_disk = 0;
  for (auto& e : std::filesystem::recursive_directory_iterator(dir.path()))
    if (e.path().extension() == ".txt") ++on_disk;
  CHECK(on_disk == 400);
  CHECK(set.documents.size() == 400);
  std::size_t train = 0, train_pos = 0, test_pos = 0;
  for (const auto& d : set.documents) {
    if (d.split == Split::Train) {
      ++train;
      train_pos += d.label == Label::Positive;
    } else {
      test_pos += d.label == Label::Positive;
    }
  }
  CHECK(train == 200);
  CHECK(train_pos == 100);
  CHECK(test_pos == 100);
  CHECK(std::is_sorted(set.documents.begin(), set.documents.end(),
                       [](const Document& a, const Document& b) { return a.id < b.id; }));
  CHECK(set.warnings.empty());

  auto again = load_imdb(dir.path());
  REQUIRE(again.documents.size() == set.documents.size());
  for (std::size_t i = 0; i < again.documents.size(); ++i) {
    CHECK(again.documents[i].id == set.documents[i].id);
    CHECK(again.documents[i].tokens == set.documents[i].tokens);
  }
}

namespace {

std::vector<Document> labeled(std::size_t n_pos, std::size_t n_neg) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n_pos + n_neg; ++i)
    docs.push_back(senti::testing::make_doc("d" + std::to_string(i), toks({"x"}),
                                            i < n_pos ? Label::Positive : Label::Negative));
  return docs;
}

}  // namespace

TEST_CASE("split_validation stratified sizes") {
  auto docs = labeled(12500, 12500);
  auto [tr, va] = split_validation(docs, 0.2, 42);
  CHECK(tr.size() == 20000);
  CHECK(va.size() == 5000);
  CHECK(std::count_if(va.begin(), va.end(), [](auto& d) { return d.label == Label::Positive; }) == 2500);
  for (const auto& d : va) CHECK(d.split == Split::Valid);

  auto [tr2, va2] = split_validation(docs, 0.2, 42);
  REQUIRE(va2.size() == va.size());
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i].id == va2[i].id);

  auto [tr3, va3] = split_validation(docs, 0.2, 43);
  bool differs = false;
  for (std::size_t i = 0; i < va.size() && !differs; ++i) differs = va[i].id != va3[i].id;
  CHECK(differs);
}

TEST_CASE("split_validation floors the validation size") {
  auto docs = labeled(3, 0);
  auto [tr, va] = split_validation(docs, 0.5, 1);
  CHECK(tr.size() == 2);
  CHECK(va.size() == 1);
  CHECK_THROWS_AS(split_validation(docs, 0.0, 1), CorpusError);
  CHECK_THROWS_AS(split_validation(docs, 1.0, 1), CorpusError);
  CHECK_THROWS_AS(split_validation(docs, -0.1, 1), CorpusError);
}

TEST_CASE("split_validation properties over random class sizes") {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    auto n_pos = 1 + rng.below(300), n_neg = 1 + rng.below(300);
    double fraction = 0.05 + 0.9 * rng.uniform();
    auto docs = labeled(n_pos, n_neg);
    auto [tr, va] = split_validation(docs, fraction, rng.next());
    // Disjoint, union equals input.
    std::set<std::string> ids;
    for (auto& d : tr) ids.insert(d.id);
    for (auto& d : va) CHECK(ids.insert(d.id).second);
    CHECK(ids.size() == docs.size());
    if (va.empty()) continue;
    double pos_in = static_cast<double>(n_pos) / static_cast<double>(docs.size());
    double pos_va = static_cast<double>(std::count_if(va.begin(), va.end(),
                                                      [](auto& d) { return d.label == Label::Positive; })) /
                    static_cast<double>(va.size());
    CHECK(std::abs(pos_va - pos_in) <= 1.0 / static_cast<double>(va.size()) + 1e-12);
  }
}

TEST_CASE("token cache round trip") {
  TempDir dir("cache");
  std::vector<Document> docs = {senti::testing::make_doc("train/pos/1_9", toks({"a", "b"}), Label::Positive),
                                senti::testing::make_doc("train/neg/2_1", toks({"c"}), Label::Negative)};
  write_token_cache(dir / "c.tsv", docs);
  CHECK(senti::testing::read_text(dir / "c.tsv") == "train/pos/1_9\tpositive\ta b\ntrain/neg/2_1\tnegative\tc\n");
  auto back = read_token_cache(dir / "c.tsv", Split::Valid);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "train/pos/1_9");
  CHECK(back[0].tokens == toks({"a", "b"}));
  CHECK(back[1].label == Label::Negative);
  CHECK(back[1].split == Split::Valid);
}

TEST_CASE("cap_per_class keeps input order") {
  auto docs = labeled(5, 5);
  auto capped = cap_per_class(docs, 2);
  REQUIRE(capped.size() == 4);
  CHECK(capped[0].id == "d0");
  CHECK(capped[2].id == "d5");
}

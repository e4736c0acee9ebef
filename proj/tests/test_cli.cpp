#include <sstream>

#include "doctest.h"
#include "senti/cli.hpp"
#include "senti/scores.hpp"
#include "test_support.hpp"

using namespace senti;
using senti::testing::read_text;
using senti::testing::TempDir;
using senti::testing::write_text;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "senti");
  std::ostringstream out, err;
  int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string last_line(const std::string& s) {
  auto end = s.find_last_not_of('\n');
  if (end == std::string::npos) return "";
  auto start = s.rfind('\n', end);
  return s.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

/// Output digests recorded in a run manifest.
std::map<std::string, std::string> output_digests(const std::filesystem::path& run_dir) {
  std::map<std::string, std::string> out;
  auto manifest = RunManifest::load(run_dir / "manifest.txt");
  for (const auto& [k, v] : manifest.values())
    if (k.find(".output.") != std::string::npos) out[k] = v;
  return out;
}

const std::vector<std::vector<std::string>> kPipeline = {
    {"train-ngram", "--order", "3"},
    {"train-rnn", "--hidden", "8", "--epochs", "2", "--vocab-cap", "60"},
    {"train-nbsvm"},
    {"train-nbsvm", "--ngram", "1"},
    {"train-pv", "--dim", "12", "--epochs", "3"},
    {"score", "ngram", "valid"},
    {"score", "ngram", "test"},
    {"score", "rnn", "valid"},
    {"score", "rnn", "test"},
    {"score", "pv", "valid"},
    {"score", "pv", "test"},
    {"score", "nbsvm", "valid"},
    {"score", "nbsvm", "test"},
    {"score", "nbsvm-uni", "test"},
    {"ensemble-search"},
    {"ablate"},
    {"inspect-errors"},
    {"report"},
};

void run_pipeline(const std::filesystem::path& imdb, const std::filesystem::path& out) {
  auto r = run({"--out-dir", out.string(), "prepare", imdb.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (auto args : kPipeline) {
    args.insert(args.begin(), {"--out-dir", out.string()});
    auto res = run(args);
    REQUIRE_MESSAGE(res.code == 0, (args[2] + ": " + res.err));
  }
}

}  // namespace

TEST_CASE("evaluate prints accuracy with four decimals") {
  TempDir dir("cli_eval");
  std::vector<ScoreRecord> recs;
  std::string labels;
  for (int i = 0; i < 10000; ++i) {
    bool pos = i % 2 == 0;
    bool right = i < 9257;
    recs.push_back({"d" + std::to_string(i), "m", (pos == right) ? 0.8 : 0.2});
    labels += "d" + std::to_string(i) + "\t" + (pos ? "pos" : "neg") + "\n";
  }
  write_scores_jsonl(dir / "s.jsonl", recs);
  write_text(dir / "labels.tsv", labels);
  auto r = run({"evaluate", (dir / "s.jsonl").string(), (dir / "labels.tsv").string()});
  CHECK(r.code == 0);
  CHECK(r.out == "accuracy 0.9257\n");
}

TEST_CASE("usage errors exit 2 with usage text and one error line") {
  for (std::vector<std::string> args :
       {std::vector<std::string>{"frobnicate"}, {"report", "--bogus"}, {}, {"score", "ngram"},
        {"train-nbsvm", "--ngram", "7"}, {"train-nbsvm", "--loss", "hinge"}}) {
    auto r = run(args);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(last_line(r.err).rfind("error code=2 kind=usage detail=", 0) == 0);
  }
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"score", "--help"}).out.find("--temperature") != std::string::npos);
}

TEST_CASE("missing upstream artifacts exit 3 naming the file") {
  TempDir dir("cli_missing");
  const std::string out = (dir / "run").string();
  auto r = run({"--out-dir", out, "score", "rnn", "test"});
  CHECK(r.code == kExitMissingArtifact);
  CHECK(r.err == "error code=3 kind=missing-artifact detail=" + (dir / "run" / "models" / "rnn.pos.bin").string() + "\n");
  CHECK(run({"--out-dir", out, "train-ngram"}).code == kExitMissingArtifact);
  CHECK(run({"--out-dir", out, "ensemble-search"}).code == kExitMissingArtifact);
  CHECK(run({"--out-dir", out, "report"}).code == kExitMissingArtifact);
  CHECK(run({"--out-dir", out, "prepare", (dir / "nowhere").string()}).code == kExitMissingArtifact);
  CHECK(run({"evaluate", (dir / "a.jsonl").string(), (dir / "b.tsv").string()}).code == kExitMissingArtifact);
}

TEST_CASE("report uses the fixed row order and reads only stored scores") {
  TempDir dir("cli_report");
  auto root = dir / "run";
  std::vector<Document> docs;
  for (int i = 0; i < 4; ++i)
    docs.push_back(senti::testing::make_doc("d" + std::to_string(i), {"x"}, i < 2 ? Label::Positive : Label::Negative,
                                            Split::Test));
  std::filesystem::create_directories(root / "data");
  write_token_cache(root / "data" / "test.tok", docs);
  // Written in reverse of the expected display order.
  const std::vector<std::pair<std::string, std::vector<double>>> models = {
      {"nbsvm", {0.9, 0.9, 0.1, 0.1}}, {"pv", {0.9, 0.9, 0.9, 0.1}}, {"rnn", {0.9, 0.1, 0.9, 0.1}},
      {"ngram", {0.1, 0.1, 0.9, 0.9}}};
  for (const auto& [m, p] : models) {
    std::vector<ScoreRecord> recs;
    for (int i = 0; i < 4; ++i) recs.push_back({"d" + std::to_string(i), m, p[i]});
    write_scores_jsonl(root / "scores" / (m + ".test.jsonl"), recs);
  }
  auto r = run({"--out-dir", root.string(), "report"});
  REQUIRE(r.code == 0);
  CHECK(read_text(root / "reports" / "table2.tsv") ==
        "method\taccuracy\nN-gram\t0.00\nRNN-LM\t50.00\nSentence Vectors\t75.00\nNB-SVM Trigram\t100.00\n");
  CHECK(!std::filesystem::exists(root / "models"));
}

TEST_CASE("config file supplies defaults and flags override it") {
  TempDir dir("cli_config");
  senti::testing::write_synthetic_imdb(dir / "imdb", 20, 11);
  const std::string out = (dir / "run").string();
  write_text(dir / "cfg.txt", "# desk run\nseed = 7\nvalid-fraction=0.25\n");
  auto r = run({"--out-dir", out, "--config", (dir / "cfg.txt").string(), "prepare", (dir / "imdb").string()});
  REQUIRE(r.code == 0);
  auto m = RunManifest::load(dir / "run" / "manifest.txt");
  CHECK(*m.get("split.seed") == "7");
  CHECK(*m.get("split.valid") == "10");
  r = run({"--out-dir", out, "--config", (dir / "cfg.txt").string(), "prepare", (dir / "imdb").string(), "--seed",
           "9"});
  REQUIRE(r.code == 0);
  CHECK(*RunManifest::load(dir / "run" / "manifest.txt").get("split.seed") == "9");
  write_text(dir / "bad.txt", "order=3\n");
  CHECK(run({"--out-dir", out, "--config", (dir / "bad.txt").string(), "prepare", (dir / "imdb").string()}).code ==
        kExitUsage);
}

TEST_CASE("full pipeline: manifest digests and deterministic double run") {
  TempDir dir("cli_pipeline");
  senti::testing::write_synthetic_imdb(dir / "imdb", 40, 5);
  run_pipeline(dir / "imdb", dir / "a");
  run_pipeline(dir / "imdb", dir / "b");

  auto a = output_digests(dir / "a");
  auto b = output_digests(dir / "b");
  CHECK(a == b);
  auto manifest = RunManifest::load(dir / "a" / "manifest.txt");
  CHECK(*manifest.get("split.train") == "64");
  CHECK(*manifest.get("split.valid") == "16");
  CHECK(*manifest.get("split.test") == "80");
  CHECK(manifest.get("vocab.size") != nullptr);
  CHECK(manifest.get("stage.train-pv.seconds") != nullptr);
  CHECK(manifest.get("stage.train-pv.config_hash") != nullptr);
  // Every file the run produced is listed with its digest.
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.txt") continue;
    ++files;
    auto rel = std::filesystem::relative(e.path(), dir / "a").generic_string();
    bool listed = false;
    for (const auto& [k, v] : a)
      if (k.size() > rel.size() && k.compare(k.size() - rel.size(), rel.size(), rel) == 0) {
        listed = true;
        CHECK(v == file_digest(e.path().string()));
      }
    CHECK_MESSAGE(listed, rel);
  }
  CHECK(files >= 20);

  // Re-running a stage in place reproduces its outputs.
  auto before = output_digests(dir / "a");
  REQUIRE(run({"--out-dir", (dir / "a").string(), "train-nbsvm"}).code == 0);
  CHECK(output_digests(dir / "a") == before);

  auto table3 = read_text(dir / "a" / "reports" / "table3.tsv");
  CHECK(table3.find("All\t") != std::string::npos);
  CHECK(read_text(dir / "a" / "ensemble" / "weights.txt").find("nbsvm=") != std::string::npos);
}

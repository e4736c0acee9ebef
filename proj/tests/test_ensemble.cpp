#include <cmath>
#include <algorithm>
#include <functional>
#include <map>

#include "doctest.h"
#include "senti/ensemble.hpp"
#include "oracles/grid_oracle.hpp"
#include "test_support.hpp"

using namespace senti;
using senti::oracle::random_table;
using senti::oracle::reference_grid;

TEST_CASE("calibrate_generative") {
  for (std::size_t len : {1u, 7u, 300u})
    for (double T : {0.5, 1.0, 2.0}) CHECK(calibrate_generative(-40, -40, std::log(0.5), std::log(0.5), len, T) == 0.5);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    double lp = -rng.uniform(1, 500), ln = -rng.uniform(1, 500);
    std::size_t len = 1 + rng.below(400);
    double p05 = calibrate_generative(lp, ln, 0, 0, len, 0.5);
    double p1 = calibrate_generative(lp, ln, 0, 0, len, 1.0);
    double p2 = calibrate_generative(lp, ln, 0, 0, len, 2.0);
    if (lp > ln) {
      CHECK(p1 > 0.5);
      CHECK(p05 >= p1);
      CHECK(p1 > p2);
    } else if (lp < ln) {
      CHECK(p1 < 0.5);
      CHECK(p05 <= p1);
      CHECK(p1 < p2);
    }
  }
  // Direct evaluation: ((-10 - -16) / 3 + ln(0.6/0.4)) / 2 = (2 + 0.405465...) / 2.
  double z = (2.0 + std::log(1.5)) / 2.0;
  CHECK(calibrate_generative(-10, -16, std::log(0.6), std::log(0.4), 3, 2.0) ==
        doctest::Approx(1 / (1 + std::exp(-z))).epsilon(1e-14));
  CHECK_THROWS_AS(calibrate_generative(0, 0, 0, 0, 0, 1), EnsembleError);
  CHECK_THROWS_AS(calibrate_generative(0, 0, 0, 0, 1, 0), EnsembleError);
  CHECK(calibrate_generative(0, -1e6, 0, 0, 1, 1) == 1 - kProbFloor);
}

TEST_CASE("temperature tuning minimizes validation log-loss") {
  Rng rng(2);
  std::vector<ScoreRecord> recs;
  std::map<std::string, Label> labels;
  for (int i = 0; i < 400; ++i) {
    bool pos = rng.uniform() < 0.5;
    ScoreRecord r;
    r.id = "d" + std::to_string(i);
    r.model = "ngram";
    r.n_tokens = 99;
    r.log_p_pos = -300.0;
    // Per-token log ratio ~ +-0.2 with noise: calibrated at T = 1 it is overconfident or under.
    r.log_p_neg = -300.0 - 100.0 * ((pos ? 0.05 : -0.05) + rng.uniform(-0.1, 0.1));
    r.prior_log_odds = 0.0;
    r.p_pos = 0.5;
    labels[r.id] = pos ? Label::Positive : Label::Negative;
    recs.push_back(r);
  }
  double T = tune_temperature(recs, labels);
  auto logloss = [&](double t) {
    double s = 0;
    for (const auto& r : recalibrate(recs, t)) s -= std::log(labels[r.id] == Label::Positive ? r.p_pos : 1 - r.p_pos);
    return s;
  };
  CHECK(T > 0.01);
  CHECK(T < 100);
  for (double t : {0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) CHECK(logloss(T) <= logloss(t) + 1e-9);
  ScoreRecord bare;
  bare.id = "d0";
  CHECK_THROWS_AS(recalibrate(std::vector<ScoreRecord>{bare}, 1.0), EnsembleError);
}

TEST_CASE("combine examples") {
  auto c = combine(std::vector<double>{0.9, 0.2}, std::vector<double>{0.5, 0.5});
  double oracle = 0.5 * (std::log(0.9) + std::log(0.2)) - 0.5 * (std::log(0.1) + std::log(0.8));
  CHECK(oracle > 0);
  CHECK(c.s_pos - c.s_neg == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(c.label == Label::Positive);

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> alpha = {rng.below(10) + 1.0, static_cast<double>(rng.below(11)), static_cast<double>(rng.below(11))};
    for (auto& a : alpha) a /= 10;
    CHECK(combine(std::vector<double>{0.9, 0.9, 0.9}, alpha).label == Label::Positive);
  }
  // Exact tie goes negative.
  CHECK(combine(std::vector<double>{0.5}, std::vector<double>{1.0}).label == Label::Negative);
  CHECK(combine(std::vector<double>{0.3, 0.7}, std::vector<double>{0.5, 0.5}).label == Label::Negative);

  EnsembleWeights w{{"rnn", "pv"}, {3, 0}, 0.1};
  CHECK(combine("doc7", std::map<std::string, double>{{"rnn", 0.8}}, w).label == Label::Positive);
  EnsembleWeights w2{{"rnn", "pv"}, {3, 2}, 0.1};
  try {
    combine("doc7", std::map<std::string, double>{{"rnn", 0.8}}, w2);
    FAIL("expected error");
  } catch (const EnsembleError& e) {
    std::string msg = e.what();
    CHECK(msg.find("doc7") != std::string::npos);
    CHECK(msg.find("pv") != std::string::npos);
  }
}

TEST_CASE("single-model weights reproduce that model and rescaling changes nothing") {
  Rng rng(4);
  std::map<std::string, Label> labels;
  auto t = random_table(rng, 3, 300, labels);
  t.p[0][0] = 0.5;  // exact tie in model 0
  for (std::size_t i = 0; i < t.docs(); ++i) {
    std::vector<double> p = {t.p[0][i], t.p[1][i], t.p[2][i]};
    auto single = combine(p, std::vector<double>{1, 0, 0});
    CHECK(single.label == (t.p[0][i] > 0.5 ? Label::Positive : Label::Negative));
    std::vector<double> alpha = {rng.uniform(), rng.uniform(), rng.uniform()};
    auto base = combine(p, alpha).label;
    for (double c : {0.5, 3.0, 17.0}) {
      std::vector<double> scaled = {alpha[0] * c, alpha[1] * c, alpha[2] * c};
      CHECK(combine(p, scaled).label == base);
    }
  }
}

TEST_CASE("grid search matches exhaustive reference") {
  Rng rng(5);
  for (std::size_t K = 1; K <= 3; ++K) {
    for (int trial = 0; trial < 3; ++trial) {
      std::map<std::string, Label> labels;
      auto t = random_table(rng, K, 150, labels);
      auto got = grid_search(t, labels, 0.1, trial % 2 ? 3 : 1);
      auto [ref, ref_correct] = reference_grid(t, labels);
      CHECK(got.weights.ticks == ref);
      CHECK(got.correct == ref_correct);
      // Grid containment: each single-model tuple is a candidate.
      auto y = aligned_labels(t, labels);
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> alpha(K, 0.0);
        alpha[k] = 1.0;
        CHECK(got.correct >= count_correct(t, alpha, y));
      }
    }
  }
}

TEST_CASE("grid search examples") {
  Rng rng(6);
  std::map<std::string, Label> labels;
  auto one = random_table(rng, 1, 100, labels);
  auto r1 = grid_search(one, labels);
  CHECK(r1.weights.ticks == std::vector<int>{1});  // scaling a single model never changes decisions
  auto y = aligned_labels(one, labels);
  CHECK(count_correct(one, std::vector<double>{1.0}, y) == r1.correct);

  // Model A always right, model B always wrong.
  ScoreTable t;
  t.models = {"A", "B"};
  t.p.assign(2, {});
  std::map<std::string, Label> lab;
  for (int i = 0; i < 50; ++i) {
    bool pos = i % 2 == 0;
    t.ids.push_back("x" + std::to_string(i));
    lab[t.ids.back()] = pos ? Label::Positive : Label::Negative;
    t.p[0].push_back(pos ? 0.6 + 0.3 * rng.uniform() : 0.1 + 0.3 * rng.uniform());
    t.p[1].push_back(pos ? 0.05 + 0.3 * rng.uniform() : 0.65 + 0.3 * rng.uniform());
  }
  auto r = grid_search(t, lab);
  CHECK(r.accuracy() == 1.0);
  auto [ref, ref_correct] = reference_grid(t, lab);
  CHECK(r.weights.ticks == ref);
  CHECK(ref_correct == 50);

  ScoreTable empty;
  empty.models = {"A"};
  empty.p.assign(1, {});
  CHECK_THROWS_AS(grid_search(empty, lab), EnsembleError);
  CHECK_THROWS_AS(grid_search(t, lab, 0.3), EnsembleError);
}

TEST_CASE("ablation rows") {
  Rng rng(7);
  std::map<std::string, Label> labels, test_labels;
  auto valid = random_table(rng, 3, 200, labels);
  auto test = random_table(rng, 3, 200, test_labels);
  auto rows = ablate(valid, labels, &test, &test_labels);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].removed.empty());
  CHECK(rows[0].models.size() == 3);
  for (std::size_t k = 1; k < 4; ++k) {
    CHECK(rows[k].models.size() == 2);
    CHECK(rows[k].removed == valid.models[k - 1]);
    // The full grid contains every subset's grid.
    CHECK(rows[0].valid.correct >= rows[k].valid.correct);
    CHECK(rows[k].test_total == 200);
  }

  // Two identical copies: dropping either leaves the accuracy unchanged.
  ScoreTable twins = select_models(valid, std::vector<std::string>{"m0", "m1"});
  twins.models[1] = "m0copy";
  twins.p[1] = twins.p[0];
  auto trows = ablate(twins, labels, nullptr, nullptr);
  REQUIRE(trows.size() == 3);
  CHECK(trows[1].valid.correct == trows[0].valid.correct);
  CHECK(trows[2].valid.correct == trows[0].valid.correct);
  CHECK_THROWS_AS(ablate(select_models(valid, std::vector<std::string>{"m0"}), labels, nullptr, nullptr),
                  EnsembleError);

  senti::testing::TempDir dir("ablate");
  write_ablation_tsv(dir / "a.tsv", rows);
  write_ablation_tsv(dir / "b.tsv", ablate(valid, labels, &test, &test_labels));
  CHECK(senti::testing::read_text(dir / "a.tsv") == senti::testing::read_text(dir / "b.tsv"));
}

TEST_CASE("inspect_errors") {
  ScoreTable t;
  t.models = {"A", "B"};
  t.ids = {"d1", "d2", "d3"};
  t.p = {{0.2, 0.8, 0.9}, {0.7, 0.3, 0.9}};
  std::map<std::string, Label> labels = {{"d1", Label::Positive}, {"d2", Label::Positive}, {"d3", Label::Negative}};
  std::map<std::string, std::string> texts = {{"d1", "first\treview"}, {"d2", std::string(300, 'x')}};
  // Ensemble identical to model A: nothing listed for A.
  std::vector<Label> as_a = {Label::Negative, Label::Positive, Label::Positive};
  for (const auto& e : inspect_errors(t, as_a, labels, texts)) CHECK(e.model != "A");
  std::vector<Label> ens = {Label::Positive, Label::Positive, Label::Positive};
  auto errors = inspect_errors(t, ens, labels, texts);
  REQUIRE(errors.size() == 2);
  CHECK(errors[0].model == "A");
  CHECK(errors[0].id == "d1");
  CHECK(errors[0].excerpt == "first review");
  CHECK(errors[1].model == "B");
  CHECK(errors[1].id == "d2");
  CHECK(errors[1].excerpt.size() == 200);

  std::string utf = std::string(199, 'a') + "\xc3\xa9" + "tail";
  CHECK(excerpt(utf).size() == 199);
}

TEST_CASE("weights file and ensemble records") {
  senti::testing::TempDir dir("weights");
  EnsembleWeights w{{"rnn", "pv", "nbsvm"}, {3, 0, 10}, 0.1};
  write_weights(dir / "w.txt", w);
  CHECK(senti::testing::read_text(dir / "w.txt") == "rnn=0.3\npv=0\nnbsvm=1\n");
  auto back = read_weights(dir / "w.txt");
  CHECK(back.models == w.models);
  CHECK(back.ticks == w.ticks);
  senti::testing::write_text(dir / "bad.txt", "rnn=0.35\n");
  CHECK_THROWS_AS(read_weights(dir / "bad.txt"), EnsembleError);
  senti::testing::write_text(dir / "zero.txt", "rnn=0\n");
  CHECK_THROWS_AS(read_weights(dir / "zero.txt"), EnsembleError);

  Rng rng(8);
  std::map<std::string, Label> labels;
  auto t = random_table(rng, 3, 100, labels);
  EnsembleWeights ew{t.models, {2, 5, 1}, 0.1};
  auto recs = ensemble_records(t, ew);
  auto y = aligned_labels(t, labels);
  auto acc = score_accuracy(recs, labels);
  CHECK(acc.correct == count_correct(t, ew.alphas(), y));

  std::vector<std::vector<ScoreRecord>> per_model(2);
  per_model[0] = {{"a", "x", 0.4}, {"b", "x", 0.6}};
  per_model[1] = {{"b", "y", 0.1}, {"a", "y", 0.2}};
  auto aligned = align_scores(per_model);
  CHECK(aligned.p[1] == std::vector<double>{0.2, 0.1});
  per_model[1].pop_back();
  CHECK_THROWS_AS(align_scores(per_model), EnsembleError);
}

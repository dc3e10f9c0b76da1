#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oodcal/errors.hpp"
#include "oodcal/evaluation.hpp"
#include "oracles.hpp"

using namespace oodcal;

namespace {

// Scores drawn from a handful of levels when `ties` is set, so equal values
// are common on both sides.
LabeledScores random_scores(std::mt19937_64& rng, std::size_t n_id, std::size_t n_ood,
                            bool ties) {
  std::normal_distribution<double> id(0.6, 0.2), ood(0.4, 0.2);
  auto draw = [&](auto& dist) {
    const double v = dist(rng);
    return ties ? std::round(v * 10) / 10 : v;
  };
  LabeledScores s;
  for (std::size_t i = 0; i < n_id; ++i) s.id_scores.push_back(draw(id));
  for (std::size_t i = 0; i < n_ood; ++i) s.ood_scores.push_back(draw(ood));
  return s;
}

}  // namespace

TEST_CASE("threshold_at_tpr examples") {
  CHECK(threshold_at_tpr({0.9, 0.8, 0.7, 0.6, 0.5}, 0.95) == 0.5);
  std::vector<double> hundred;
  for (int i = 1; i <= 100; ++i) hundred.push_back(i / 100.0);
  CHECK(threshold_at_tpr(hundred, 0.95) == 0.06);
  CHECK(threshold_at_tpr({0.3, 0.1, 0.7}, 1.0) == 0.1);
  CHECK(threshold_at_tpr({0.3, 0.1, 0.7}, 1e-9) == 0.7);
  CHECK_THROWS_AS(threshold_at_tpr({}, 0.95), EmptyInputError);
  CHECK_THROWS_AS(threshold_at_tpr({0.5}, 0.0), ParameterError);
  CHECK_THROWS_AS(threshold_at_tpr({0.5}, 1.01), ParameterError);
}

TEST_CASE("fpr_at examples") {
  CHECK(fpr_at({0.55, 0.4, 0.3}, 0.5) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(fpr_at({0.2, 0.1}, 0.5) == 0.0);
  CHECK(fpr_at({0.5, 0.5, 0.5}, 0.5) == 1.0);
  CHECK_THROWS_AS(fpr_at({}, 0.5), EmptyInputError);
}

TEST_CASE("auroc examples") {
  CHECK(auroc({0.9, 0.7}, {0.8, 0.1}) == 0.75);
  CHECK(auroc({0.9, 0.8}, {0.3, 0.1, 0.2}) == 1.0);
  CHECK(auroc({0.3, 0.5, 0.5}, {0.5, 0.3, 0.5}) == 0.5);
  CHECK_THROWS_AS(auroc({}, {0.1}), EmptyInputError);
  CHECK_THROWS_AS(auroc({0.1}, {}), EmptyInputError);
}

TEST_CASE("evaluate composes the metric ops") {
  const auto r = evaluate({{0.9, 0.8, 0.7, 0.6, 0.5}, {0.55, 0.4, 0.3}});
  CHECK(r.fpr95 == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(std::abs(r.auroc - 14.0 / 15.0) < 1e-15);
  CHECK(r.threshold_at_95tpr == 0.5);
  CHECK(r.n_id == 5);
  CHECK(r.n_ood == 3);

  const auto sep = evaluate({{0.9, 0.8}, {0.2, 0.1}});
  CHECK(sep.fpr95 == 0.0);
  CHECK(sep.auroc == 1.0);

  const auto j = metrics_to_json(r);
  for (const char* key : {"fpr95", "auroc", "threshold", "n_id", "n_ood"}) CHECK(j.contains(key));
  CHECK(j["n_id"] == 5);
}

TEST_CASE("metric properties on random inputs") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 300);
  for (int trial = 0; trial < 200; ++trial) {
    const bool ties = trial % 3 == 0;
    auto s = random_scores(rng, size(rng), size(rng), ties);
    CAPTURE(trial);

    const double a = auroc(s.id_scores, s.ood_scores);
    CHECK(a + auroc(s.ood_scores, s.id_scores) == 1.0);
    CHECK(std::abs(a - oracle::pairwise_auroc(s.id_scores, s.ood_scores)) <= 1e-12);
    CHECK(std::abs(a - oracle::trapezoid_auroc(s.id_scores, s.ood_scores)) <= 1e-12);

    // A strictly increasing map keeps every comparison.
    auto transform = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(3 * x) - 7;
      return v;
    };
    CHECK(auroc(transform(s.id_scores), transform(s.ood_scores)) == a);

    const auto r = evaluate(s);
    const auto sweep = oracle::fpr_by_sweep(s.id_scores, s.ood_scores, 0.95);
    CHECK(r.threshold_at_95tpr == sweep.threshold);
    CHECK(r.fpr95 == sweep.fpr);

    auto shuffled = s;
    std::shuffle(shuffled.id_scores.begin(), shuffled.id_scores.end(), rng);
    std::shuffle(shuffled.ood_scores.begin(), shuffled.ood_scores.end(), rng);
    const auto r2 = evaluate(shuffled);
    CHECK(r2.auroc == r.auroc);
    CHECK(r2.fpr95 == r.fpr95);

    double prev_fpr = 1.0;
    for (double lambda = -1.0; lambda <= 2.0; lambda += 0.1) {
      const double f = fpr_at(s.ood_scores, lambda);
      CHECK(f <= prev_fpr);
      prev_fpr = f;
    }
    double prev_t = threshold_at_tpr(s.id_scores, 0.01);
    for (double tpr = 0.05; tpr <= 1.0; tpr += 0.05) {
      const double t = threshold_at_tpr(s.id_scores, tpr);
      CHECK(t <= prev_t);
      prev_t = t;
    }
  }
}

TEST_CASE("histogram counts every score once") {
  std::mt19937_64 rng(5);
  auto s = random_scores(rng, 137, 59, false);
  s.id_scores.push_back(1.0);
  s.id_scores.push_back(0.0);
  s.ood_scores.push_back(1.7);
  s.ood_scores.push_back(-0.2);
  for (std::size_t bins : {1u, 7u, 20u}) {
    const auto h = score_histogram(s, bins);
    REQUIRE(h.size() == bins);
    std::size_t id = 0, ood = 0;
    for (const auto& b : h) id += b.id_count, ood += b.ood_count;
    CHECK(id == s.id_scores.size());
    CHECK(ood == s.ood_scores.size());
    CHECK(h.front().lo == 0.0);
    CHECK(h.back().hi == 1.0);
  }
  const auto h = score_histogram({{1.0, 0.5}, {0.0}}, 2);
  CHECK(h[0].ood_count == 1);
  CHECK(h[1].id_count == 2);
  CHECK(histogram_csv(h) == "bin_lo,bin_hi,id_count,ood_count\n0,0.5,0,1\n0.5,1,2,0\n");
  CHECK_THROWS_AS(score_histogram(s, 0), ParameterError);
}

TEST_CASE("score report parsing") {
  LabeledScores s;
  append_score_report(
      "image_id,label,s_max,argmax_class,decision,a\n"
      "\"x,1\",id,0.75,a,1,0.1\n"
      "y,ood,0.25,a,0,0.2\r\n"
      "z,id,0.5,a,1,0.3\n",
      s);
  CHECK(s.id_scores == std::vector<double>{0.75, 0.5});
  CHECK(s.ood_scores == std::vector<double>{0.25});
  CHECK_THROWS_AS(append_score_report("image_id,s_max\nx,0.5\n", s), ParseError);
  CHECK_THROWS_AS(append_score_report("image_id,label,s_max\nx,maybe,0.5\n", s), ParseError);
  CHECK_THROWS_AS(append_score_report("image_id,label,s_max\nx,id,abc\n", s), ParseError);
}

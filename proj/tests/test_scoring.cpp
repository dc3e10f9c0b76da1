#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oodcal/errors.hpp"
#include "oodcal/scoring.hpp"
#include "oodcal/synthworld.hpp"
#include "oracles.hpp"

using namespace oodcal;

namespace {

Embedding img(std::vector<float> v) { return {"x", EmbeddingKind::image, std::move(v)}; }

float root(double x) { return static_cast<float>(std::sqrt(x)); }

DescriptorBank two_set_bank() {
  DescriptorBank bank(2);
  bank.add_class("hen", {{"a beak", "feathers"}, {"a comb"}});
  return bank;
}

}  // namespace

TEST_CASE("build_text_features gate") {
  const auto bank = two_set_bank();
  CalibratedClass c{"hen", 0.5, {{0}, {1}}, 1, true};
  auto f = build_text_features(c, bank, 0.5);
  CHECK(f.augmented);
  CHECK(f.texts == std::vector<std::string>{"hen which has a comb"});

  c.confidence = 0.4;
  f = build_text_features(c, bank, 0.5);
  CHECK_FALSE(f.augmented);
  CHECK(f.texts == std::vector<std::string>{"hen"});

  c.confidence = 1.0;
  c.chosen_set = 0;
  for (double gamma : {0.0, 0.3, 0.99, 1.0}) {
    f = build_text_features(c, bank, gamma);
    CHECK(f.augmented);
    CHECK(f.texts == std::vector<std::string>{"hen which has a beak", "hen which has feathers"});
  }
  CHECK_THROWS_AS(build_text_features(c, bank, 1.5), ParameterError);
  c.chosen_set = 5;
  CHECK_THROWS_AS(build_text_features(c, bank, 0.5), ParameterError);
}

TEST_CASE("resolve_features honors variant toggles") {
  const auto bank = two_set_bank();
  std::map<std::string, CalibratedClass> cal = {{"hen", {"hen", 0.5, {{0}, {1}}, 1, true}}};
  PipelineConfig cfg;
  CHECK(resolve_features(bank, cal, cfg)[0].texts == std::vector<std::string>{"hen which has a comb"});
  cfg.variant = Variant::parse("no_calibration");
  auto f = resolve_features(bank, {}, cfg);
  CHECK(f[0].augmented);
  CHECK(f[0].texts == std::vector<std::string>{"hen which has a beak", "hen which has feathers"});
  cfg.variant = Variant::parse("no_knowledge,no_calibration");
  CHECK(resolve_features(bank, {}, cfg)[0].texts == std::vector<std::string>{"hen"});
  cfg.variant = Variant{};
  CHECK_THROWS_AS(resolve_features(bank, {}, cfg), Error);
}

TEST_CASE("variant parsing") {
  const auto v = Variant::parse("no_knowledge,no_objects");
  CHECK(v.no_knowledge);
  CHECK(v.no_objects);
  CHECK_FALSE(v.no_calibration);
  CHECK(v.to_string() == "no_objects,no_knowledge");
  CHECK(Variant::parse("").to_string() == "full");
  CHECK(Variant::parse("full").to_string() == "full");
  CHECK_THROWS_AS(Variant::parse("no_objects,bogus"), ParameterError);
}

TEST_CASE("class_score worked examples") {
  EmbeddingTable texts(3);
  texts.add({"t", EmbeddingKind::text, {1, 0, 0}});
  texts.add({"v", EmbeddingKind::text, {0.4f, 0, root(0.84)}});
  texts.add({"t2", EmbeddingKind::text, {0.4f, 0, root(0.84)}});
  texts.add({"t1", EmbeddingKind::text, {0.2f, root(0.96), 0}});
  const ClassTextFeatures one{"c", {"t"}, true};
  const ScoreWeights w;

  CHECK(std::abs(class_score(img({0.3f, root(0.91), 0}), {"x", {}}, one, texts, w) - 0.3) < 1e-6);
  CHECK(std::abs(class_score(img({0.2f, root(0.96), 0}), {"x", {"v"}}, one, texts, w) - 0.6) < 1e-6);
  const ClassTextFeatures two{"c", {"t1", "t2"}, true};
  CHECK(std::abs(class_score(img({1, 0, 0}), {"x", {}}, two, texts, w) - 0.3) < 1e-6);

  ScoreWeights half{0.5, 2.0};
  CHECK(std::abs(class_score(img({0.2f, root(0.96), 0}), {"x", {"v"}}, one, texts, half) - 0.9) < 1e-6);

  try {
    class_score(img({1, 0, 0}), {"x", {"ghost"}}, one, texts, w);
    FAIL("expected MissingEmbeddingError");
  } catch (const MissingEmbeddingError& e) {
    CHECK(e.key() == "ghost");
  }
}

TEST_CASE("class_score is invariant under text and object permutation") {
  std::mt19937_64 rng(12);
  std::normal_distribution<float> g;
  const std::size_t dim = 9;
  EmbeddingTable texts(dim);
  std::vector<std::string> names;
  for (int i = 0; i < 12; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = g(rng);
    names.push_back("s" + std::to_string(i));
    texts.add({names.back(), EmbeddingKind::text, v});
  }
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> x(dim);
    for (auto& c : x) c = g(rng);
    std::vector<std::string> t(names.begin(), names.begin() + 5);
    std::vector<std::string> o(names.begin() + 5, names.end());
    const double ref = class_score(img(x), {"x", o}, {"c", t, true}, texts, {});
    std::shuffle(t.begin(), t.end(), rng);
    std::shuffle(o.begin(), o.end(), rng);
    CHECK(class_score(img(x), {"x", o}, {"c", t, true}, texts, {}) == ref);
  }
}

TEST_CASE("max_matching_score examples") {
  auto one = max_matching_score({{"A", 0.37}}, 1.0);
  CHECK(one.s_max == 1.0);
  CHECK(one.argmax_class == "A");

  auto two = max_matching_score({{"A", 1.0}, {"B", 0.0}}, 1.0);
  CHECK(std::abs(two.s_max - std::exp(1.0) / (std::exp(1.0) + 1.0)) < 1e-12);
  CHECK(std::abs(two.s_max - 0.7311) < 1e-4);
  CHECK(two.argmax_class == "A");

  auto flat = max_matching_score({{"d", 0.2}, {"c", 0.2}, {"b", 0.2}, {"a", 0.2}}, 1.0);
  CHECK(flat.s_max == 0.25);
  CHECK(flat.argmax_class == "a");

  CHECK_THROWS_AS(max_matching_score({}, 1.0), EmptyInputError);
  CHECK_THROWS_AS(max_matching_score({{"A", 1.0}}, 0.0), ParameterError);
}

TEST_CASE("detect boundary") {
  CHECK(detect(0.5, 0.5) == 1);
  CHECK(detect(0.7311, 0.5) == 1);
  CHECK(detect(0.25, 0.5) == 0);
}

TEST_CASE("softmax properties") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-2.0, 2.0), temp(0.01, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::map<std::string, double> scores;
    const int n = 1 + trial % 25;
    for (int i = 0; i < n; ++i) scores["c" + std::to_string(i)] = u(rng);
    const double t = temp(rng);

    const auto probs = softmax(scores, t);
    double sum = 0;
    for (const auto& [_, p] : probs) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    const auto best = max_matching_score(scores, t);
    CHECK(best.s_max >= 1.0 / n - 1e-15);
    CHECK(best.s_max <= 1.0);

    const double shift = u(rng) * 10;
    auto shifted = scores;
    for (auto& [_, s] : shifted) s += shift;
    const auto moved = max_matching_score(shifted, t);
    CHECK(std::abs(moved.s_max - best.s_max) <= 1e-9);
    CHECK(moved.argmax_class == best.argmax_class);

    auto divided = scores;
    for (auto& [_, s] : divided) s /= t;
    const auto unit = max_matching_score(divided, 1.0);
    CHECK(unit.s_max == best.s_max);
    CHECK(unit.argmax_class == best.argmax_class);

    int prev = 1;
    for (double lambda = 0.0; lambda <= 1.0; lambda += 0.05) {
      const int d = detect(best.s_max, lambda);
      CHECK(d <= prev);
      prev = d;
    }
  }
}

TEST_CASE("run_pipeline on a hand-computed fixture") {
  EmbeddingTable texts(3);
  texts.add({"A", EmbeddingKind::text, {1, 0, 0}});
  texts.add({"B", EmbeddingKind::text, {0, 1, 0}});
  const std::vector<ClassTextFeatures> features = {{"A", {"A"}, false}, {"B", {"B"}, false}};

  auto sample = [](const char* id, std::vector<float> v) {
    return ScoringSample{{id, EmbeddingKind::image, std::move(v)}, {id, {}}};
  };
  const std::vector<ScoringSample> samples = {
      sample("id0", {1, 0, 0}),     sample("id1", {0, 1, 0}),
      sample("id2", {0.8f, 0.6f, 0}), sample("ood0", {0, 0, 1}),
      sample("ood1", {0.6f, 0.6f, root(0.28)}), sample("ood2", {0.1f, 0, root(0.99)})};

  PipelineConfig cfg;
  cfg.lambda = 0.54;
  const auto r = run_pipeline(samples, features, texts, cfg);
  REQUIRE(r.size() == 6);

  const double e = std::exp(1.0);
  const double expect_smax[] = {e / (e + 1), e / (e + 1), 1 / (1 + std::exp(-0.2)), 0.5, 0.5,
                                1 / (1 + std::exp(-0.1))};
  const char* expect_arg[] = {"A", "B", "A", "A", "A", "A"};
  const int expect_decision[] = {1, 1, 1, 0, 0, 0};
  for (int i = 0; i < 6; ++i) {
    CAPTURE(i);
    CHECK(r[i].image_id == samples[i].concepts.image_id);
    CHECK(std::abs(r[i].s_max - expect_smax[i]) < 1e-6);
    CHECK(r[i].argmax_class == expect_arg[i]);
    CHECK(r[i].decision == expect_decision[i]);
  }

  CHECK(run_pipeline({}, features, texts, cfg).empty());
  cfg.lambda.reset();
  CHECK_THROWS_AS(run_pipeline(samples, features, texts, cfg), ParameterError);
}

TEST_CASE("no_knowledge + no_objects equals a minimal MCM scorer") {
  WorldSpec spec;
  spec.seed = 5;
  spec.dim = 32;
  spec.n_classes = 6;
  spec.samples_per_class = 10;
  spec.n_ood = 30;
  spec.pool_size = 60;
  spec.hallucination_rate = 0.3;
  const auto world = generate(spec);

  std::vector<ScoringSample> samples;
  for (const auto& d : world.detections) samples.push_back({world.images.at(d.image_id), d});

  PipelineConfig cfg;
  cfg.lambda = 0.2;
  cfg.variant = Variant::parse("no_knowledge,no_objects");
  const auto features = resolve_features(world.bank, {}, cfg);
  const auto r = run_pipeline(samples, features, world.texts, cfg);
  cfg.threads = 3;
  const auto par = run_pipeline(samples, features, world.texts, cfg);

  const auto classes = world.bank.class_names();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<double> s;
    for (const auto& c : classes)
      s.push_back(oracle::cosine(samples[i].image.vec, world.texts.at(c).vec));
    double top = s[0];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < s.size(); ++j)
      if (s[j] > top) top = s[j], arg = j;
    double denom = 0;
    for (double v : s) denom += std::exp(v - top);
    CHECK(r[i].s_max == 1.0 / denom);
    CHECK(r[i].argmax_class == classes[arg]);
    CHECK(par[i].s_max == r[i].s_max);
    CHECK(par[i].per_class_scores == r[i].per_class_scores);
  }
}

TEST_CASE("detections file") {
  std::istringstream in(R"({"image_id":"a","objects":["mirror","chair","mirror","sink"]})" "\n"
                        R"({"image_id":"b","objects":[]})" "\n");
  const auto d = load_detections(in);
  REQUIRE(d.size() == 2);
  CHECK(d[0].objects == std::vector<std::string>{"mirror", "chair", "sink"});
  CHECK(d[1].objects.empty());
  CHECK(detections_to_jsonl(d) ==
        R"({"image_id":"a","objects":["mirror","chair","sink"]})" "\n"
        R"({"image_id":"b","objects":[]})" "\n");

  std::istringstream dup(R"({"image_id":"a","objects":[]})" "\n" R"({"image_id":"a","objects":[]})");
  CHECK_THROWS_AS(load_detections(dup), DuplicateIdError);
  std::istringstream bad(R"({"image_id":"a"})");
  CHECK_THROWS_AS(load_detections(bad), ParseError);
}

TEST_CASE("score report csv layout") {
  DetectionResult r;
  r.image_id = "img,1";
  r.per_class_scores = {{"b", 0.25}, {"a", 1.5}};
  r.s_max = 0.75;
  r.argmax_class = "a";
  r.decision = 1;
  CHECK(score_report_csv({r}, {SampleLabel::ood}) ==
        "image_id,label,s_max,argmax_class,decision,a,b\n\"img,1\",ood,0.75,a,1,1.5,0.25\n");
}

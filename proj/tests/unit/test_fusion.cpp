#include <doctest.h>

#include <algorithm>
#include <functional>

#include "probefuse/error.hpp"
#include "probefuse/fusion.hpp"
#include "probefuse/splitter.hpp"
#include "probefuse/synthetic.hpp"

using namespace probefuse;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Validation;
}

struct Fixture {
  std::vector<SentenceSample> samples;
  PartitionAssignment partition;
  LabeledSplit dev, test;
};

Fixture fixture(std::size_t speakers, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.speakers = speakers;
  spec.positive_rate = 0.2;
  spec.seed = seed;
  Fixture f;
  f.samples = assemble(synthetic_calls(spec)).samples;
  SplitOptions opt;
  opt.restarts = 50;
  f.partition = make_split(f.samples, opt);
  std::tie(f.dev, f.test) = labeled_splits(f.samples, f.partition);
  return f;
}

/// Min-max map fitted on the dev ids, clamped; recomputed here from scratch.
std::vector<double> normalized(const ScoreFile& s, const LabeledSplit& dev,
                               const LabeledSplit& target) {
  double lo = 1e300, hi = -1e300;
  for (const auto& id : dev.sample_ids) {
    lo = std::min(lo, s.entries.at(id));
    hi = std::max(hi, s.entries.at(id));
  }
  std::vector<double> out;
  for (const auto& id : target.sample_ids) {
    double x = hi > lo ? (s.entries.at(id) - lo) / (hi - lo) : 0.5;
    out.push_back(x < 0 ? 0 : x > 1 ? 1 : x);
  }
  return out;
}

}  // namespace

TEST_CASE("threshold candidates") {
  const auto t = threshold_candidates();
  REQUIRE(t.size() == 19);
  CHECK(t.front() == 0.05);
  CHECK(t[9] == 0.5);
  CHECK(t.back() == 0.95);
}

TEST_CASE("proportional weights from dev UARs") {
  const Fixture f = fixture(20, 4);
  const ScoreFile a = synthetic_scores(f.samples, "a", 2.0, 1);
  const ScoreFile b = synthetic_scores(f.samples, "b", 1.0, 2);
  const std::vector<ScoreFile> src = {a, b};
  const std::vector<double> uars = {0.80, 0.78};
  const LateFusionResult r = late_fuse(src, uars, {}, f.dev, f.test);
  REQUIRE(r.weights.size() == 2);
  // 0.80 / 1.58 and 0.78 / 1.58
  CHECK(r.weights[0] == doctest::Approx(0.50632911392405063).epsilon(1e-14));
  CHECK(r.weights[1] == doctest::Approx(0.49367088607594937).epsilon(1e-14));
}

TEST_CASE("degenerate weights reproduce the first source") {
  const Fixture f = fixture(20, 4);
  const ScoreFile a = synthetic_scores(f.samples, "a", 1.5, 1);
  const ScoreFile b = synthetic_scores(f.samples, "b", 0.5, 2);
  for (auto norm : {ScoreNormalization::None, ScoreNormalization::MinMaxOnDev}) {
    for (auto thr : {ThresholdRule::Fixed05, ThresholdRule::DevUarArgmax}) {
      LateFusionConfig cfg;
      cfg.weight_rule = WeightRule::Fixed;
      cfg.fixed_weights = {1.0, 0.0};
      cfg.score_normalization = norm;
      cfg.threshold_rule = thr;
      const std::vector<ScoreFile> src = {a, b};
      const LateFusionResult fused = late_fuse(src, {}, cfg, f.dev, f.test);
      const LateFusionResult alone = evaluate_source(a, cfg, f.dev, f.test);
      CHECK(fused.dev_predictions == alone.dev_predictions);
      CHECK(fused.test_predictions == alone.test_predictions);
      CHECK(fused.threshold == alone.threshold);
      CHECK(fused.report.splits == alone.report.splits);
    }
  }
}

TEST_CASE("identical sources fuse to themselves") {
  const Fixture f = fixture(20, 6);
  const ScoreFile a = synthetic_scores(f.samples, "a", 1.0, 3);
  ScoreFile copy = a;
  copy.model_id = "copy";
  const std::vector<ScoreFile> src = {a, copy};
  const std::vector<double> uars = {0.9, 0.3};
  const LateFusionResult fused = late_fuse(src, uars, {}, f.dev, f.test);
  const LateFusionResult alone = evaluate_source(a, {}, f.dev, f.test);
  CHECK(fused.dev_predictions == alone.dev_predictions);
  CHECK(fused.test_predictions == alone.test_predictions);
}

TEST_CASE("single source equals its own evaluation") {
  const Fixture f = fixture(20, 6);
  const ScoreFile a = synthetic_scores(f.samples, "a", 1.0, 3);
  const std::vector<ScoreFile> src = {a};
  const std::vector<double> uars = {0.7};
  const LateFusionResult fused = late_fuse(src, uars, {}, f.dev, f.test);
  const LateFusionResult alone = evaluate_source(a, {}, f.dev, f.test);
  CHECK(fused.weights == std::vector<double>{1.0});
  CHECK(fused.dev_scores == alone.dev_scores);
  CHECK(fused.test_scores == alone.test_scores);
  CHECK(fused.report.splits == alone.report.splits);
}

TEST_CASE("fused scores are convex combinations") {
  const Fixture f = fixture(60, 9);
  const std::vector<ScoreFile> src = {synthetic_scores(f.samples, "a", 1.0, 1),
                                      synthetic_scores(f.samples, "b", 2.0, 2),
                                      synthetic_scores(f.samples, "c", 0.0, 3)};
  const std::vector<double> uars = {0.7, 0.9, 0.5};
  const LateFusionResult r = late_fuse(src, uars, {}, f.dev, f.test);
  for (const auto* split : {&f.dev, &f.test}) {
    std::vector<std::vector<double>> norm;
    for (const auto& s : src) norm.push_back(normalized(s, f.dev, *split));
    const auto& fused = split == &f.dev ? r.dev_scores : r.test_scores;
    REQUIRE(fused.size() == split->sample_ids.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
      const double lo = std::min({norm[0][i], norm[1][i], norm[2][i]});
      const double hi = std::max({norm[0][i], norm[1][i], norm[2][i]});
      CHECK(fused[i] >= lo - 1e-12);
      CHECK(fused[i] <= hi + 1e-12);
      const double expect = (0.7 * norm[0][i] + 0.9 * norm[1][i] + 0.5 * norm[2][i]) / 2.1;
      CHECK(fused[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("dev threshold maximizes dev UAR and ties go to the lowest candidate") {
  LabeledSplit dev{{"a", "b", "c", "d"}, {1, 1, -1, -1}, {"m", "m", "m", "m"}};
  LabeledSplit test{{"e"}, {1}, {"m"}};
  ScoreFile s;
  s.model_id = "s";
  s.entries = {{"a", 0.9}, {"b", 0.7}, {"c", 0.3}, {"d", 0.2}, {"e", 0.31}};
  LateFusionConfig cfg;
  cfg.score_normalization = ScoreNormalization::None;
  const LateFusionResult r = evaluate_source(s, cfg, dev, test);
  // every threshold in [0.30, 0.70) separates dev; 0.30 is the first
  CHECK(r.threshold == 0.3);
  CHECK(r.report.splits.at("dev").overall.uar == 1.0);
  CHECK(r.test_predictions == std::vector<int>{1});
  cfg.threshold_rule = ThresholdRule::Fixed05;
  CHECK(evaluate_source(s, cfg, dev, test).test_predictions == std::vector<int>{-1});
}

TEST_CASE("late fusion errors") {
  const Fixture f = fixture(20, 4);
  const ScoreFile a = synthetic_scores(f.samples, "a", 1.0, 1);
  ScoreFile b = synthetic_scores(f.samples, "b", 1.0, 2);
  const std::vector<double> uars = {0.8, 0.7};
  {
    ScoreFile fewer = b;
    fewer.entries.erase(fewer.entries.begin());
    const std::vector<ScoreFile> src = {a, fewer};
    CHECK(kind_of([&] { late_fuse(src, uars, {}, f.dev, f.test); }) == ErrorKind::IdMismatch);
  }
  {
    const std::vector<ScoreFile> src = {a, b};
    LabeledSplit extra = f.dev;
    extra.sample_ids.push_back("nobody");
    extra.labels.push_back(1);
    extra.groups.push_back("male");
    CHECK(kind_of([&] { late_fuse(src, uars, {}, extra, f.test); }) == ErrorKind::IdMismatch);
    const std::vector<double> one = {0.8};
    CHECK(kind_of([&] { late_fuse(src, one, {}, f.dev, f.test); }) == ErrorKind::LengthMismatch);
    const std::vector<double> zero = {0.0, 0.0};
    CHECK(kind_of([&] { late_fuse(src, zero, {}, f.dev, f.test); }) == ErrorKind::Validation);
    LateFusionConfig neg;
    neg.weight_rule = WeightRule::Fixed;
    neg.fixed_weights = {1.0, -0.5};
    CHECK(kind_of([&] { late_fuse(src, {}, neg, f.dev, f.test); }) == ErrorKind::Validation);
  }
}

TEST_CASE("early fusion concatenates final layers") {
  const Fixture f = fixture(30, 5);
  SyntheticPackSpec as;
  as.model_id = "audio";
  as.layers = {0, 1};
  as.dim = 5;
  as.seed = 1;
  SyntheticPackSpec ts;
  ts.model_id = "text";
  ts.layers = {0, 4};
  ts.dim = 3;
  ts.separation = {{4, 6.0}};
  ts.seed = 2;
  const FeaturePack audio = synthetic_pack(f.samples, as);
  const FeaturePack text = synthetic_pack(f.samples, ts);

  GridSpec g;
  g.C = {0.1, 1};
  g.weights = {WeightSpec::fixed(1)};
  g.kernels = {KernelType::Linear};
  const EarlyFusionResult r = early_fuse(audio, text, f.samples, f.partition, g);
  CHECK(r.audio_dim == 5);
  CHECK(r.text_dim == 3);
  CHECK(r.fused_dim == 8);
  CHECK(r.audio_layer == 1);
  CHECK(r.text_layer == 4);
  REQUIRE(r.search.model.standardization.has_value());
  CHECK(r.search.model.standardization->mean.size() == 8);

  // permuting one pack's rows changes nothing downstream
  std::vector<SentenceSample> reversed(f.samples.rbegin(), f.samples.rend());
  const FeaturePack text_perm = synthetic_pack(reversed, ts);
  CHECK(text_perm.sample_ids != text.sample_ids);
  const EarlyFusionResult q = early_fuse(audio, text_perm, f.samples, f.partition, g);
  CHECK(q.search.dev_decision == r.search.dev_decision);
  CHECK(q.search.test_decision == r.search.test_decision);

  const EarlyFusionResult twin = early_fuse(audio, [&] {
    FeaturePack t = audio;
    t.model_id = "audio2";
    return t;
  }(), f.samples, f.partition, g);
  CHECK(twin.fused_dim == 10);
}

TEST_CASE("late fusion config JSON") {
  LateFusionConfig cfg;
  cfg.weight_rule = WeightRule::Fixed;
  cfg.fixed_weights = {0.3, 0.7};
  cfg.threshold_rule = ThresholdRule::Fixed05;
  const LateFusionConfig back = late_fusion_config_from_json(Json::parse(to_json(cfg).dump()));
  CHECK(back.weight_rule == WeightRule::Fixed);
  CHECK(back.fixed_weights == cfg.fixed_weights);
  CHECK(back.score_normalization == ScoreNormalization::MinMaxOnDev);
  CHECK(back.threshold_rule == ThresholdRule::Fixed05);
  CHECK(kind_of([] { late_fusion_config_from_json(Json::parse(R"({"weight_rule":"fixed"})")); }) ==
        ErrorKind::Validation);
  CHECK(kind_of([] { late_fusion_config_from_json(Json::parse(R"({"threshold_rule":"x"})")); }) ==
        ErrorKind::Validation);
}

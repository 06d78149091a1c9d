#include "probefuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "probefuse/error.hpp"

namespace probefuse {

std::vector<double> threshold_candidates() {
  std::vector<double> t;
  for (int k = 1; k <= 19; ++k) t.push_back(k / 20.0);
  return t;
}

std::pair<LabeledSplit, LabeledSplit> labeled_splits(std::span<const SentenceSample> samples,
                                                     const PartitionAssignment& partition) {
  LabeledSplit dev, test;
  for (const auto& s : samples) {
    const auto p = partition.find(s.speaker_id);
    if (!p) {
      fail(ErrorKind::UnknownSpeaker,
           "speaker " + s.speaker_id + " of sample " + s.sample_id + " has no partition");
    }
    if (*p == Partition::Train) continue;
    LabeledSplit& d = *p == Partition::Dev ? dev : test;
    d.sample_ids.push_back(s.sample_id);
    d.labels.push_back(s.positive() ? 1 : -1);
    d.groups.emplace_back(to_string(s.speaker_gender));
  }
  return {std::move(dev), std::move(test)};
}

namespace {

std::vector<double> lookup(const ScoreFile& src, const LabeledSplit& split) {
  std::vector<double> out;
  out.reserve(split.sample_ids.size());
  for (const auto& id : split.sample_ids) {
    auto it = src.entries.find(id);
    if (it == src.entries.end())
      fail(ErrorKind::IdMismatch, "score source " + src.model_id + " has no score for " + id);
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> threshold_at(std::span<const double> scores, double t) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > t ? 1 : -1;
  return out;
}

}  // namespace

LateFusionResult late_fuse(std::span<const ScoreFile> sources, std::span<const double> dev_uars,
                           const LateFusionConfig& cfg, const LabeledSplit& dev,
                           const LabeledSplit& test) {
  if (sources.empty()) fail(ErrorKind::Validation, "late fusion needs at least one source");
  for (const auto& s : sources) {
    if (s.entries.size() != sources.front().entries.size() ||
        !std::equal(s.entries.begin(), s.entries.end(), sources.front().entries.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; })) {
      fail(ErrorKind::IdMismatch, "late fusion: sources " + sources.front().model_id + " and " +
                                      s.model_id + " cover different samples");
    }
  }

  LateFusionResult r;
  std::vector<double> raw;
  if (cfg.weight_rule == WeightRule::DevUarProportional) {
    if (dev_uars.size() != sources.size())
      fail(ErrorKind::LengthMismatch, "late fusion: one dev UAR per source is required");
    raw.assign(dev_uars.begin(), dev_uars.end());
  } else {
    if (cfg.fixed_weights.size() != sources.size())
      fail(ErrorKind::LengthMismatch, "late fusion: one fixed weight per source is required");
    raw = cfg.fixed_weights;
  }
  double total = 0.0;
  for (double w : raw) {
    if (!(w >= 0.0) || !std::isfinite(w))
      fail(ErrorKind::Validation, "late fusion: weights must be finite and non-negative");
    total += w;
  }
  if (total <= 0.0) fail(ErrorKind::Validation, "late fusion: all weights are zero");
  for (double w : raw) r.weights.push_back(w / total);

  r.dev_scores.assign(dev.sample_ids.size(), 0.0);
  r.test_scores.assign(test.sample_ids.size(), 0.0);
  for (std::size_t k = 0; k < sources.size(); ++k) {
    std::vector<double> d = lookup(sources[k], dev);
    std::vector<double> t = lookup(sources[k], test);
    if (cfg.score_normalization == ScoreNormalization::MinMaxOnDev) {
      if (d.empty()) fail(ErrorKind::Validation, "late fusion: min-max normalization needs dev scores");
      const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
      const double min = *lo, range = *hi - *lo;
      auto norm = [&](double v) {
        const double x = range > 0.0 ? (v - min) / range : 0.5;
        return std::clamp(x, 0.0, 1.0);
      };
      for (double& v : d) v = norm(v);
      for (double& v : t) v = norm(v);
    }
    for (std::size_t i = 0; i < d.size(); ++i) r.dev_scores[i] += r.weights[k] * d[i];
    for (std::size_t i = 0; i < t.size(); ++i) r.test_scores[i] += r.weights[k] * t[i];
  }

  r.threshold = 0.5;
  if (cfg.threshold_rule == ThresholdRule::DevUarArgmax) {
    double best = -1.0;
    for (double t : threshold_candidates()) {
      const Metrics m = compute_metrics(threshold_at(r.dev_scores, t), dev.labels);
      const double u = m.uar.value_or(0.0);
      if (u > best) {
        best = u;
        r.threshold = t;
      }
    }
  }
  r.dev_predictions = threshold_at(r.dev_scores, r.threshold);
  r.test_predictions = threshold_at(r.test_scores, r.threshold);
  r.report.splits["dev"] = subgroup_eval(r.dev_predictions, dev.labels, dev.groups);
  r.report.splits["test"] = subgroup_eval(r.test_predictions, test.labels, test.groups);
  return r;
}

LateFusionResult evaluate_source(const ScoreFile& source, const LateFusionConfig& cfg,
                                 const LabeledSplit& dev, const LabeledSplit& test) {
  LateFusionConfig single = cfg;
  single.weight_rule = WeightRule::Fixed;
  single.fixed_weights = {1.0};
  return late_fuse(std::span(&source, 1), {}, single, dev, test);
}

EarlyFusionResult early_fuse(const FeaturePack& audio, const FeaturePack& text,
                             std::span<const SentenceSample> samples,
                             const PartitionAssignment& partition, const GridSpec& grid,
                             const SearchOptions& options, bool strict) {
  EarlyFusionResult r;
  r.audio_layer = audio.final_layer();
  r.text_layer = text.final_layer();
  r.audio_dim = audio.dim;
  r.text_dim = text.dim;
  const std::vector<FeaturePack> packs = {audio, text};
  const std::vector<int> layers = {r.audio_layer, r.text_layer};
  const FeaturePack joint = concat(packs, layers);
  r.fused_dim = joint.dim;
  DatasetView view = align(joint, joint.layers.front(), samples, partition, strict);
  view.block_dims = {audio.dim, text.dim};
  r.search = grid_search(view, grid, options);
  return r;
}

OrderedJson to_json(const LateFusionConfig& cfg) {
  OrderedJson j;
  j["weight_rule"] = cfg.weight_rule == WeightRule::Fixed ? "fixed" : "dev_uar_proportional";
  if (cfg.weight_rule == WeightRule::Fixed) j["fixed_weights"] = cfg.fixed_weights;
  j["score_normalization"] =
      cfg.score_normalization == ScoreNormalization::None ? "none" : "minmax_on_dev";
  j["threshold_rule"] = cfg.threshold_rule == ThresholdRule::Fixed05 ? "fixed_0_5" : "dev_uar_argmax";
  return j;
}

LateFusionConfig late_fusion_config_from_json(const Json& j) {
  LateFusionConfig cfg;
  if (!j.is_object()) fail(ErrorKind::Validation, "fusion config must be a JSON object");
  auto text = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key)) return std::nullopt;
    if (!j[key].is_string()) fail(ErrorKind::Validation, std::string("fusion.") + key + " must be a string");
    return j[key].get<std::string>();
  };
  if (auto v = text("weight_rule")) {
    if (*v == "dev_uar_proportional") cfg.weight_rule = WeightRule::DevUarProportional;
    else if (*v == "fixed") cfg.weight_rule = WeightRule::Fixed;
    else fail(ErrorKind::Validation, "fusion.weight_rule must be dev_uar_proportional or fixed");
  }
  if (j.contains("fixed_weights") && !j["fixed_weights"].is_null()) {
    for (const Json& w : j["fixed_weights"]) {
      if (!w.is_number()) fail(ErrorKind::Validation, "fusion.fixed_weights must hold numbers");
      cfg.fixed_weights.push_back(w.get<double>());
    }
  }
  if (auto v = text("score_normalization")) {
    if (*v == "none") cfg.score_normalization = ScoreNormalization::None;
    else if (*v == "minmax_on_dev") cfg.score_normalization = ScoreNormalization::MinMaxOnDev;
    else fail(ErrorKind::Validation, "fusion.score_normalization must be none or minmax_on_dev");
  }
  if (auto v = text("threshold_rule")) {
    if (*v == "fixed_0_5") cfg.threshold_rule = ThresholdRule::Fixed05;
    else if (*v == "dev_uar_argmax") cfg.threshold_rule = ThresholdRule::DevUarArgmax;
    else fail(ErrorKind::Validation, "fusion.threshold_rule must be fixed_0_5 or dev_uar_argmax");
  }
  if (cfg.weight_rule == WeightRule::Fixed && cfg.fixed_weights.empty())
    fail(ErrorKind::Validation, "fusion.fixed_weights required for the fixed weight rule");
  return cfg;
}

}  // namespace probefuse

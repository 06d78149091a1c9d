#pragma once

// Audio/text fusion.
//
// Late fusion combines per-source scores as a convex combination after
// optional min-max normalization fitted on dev. Early fusion concatenates the
// final layers of two packs and runs a grid search on the joint features.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probefuse/feature_store.hpp"
#include "probefuse/metrics.hpp"
#include "probefuse/probe.hpp"

namespace probefuse {

enum class WeightRule { DevUarProportional, Fixed };
enum class ScoreNormalization { None, MinMaxOnDev };
enum class ThresholdRule { Fixed05, DevUarArgmax };

struct LateFusionConfig {
  WeightRule weight_rule = WeightRule::DevUarProportional;
  std::vector<double> fixed_weights;
  ScoreNormalization score_normalization = ScoreNormalization::MinMaxOnDev;
  ThresholdRule threshold_rule = ThresholdRule::DevUarArgmax;
};

/// 0.05, 0.10, ..., 0.95.
std::vector<double> threshold_candidates();

/// Ids, ±1 labels and group names of one evaluation split.
struct LabeledSplit {
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
  std::vector<std::string> groups;
};

/// Dev and test samples in manifest order, grouped by speaker gender.
std::pair<LabeledSplit, LabeledSplit> labeled_splits(std::span<const SentenceSample> samples,
                                                     const PartitionAssignment& partition);

struct LateFusionResult {
  std::vector<double> weights;  // normalized, one per source
  double threshold = 0.5;
  std::vector<double> dev_scores;   // fused, aligned with the dev split
  std::vector<double> test_scores;  // fused, aligned with the test split
  std::vector<int> dev_predictions;
  std::vector<int> test_predictions;
  EvalReport report;
};

/// Throws Error{IdMismatch} when sources cover different samples or miss an
/// evaluated sample, Error{LengthMismatch} when weights or UARs do not match
/// the source count, and Error{Validation} for all-zero or negative weights.
LateFusionResult late_fuse(std::span<const ScoreFile> sources, std::span<const double> dev_uars,
                           const LateFusionConfig& cfg, const LabeledSplit& dev,
                           const LabeledSplit& test);

/// A single source evaluated under the config's normalization and threshold
/// rule; its dev UAR is what the proportional rule weighs by.
LateFusionResult evaluate_source(const ScoreFile& source, const LateFusionConfig& cfg,
                                 const LabeledSplit& dev, const LabeledSplit& test);

struct EarlyFusionResult {
  std::size_t audio_dim = 0;
  std::size_t text_dim = 0;
  std::size_t fused_dim = 0;
  int audio_layer = 0;
  int text_layer = 0;
  GridResult search;
};

/// Concatenates the final layers (audio first), standardizes each block on
/// train independently, and grid-searches the joint representation.
EarlyFusionResult early_fuse(const FeaturePack& audio, const FeaturePack& text,
                             std::span<const SentenceSample> samples,
                             const PartitionAssignment& partition, const GridSpec& grid,
                             const SearchOptions& options = {}, bool strict = true);

OrderedJson to_json(const LateFusionConfig& cfg);
LateFusionConfig late_fusion_config_from_json(const Json& j);

}  // namespace probefuse

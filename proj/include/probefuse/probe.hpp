#pragma once

// Hyperparameter grid search and two-stage layer probing.
//
// Stage 1 trains linear SVMs on every layer and picks the layer with the best
// dev UAR. Stage 2 runs the full kernel grid on that layer and on the final
// layer. Test scores are computed for selected configurations only.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probefuse/feature_store.hpp"
#include "probefuse/metrics.hpp"
#include "probefuse/svm.hpp"

namespace probefuse {

/// Positive-class weight: a number or "balanced" (n_neg / n_pos of train).
struct WeightSpec {
  bool balanced = false;
  double value = 1.0;

  static WeightSpec fixed(double v) { return {false, v}; }
  static WeightSpec balanced_weight() { return {true, 0.0}; }
  friend bool operator==(const WeightSpec&, const WeightSpec&) = default;
};

std::string to_string(const WeightSpec& w);

struct GridSpec {
  std::vector<double> C = {0.001, 0.01, 0.1, 1, 10, 100};
  std::vector<WeightSpec> weights = {WeightSpec::fixed(1), WeightSpec::fixed(2),
                                     WeightSpec::fixed(5), WeightSpec::fixed(10),
                                     WeightSpec::balanced_weight()};
  std::vector<KernelType> kernels = {KernelType::Linear, KernelType::Rbf, KernelType::Sigmoid,
                                     KernelType::Polynomial};
  std::vector<GammaSpec> gammas = {GammaSpec::scaled(),      GammaSpec::fixed(0.0001),
                                   GammaSpec::fixed(0.001),  GammaSpec::fixed(0.01),
                                   GammaSpec::fixed(0.1),    GammaSpec::fixed(1)};
  std::vector<int> degrees = {2, 3};
  std::vector<double> coef0s = {0.0};

  /// Default grid restricted to the linear kernel.
  static GridSpec linear_only();
};

struct GridPoint {
  SvmConfig config;
  WeightSpec weight;  // as specified, before resolving "balanced"
};

/// Cartesian expansion in order kernel (as listed), C ascending, weight,
/// gamma, degree, coef0; parameters a kernel does not use are not expanded.
/// Throws Error{EmptyGrid} for an empty list.
std::vector<GridPoint> expand(const GridSpec& grid, double balanced_weight);

struct SearchOptions {
  std::size_t jobs = 1;
  /// Kernel cache budget shared by concurrent trainings.
  std::size_t cache_bytes = kDefaultCacheBytes;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct LeaderboardEntry {
  std::size_t index = 0;
  GridPoint point;
  double dev_uar = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

struct GridResult {
  std::size_t best_index = 0;
  GridPoint best;
  SvmModel model;  // carries the train standardization
  double dev_uar = 0.0;
  EvalReport report;  // "dev" and "test", with gender subgroups
  std::vector<LeaderboardEntry> leaderboard;
  /// Decision values of the selected model, aligned with the view's splits.
  std::vector<double> dev_decision;
  std::vector<double> test_decision;
};

/// Trains every expanded configuration on train and ranks by dev UAR
/// (ties: earlier expansion order). Throws Error{EmptyGrid}, or
/// Error{SingleClass} when train or dev lacks a class.
GridResult grid_search(const DatasetView& view, const GridSpec& grid,
                       const SearchOptions& options = {});

/// Evaluates a trained model on the view's dev and test splits.
EvalReport evaluate_model(const SvmModel& model, const DatasetView& view);

struct LayerProbe {
  int layer = 0;
  GridPoint best;
  double dev_uar = 0.0;
  std::optional<double> test_uar;
  std::vector<LeaderboardEntry> leaderboard;
};

struct ProbeResult {
  std::string model_id;
  std::vector<LayerProbe> stage1;  // ascending layer id
  int selected_layer = 0;
  int final_layer = 0;
  std::vector<std::pair<int, GridResult>> stage2;  // ascending layer id
};

/// Stage-1 grid must contain only the linear kernel (Error{Validation}).
ProbeResult probe_layers(const FeaturePack& pack, std::span<const SentenceSample> samples,
                         const PartitionAssignment& partition, const GridSpec& stage1_grid,
                         const GridSpec& stage2_grid, const SearchOptions& options = {},
                         bool strict = true);

// Serialization ---------------------------------------------------------------

OrderedJson to_json(const GridPoint& p);
OrderedJson to_json(const LeaderboardEntry& e);
OrderedJson to_json(const GridSpec& g);
GridSpec grid_from_json(const Json& j, const GridSpec& defaults);
/// Summary without leaderboards.
OrderedJson to_json(const ProbeResult& r);

}  // namespace probefuse

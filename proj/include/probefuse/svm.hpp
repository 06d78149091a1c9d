#pragma once

// Binary soft-margin SVM with per-class box constraints.
//
// Solves the dual
//   max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//   s.t. 0 <= a_i <= C_i,  sum_i a_i y_i = 0
// with C_i = C * positive_class_weight for y_i = +1 and C_i = C otherwise,
// by sequential minimal optimization with second-order working-set
// selection. The decision function is f(x) = sum_i a_i y_i K(x_i, x) + b.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probefuse/matrix.hpp"

namespace probefuse {

enum class KernelType { Linear, Rbf, Sigmoid, Polynomial };

std::string_view to_string(KernelType k) noexcept;
std::optional<KernelType> parse_kernel(std::string_view name) noexcept;

/// Either a fixed gamma or "scale", resolved on the training matrix as
/// 1 / (dim * variance of all training values).
struct GammaSpec {
  bool scale = true;
  double value = 0.0;

  static GammaSpec fixed(double v) { return {false, v}; }
  static GammaSpec scaled() { return {true, 0.0}; }
  friend bool operator==(const GammaSpec&, const GammaSpec&) = default;
};

std::string to_string(const GammaSpec& g);

inline constexpr std::size_t kDefaultCacheBytes = 256ull << 20;

struct SvmConfig {
  double C = 1.0;
  KernelType kernel = KernelType::Linear;
  GammaSpec gamma;
  int degree = 3;
  double coef0 = 0.0;
  double positive_class_weight = 1.0;
  double tolerance = 1e-3;
  /// 0 selects max(10 n, 10000).
  std::size_t max_iterations = 0;
  std::uint64_t seed = 0;
  std::size_t cache_bytes = kDefaultCacheBytes;
};

/// Kernel with gamma already resolved.
struct KernelParams {
  KernelType type = KernelType::Linear;
  double gamma = 1.0;
  int degree = 3;
  double coef0 = 0.0;
};

double kernel_value(const KernelParams& k, std::span<const double> a, std::span<const double> b);

double resolve_gamma(const GammaSpec& g, const Matrix& train);

// Standardization ---------------------------------------------------------------

struct StandardizationParams {
  std::vector<double> mean;
  std::vector<double> divisor;  // std, or 1 for constant features; times sqrt(block dim)

  friend bool operator==(const StandardizationParams&, const StandardizationParams&) = default;
};

/// Per-feature z-scoring from train moments. With several `block_dims`, each
/// block's divisors are further multiplied by sqrt(block dim) so every block
/// carries the same total variance.
StandardizationParams standardize_fit(const Matrix& train,
                                      std::span<const std::size_t> block_dims = {});
Matrix standardize_apply(const StandardizationParams& params, const Matrix& m);

// Model -----------------------------------------------------------------------------

struct TrainingSummary {
  std::size_t iterations = 0;
  /// Maximal KKT violation m(a) - M(a) when training stopped.
  double duality_gap = 0.0;
  bool converged = false;
  double dual_objective = 0.0;
};

struct SvmModel {
  KernelParams kernel;
  double C = 1.0;
  double positive_class_weight = 1.0;
  Matrix support_vectors;            // standardized space
  std::vector<double> dual_coef;     // a_i y_i per support vector
  std::vector<std::size_t> support_indices;  // rows of the training matrix
  double bias = 0.0;
  std::optional<StandardizationParams> standardization;
  TrainingSummary summary;

  std::size_t dim() const noexcept { return support_vectors.cols(); }
};

/// Throws Error{SingleClass} unless both labels occur, Error{DimensionMismatch}
/// / Error{LengthMismatch} on shape errors, Error{NonFinite} on bad values.
SvmModel train(const Matrix& x, std::span<const int> y, const SvmConfig& cfg);

/// Applies the model's standardization first when it has one.
std::vector<double> decision(const SvmModel& model, const Matrix& x);

/// Sign of the decision value; exact zero maps to -1.
std::vector<int> predict(const SvmModel& model, const Matrix& x);

/// a_i for every training row (zero off the support set).
std::vector<double> training_alphas(const SvmModel& model, std::size_t n_train);

void save_model(const std::filesystem::path& path, const SvmModel& model);
SvmModel load_model(const std::filesystem::path& path);

}  // namespace probefuse

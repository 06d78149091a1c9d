#pragma once

// Shared by unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "../oracles/qp_oracle.hpp"
#include "probefuse/svm.hpp"
#include "probefuse/util.hpp"

namespace testing_support {

using probefuse::KernelType;
using probefuse::Matrix;

inline Matrix to_matrix(const oracle::Rows& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

inline std::string kernel_name(KernelType k) { return std::string(probefuse::to_string(k)); }

struct Instance {
  oracle::Problem problem;
  probefuse::SvmConfig config;
};

/// Random dual problem with both classes. Gaussian blobs whose centres are
/// `separation` apart along every axis. Oracle-sized sigmoid instances
/// (n <= 12) are redrawn until their Gram matrix is positive semidefinite on
/// sums-to-zero vectors, which keeps the dual convex on its feasible set.
inline Instance random_instance(probefuse::SplitMix64& rng, KernelType kernel, std::size_t n,
                                std::size_t d, double separation = 1.0) {
  while (true) {
    Instance inst;
    auto& p = inst.problem;
    p.x.assign(n, std::vector<double>(d));
    p.y.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      p.y[i] = i % 2 == 0 ? 1 : -1;
      for (std::size_t k = 0; k < d; ++k)
        p.x[i][k] = rng.normal() + 0.5 * separation * p.y[i];
    }
    const double cs[] = {0.1, 1.0, 10.0};
    const double ws[] = {1.0, 2.0, 5.0};
    p.C = cs[rng.below(3)];
    p.positive_weight = ws[rng.below(3)];
    p.k.type = kernel_name(kernel);

    auto& cfg = inst.config;
    cfg.kernel = kernel;
    cfg.C = p.C;
    cfg.positive_class_weight = p.positive_weight;
    cfg.tolerance = 1e-9;
    cfg.max_iterations = 1000000;

    switch (kernel) {
      case KernelType::Linear:
        p.k.gamma = 1.0;
        break;
      case KernelType::Rbf:
        if (rng.below(2) == 0) {
          cfg.gamma = probefuse::GammaSpec::scaled();
          p.k.gamma = oracle::scale_gamma(p.x);
        } else {
          p.k.gamma = 0.1 + rng.uniform();
          cfg.gamma = probefuse::GammaSpec::fixed(p.k.gamma);
        }
        break;
      case KernelType::Sigmoid:
        p.k.gamma = 0.01 + 0.05 * rng.uniform();
        p.k.coef0 = -1.0;
        cfg.gamma = probefuse::GammaSpec::fixed(p.k.gamma);
        cfg.coef0 = p.k.coef0;
        break;
      case KernelType::Polynomial:
        p.k.gamma = 0.2 + 0.5 * rng.uniform();
        p.k.degree = 2 + static_cast<int>(rng.below(2));
        p.k.coef0 = 1.0;
        cfg.gamma = probefuse::GammaSpec::fixed(p.k.gamma);
        cfg.degree = p.k.degree;
        cfg.coef0 = p.k.coef0;
        break;
    }
    if (kernel == KernelType::Sigmoid && n <= 12) {
      const auto g = oracle::gram(p.k, p.x);
      if (oracle::projected_min_eigenvalue(g) < 0.0) continue;
    }
    return inst;
  }
}

/// Number of training points violating
///   a_i = 0   =>  y_i f(x_i) >= 1 - tol
///   a_i = C_i =>  y_i f(x_i) <= 1 + tol
/// plus any a_i outside [0, C_i].
inline std::size_t kkt_violations(const probefuse::SvmModel& model, const Matrix& x,
                                  const std::vector<int>& y, double tol) {
  const auto alpha = probefuse::training_alphas(model, x.rows());
  const auto f = probefuse::decision(model, x);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double ci = y[i] > 0 ? model.C * model.positive_class_weight : model.C;
    const double m = y[i] * f[i];
    if (alpha[i] < 0.0 || alpha[i] > ci) ++bad;
    else if (alpha[i] == 0.0 && m < 1.0 - tol) ++bad;
    else if (alpha[i] == ci && m > 1.0 + tol) ++bad;
  }
  return bad;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("probefuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support

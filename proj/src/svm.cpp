#include "probefuse/svm.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <list>
#include <numeric>
#include <unordered_map>

#include "binary_io.hpp"
#include "probefuse/error.hpp"
#include "probefuse/util.hpp"

namespace probefuse {

std::string_view to_string(KernelType k) noexcept {
  switch (k) {
    case KernelType::Linear: return "linear";
    case KernelType::Rbf: return "rbf";
    case KernelType::Sigmoid: return "sigmoid";
    case KernelType::Polynomial: return "polynomial";
  }
  return "linear";
}

std::optional<KernelType> parse_kernel(std::string_view name) noexcept {
  if (name == "linear") return KernelType::Linear;
  if (name == "rbf") return KernelType::Rbf;
  if (name == "sigmoid") return KernelType::Sigmoid;
  if (name == "polynomial" || name == "poly") return KernelType::Polynomial;
  return std::nullopt;
}

std::string to_string(const GammaSpec& g) {
  if (g.scale) return "scale";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", g.value);
  return buf;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_finite(const Matrix& x, const char* what) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, std::string(what) + " contains non-finite values");
  }
}

}  // namespace

double kernel_value(const KernelParams& k, std::span<const double> a, std::span<const double> b) {
  switch (k.type) {
    case KernelType::Linear: return dot(a, b);
    case KernelType::Rbf: return std::exp(-k.gamma * squared_distance(a, b));
    case KernelType::Sigmoid: return std::tanh(k.gamma * dot(a, b) + k.coef0);
    case KernelType::Polynomial: return std::pow(k.gamma * dot(a, b) + k.coef0, k.degree);
  }
  return 0.0;
}

double resolve_gamma(const GammaSpec& g, const Matrix& train) {
  if (!g.scale) {
    if (!(g.value > 0.0) || !std::isfinite(g.value))
      fail(ErrorKind::Validation, "gamma must be positive");
    return g.value;
  }
  const std::size_t dim = std::max<std::size_t>(train.cols(), 1);
  const auto& v = train.data();
  if (v.empty()) return 1.0 / static_cast<double>(dim);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(v.size());
  return var > 0.0 ? 1.0 / (static_cast<double>(dim) * var) : 1.0 / static_cast<double>(dim);
}

// Standardization ---------------------------------------------------------------

StandardizationParams standardize_fit(const Matrix& train, std::span<const std::size_t> block_dims) {
  if (train.rows() == 0) fail(ErrorKind::Validation, "standardize_fit needs at least one row");
  check_finite(train, "training matrix");
  const std::size_t d = train.cols();
  const double n = static_cast<double>(train.rows());
  StandardizationParams p;
  p.mean.assign(d, 0.0);
  p.divisor.assign(d, 1.0);
  for (std::size_t r = 0; r < train.rows(); ++r) {
    const auto row = train.row(r);
    for (std::size_t c = 0; c < d; ++c) p.mean[c] += row[c];
  }
  for (double& m : p.mean) m /= n;
  std::vector<double> ss(d, 0.0);
  for (std::size_t r = 0; r < train.rows(); ++r) {
    const auto row = train.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = row[c] - p.mean[c];
      ss[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    const double sd = std::sqrt(ss[c] / n);
    p.divisor[c] = sd > 0.0 ? sd : 1.0;
  }
  if (block_dims.size() > 1) {
    std::size_t total = 0;
    for (std::size_t b : block_dims) total += b;
    if (total != d) {
      fail(ErrorKind::DimensionMismatch, "block dims sum to " + std::to_string(total) +
                                             " but matrix has " + std::to_string(d) + " columns");
    }
    std::size_t offset = 0;
    for (std::size_t b : block_dims) {
      const double w = std::sqrt(static_cast<double>(b));
      for (std::size_t c = offset; c < offset + b; ++c) p.divisor[c] *= w;
      offset += b;
    }
  }
  return p;
}

Matrix standardize_apply(const StandardizationParams& params, const Matrix& m) {
  if (m.rows() > 0 && m.cols() != params.mean.size()) {
    fail(ErrorKind::DimensionMismatch, "standardization expects " +
                                           std::to_string(params.mean.size()) + " columns, got " +
                                           std::to_string(m.cols()));
  }
  check_finite(m, "matrix");
  Matrix out(m.rows(), params.mean.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c)
      dst[c] = (src[c] - params.mean[c]) / params.divisor[c];
  }
  return out;
}

// Solver ------------------------------------------------------------------------

namespace {

/// Kernel columns K(x_i, .) with a byte-bounded LRU cache.
class KernelColumns {
 public:
  KernelColumns(const Matrix& x, const KernelParams& k, std::size_t cache_bytes)
      : x_(x), k_(k), n_(x.rows()) {
    const std::size_t column_bytes = std::max<std::size_t>(n_ * sizeof(double), 1);
    capacity_ = std::max<std::size_t>(2, cache_bytes / column_bytes);
    diag_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) diag_[i] = kernel_value(k_, x_.row(i), x_.row(i));
  }

  double diag(std::size_t i) const { return diag_[i]; }

  /// The returned span stays valid until two further distinct columns are
  /// requested.
  std::span<const double> column(std::size_t i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->values;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().index);
      lru_.pop_back();
    }
    Entry e{i, std::vector<double>(n_)};
    const auto xi = x_.row(i);
    for (std::size_t j = 0; j < n_; ++j) e.values[j] = kernel_value(k_, xi, x_.row(j));
    lru_.push_front(std::move(e));
    index_[i] = lru_.begin();
    return lru_.front().values;
  }

 private:
  struct Entry {
    std::size_t index;
    std::vector<double> values;
  };

  const Matrix& x_;
  KernelParams k_;
  std::size_t n_;
  std::size_t capacity_;
  std::vector<double> diag_;
  std::list<Entry> lru_;
  std::unordered_map<std::size_t, std::list<Entry>::iterator> index_;
};

constexpr double kTau = 1e-12;

class SmoSolver {
 public:
  SmoSolver(KernelColumns& kernel, std::span<const int> y, std::vector<double> upper, double eps)
      : kernel_(kernel), n_(y.size()), upper_(std::move(upper)), eps_(eps) {
    y_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) y_[i] = y[i] > 0 ? 1.0 : -1.0;
    alpha_.assign(n_, 0.0);
    grad_.assign(n_, -1.0);
  }

  TrainingSummary run(std::size_t max_iterations) {
    TrainingSummary s;
    while (true) {
      std::size_t i = 0, j = 0;
      double gap = 0.0;
      const bool optimal = select_working_set(i, j, gap);
      s.duality_gap = gap;
      if (optimal) {
        s.converged = true;
        break;
      }
      if (s.iterations >= max_iterations) break;
      ++s.iterations;
      update_pair(i, j);
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < n_; ++i) obj += alpha_[i] * (1.0 - grad_[i]);
    s.dual_objective = 0.5 * obj;
    return s;
  }

  const std::vector<double>& alpha() const { return alpha_; }

  /// b = -rho, libsvm convention: mean of y_i G_i over free variables, else
  /// the midpoint of the feasible interval.
  double bias() const {
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double yg = y_[i] * grad_[i];
      if (at_upper(i)) {
        if (y_[i] < 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else if (at_lower(i)) {
        if (y_[i] > 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else {
        ++n_free;
        sum_free += yg;
      }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
    return -rho;
  }

 private:
  bool at_upper(std::size_t i) const { return alpha_[i] >= upper_[i]; }
  bool at_lower(std::size_t i) const { return alpha_[i] <= 0.0; }

  // Second-order working set selection (Fan, Chen and Lin, 2005).
  bool select_working_set(std::size_t& out_i, std::size_t& out_j, double& gap) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t gmax_idx = -1;
    std::ptrdiff_t gmin_idx = -1;
    double obj_diff_min = std::numeric_limits<double>::infinity();

    for (std::size_t t = 0; t < n_; ++t) {
      if (y_[t] > 0) {
        if (!at_upper(t) && -grad_[t] >= gmax) {
          gmax = -grad_[t];
          gmax_idx = static_cast<std::ptrdiff_t>(t);
        }
      } else {
        if (!at_lower(t) && grad_[t] >= gmax) {
          gmax = grad_[t];
          gmax_idx = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (gmax_idx < 0) {
      gap = 0.0;
      return true;
    }
    const std::size_t i = static_cast<std::size_t>(gmax_idx);
    const auto ki = kernel_.column(i);
    const double kii = kernel_.diag(i);

    for (std::size_t j = 0; j < n_; ++j) {
      if (y_[j] > 0) {
        if (at_lower(j)) continue;
        const double grad_diff = gmax + grad_[j];
        gmax2 = std::max(gmax2, grad_[j]);
        if (grad_diff > 0) {
          double quad = kii + kernel_.diag(j) - 2.0 * ki[j];
          if (quad <= 0) quad = kTau;
          const double obj_diff = -(grad_diff * grad_diff) / quad;
          if (obj_diff <= obj_diff_min) {
            gmin_idx = static_cast<std::ptrdiff_t>(j);
            obj_diff_min = obj_diff;
          }
        }
      } else {
        if (at_upper(j)) continue;
        const double grad_diff = gmax - grad_[j];
        gmax2 = std::max(gmax2, -grad_[j]);
        if (grad_diff > 0) {
          double quad = kii + kernel_.diag(j) - 2.0 * ki[j];
          if (quad <= 0) quad = kTau;
          const double obj_diff = -(grad_diff * grad_diff) / quad;
          if (obj_diff <= obj_diff_min) {
            gmin_idx = static_cast<std::ptrdiff_t>(j);
            obj_diff_min = obj_diff;
          }
        }
      }
    }
    gap = gmax + gmax2;
    if (!std::isfinite(gap)) gap = 0.0;
    if (gap < eps_ || gmin_idx < 0) return true;
    out_i = i;
    out_j = static_cast<std::size_t>(gmin_idx);
    return false;
  }

  void update_pair(std::size_t i, std::size_t j) {
    const auto ki = kernel_.column(i);
    const auto kj = kernel_.column(j);
    const double ci = upper_[i];
    const double cj = upper_[j];
    const double old_ai = alpha_[i];
    const double old_aj = alpha_[j];
    double& ai = alpha_[i];
    double& aj = alpha_[j];
    const double qij = y_[i] * y_[j] * ki[j];

    if (y_[i] != y_[j]) {
      double quad = kernel_.diag(i) + kernel_.diag(j) + 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-grad_[i] - grad_[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0) {
        if (aj < 0) {
          aj = 0;
          ai = diff;
        }
      } else {
        if (ai < 0) {
          ai = 0;
          aj = -diff;
        }
      }
      if (diff > ci - cj) {
        if (ai > ci) {
          ai = ci;
          aj = ci - diff;
        }
      } else {
        if (aj > cj) {
          aj = cj;
          ai = cj + diff;
        }
      }
    } else {
      double quad = kernel_.diag(i) + kernel_.diag(j) - 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (grad_[i] - grad_[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > ci) {
        if (ai > ci) {
          ai = ci;
          aj = sum - ci;
        }
      } else {
        if (aj < 0) {
          aj = 0;
          ai = sum;
        }
      }
      if (sum > cj) {
        if (aj > cj) {
          aj = cj;
          ai = sum - cj;
        }
      } else {
        if (ai < 0) {
          ai = 0;
          aj = sum;
        }
      }
    }

    const double dai = (ai - old_ai) * y_[i];
    const double daj = (aj - old_aj) * y_[j];
    for (std::size_t k = 0; k < n_; ++k) grad_[k] += y_[k] * (ki[k] * dai + kj[k] * daj);
  }

  KernelColumns& kernel_;
  std::size_t n_;
  std::vector<double> y_;
  std::vector<double> upper_;
  std::vector<double> alpha_;
  std::vector<double> grad_;
  double eps_;
};

}  // namespace

SvmModel train(const Matrix& x, std::span<const int> y, const SvmConfig& cfg) {
  if (x.rows() != y.size()) {
    fail(ErrorKind::LengthMismatch, "train: " + std::to_string(x.rows()) + " rows but " +
                                        std::to_string(y.size()) + " labels");
  }
  if (!(cfg.C > 0.0) || !(cfg.positive_class_weight > 0.0) || !(cfg.tolerance > 0.0))
    fail(ErrorKind::Validation, "train: C, class weight and tolerance must be positive");
  if (cfg.kernel == KernelType::Polynomial && cfg.degree < 1)
    fail(ErrorKind::Validation, "train: polynomial degree must be positive");
  check_finite(x, "training matrix");
  bool has_pos = false, has_neg = false;
  for (int label : y) {
    if (label == 1) has_pos = true;
    else if (label == -1) has_neg = true;
    else fail(ErrorKind::Validation, "train: labels must be +1 or -1");
  }
  if (!has_pos || !has_neg) fail(ErrorKind::SingleClass, "train: both classes are required");

  SvmModel model;
  model.kernel = {cfg.kernel, resolve_gamma(cfg.gamma, x), cfg.degree, cfg.coef0};
  if (cfg.kernel == KernelType::Linear) model.kernel.gamma = 1.0;
  model.C = cfg.C;
  model.positive_class_weight = cfg.positive_class_weight;

  const std::size_t n = x.rows();
  std::vector<double> upper(n);
  for (std::size_t i = 0; i < n; ++i)
    upper[i] = y[i] > 0 ? cfg.C * cfg.positive_class_weight : cfg.C;

  KernelColumns kernel(x, model.kernel, cfg.cache_bytes);
  SmoSolver solver(kernel, y, std::move(upper), cfg.tolerance);
  const std::size_t max_iter =
      cfg.max_iterations > 0 ? cfg.max_iterations : std::max<std::size_t>(10 * n, 10000);
  model.summary = solver.run(max_iter);
  model.bias = solver.bias();

  const auto& alpha = solver.alpha();
  model.support_vectors = Matrix(0, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] <= 0.0) continue;
    model.support_vectors.append_row(x.row(i));
    model.dual_coef.push_back(alpha[i] * (y[i] > 0 ? 1.0 : -1.0));
    model.support_indices.push_back(i);
  }
  return model;
}

std::vector<double> decision(const SvmModel& model, const Matrix& x) {
  if (x.rows() == 0) return {};
  const std::size_t expected =
      model.standardization ? model.standardization->mean.size() : model.dim();
  if (x.cols() != expected) {
    fail(ErrorKind::DimensionMismatch, "decision: model expects " + std::to_string(expected) +
                                           " features, got " + std::to_string(x.cols()));
  }
  const Matrix z = model.standardization ? standardize_apply(*model.standardization, x) : x;
  check_finite(z, "input matrix");

  std::vector<double> out(z.rows(), model.bias);
  if (model.kernel.type == KernelType::Linear) {
    std::vector<double> w(z.cols(), 0.0);
    for (std::size_t s = 0; s < model.dual_coef.size(); ++s) {
      const auto sv = model.support_vectors.row(s);
      for (std::size_t c = 0; c < w.size(); ++c) w[c] += model.dual_coef[s] * sv[c];
    }
    for (std::size_t r = 0; r < z.rows(); ++r) out[r] += dot(w, z.row(r));
    return out;
  }
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    double f = 0.0;
    for (std::size_t s = 0; s < model.dual_coef.size(); ++s)
      f += model.dual_coef[s] * kernel_value(model.kernel, model.support_vectors.row(s), row);
    out[r] += f;
  }
  return out;
}

std::vector<int> predict(const SvmModel& model, const Matrix& x) {
  const auto f = decision(model, x);
  std::vector<int> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] > 0.0 ? 1 : -1;
  return out;
}

std::vector<double> training_alphas(const SvmModel& model, std::size_t n_train) {
  std::vector<double> alpha(n_train, 0.0);
  for (std::size_t s = 0; s < model.support_indices.size(); ++s) {
    if (model.support_indices[s] >= n_train)
      fail(ErrorKind::LengthMismatch, "support index beyond training size");
    alpha[model.support_indices[s]] = std::abs(model.dual_coef[s]);
  }
  return alpha;
}

// Serialization -----------------------------------------------------------------
//
// "SVM1" | u32 version | u32 n_sv | u32 dim | u32 kernel | f64 gamma |
// u32 degree | f64 coef0 | f64 C | f64 weight | f64 bias | u64 iterations |
// f64 gap | u8 converged | f64 dual objective | u8 has_std |
// [dim f64 mean, dim f64 divisor] | n_sv x (u32 index, f64 coef, dim f64 row)

namespace {
constexpr std::string_view kModelMagic = "SVM1";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const std::filesystem::path& path, const SvmModel& model) {
  detail::ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.dual_coef.size()));
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u32(static_cast<std::uint32_t>(model.kernel.type));
  w.f64(model.kernel.gamma);
  w.u32(static_cast<std::uint32_t>(model.kernel.degree));
  w.f64(model.kernel.coef0);
  w.f64(model.C);
  w.f64(model.positive_class_weight);
  w.f64(model.bias);
  w.u64(model.summary.iterations);
  w.f64(model.summary.duality_gap);
  w.u8(model.summary.converged ? 1 : 0);
  w.f64(model.summary.dual_objective);
  w.u8(model.standardization ? 1 : 0);
  if (model.standardization) {
    for (double v : model.standardization->mean) w.f64(v);
    for (double v : model.standardization->divisor) w.f64(v);
  }
  for (std::size_t s = 0; s < model.dual_coef.size(); ++s) {
    w.u32(static_cast<std::uint32_t>(s < model.support_indices.size() ? model.support_indices[s] : 0));
    w.f64(model.dual_coef[s]);
    for (double v : model.support_vectors.row(s)) w.f64(v);
  }
  write_text_file(path, w.str());
}

SvmModel load_model(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  detail::ByteReader r(bytes, path.string());
  if (bytes.size() < 4 || r.bytes(4) != kModelMagic)
    fail(ErrorKind::BadMagic, path.string() + ": not an SVM model file");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    fail(ErrorKind::VersionMismatch, path.string() + ": unsupported model version");
  const std::size_t n_sv = r.u32();
  const std::size_t dim = r.u32();
  SvmModel m;
  const std::uint32_t kernel = r.u32();
  if (kernel > static_cast<std::uint32_t>(KernelType::Polynomial))
    fail(ErrorKind::Validation, path.string() + ": unknown kernel id");
  m.kernel.type = static_cast<KernelType>(kernel);
  m.kernel.gamma = r.f64();
  m.kernel.degree = static_cast<int>(r.u32());
  m.kernel.coef0 = r.f64();
  m.C = r.f64();
  m.positive_class_weight = r.f64();
  m.bias = r.f64();
  m.summary.iterations = r.u64();
  m.summary.duality_gap = r.f64();
  m.summary.converged = r.u8() != 0;
  m.summary.dual_objective = r.f64();
  if (r.u8() != 0) {
    StandardizationParams p;
    p.mean.resize(dim);
    p.divisor.resize(dim);
    for (double& v : p.mean) v = r.f64();
    for (double& v : p.divisor) v = r.f64();
    m.standardization = std::move(p);
  }
  m.support_vectors = Matrix(n_sv, dim);
  for (std::size_t s = 0; s < n_sv; ++s) {
    m.support_indices.push_back(r.u32());
    m.dual_coef.push_back(r.f64());
    for (double& v : m.support_vectors.row(s)) v = r.f64();
  }
  if (r.remaining() != 0) fail(ErrorKind::Io, path.string() + ": trailing bytes");
  return m;
}

}  // namespace probefuse

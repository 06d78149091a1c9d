#include "probefuse/probe.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "probefuse/error.hpp"

namespace probefuse {

std::string to_string(const WeightSpec& w) {
  if (w.balanced) return "balanced";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", w.value);
  return buf;
}

GridSpec GridSpec::linear_only() {
  GridSpec g;
  g.kernels = {KernelType::Linear};
  return g;
}

std::vector<GridPoint> expand(const GridSpec& grid, double balanced_weight) {
  if (grid.C.empty() || grid.weights.empty() || grid.kernels.empty())
    fail(ErrorKind::EmptyGrid, "grid has an empty C, weight or kernel list");
  std::vector<double> cs = grid.C;
  std::sort(cs.begin(), cs.end());

  std::vector<GridPoint> out;
  for (KernelType kernel : grid.kernels) {
    const bool uses_gamma = kernel != KernelType::Linear;
    const bool uses_coef0 = kernel == KernelType::Sigmoid || kernel == KernelType::Polynomial;
    const bool uses_degree = kernel == KernelType::Polynomial;
    if ((uses_gamma && grid.gammas.empty()) || (uses_coef0 && grid.coef0s.empty()) ||
        (uses_degree && grid.degrees.empty())) {
      fail(ErrorKind::EmptyGrid,
           "grid lists no values for a parameter of kernel " + std::string(to_string(kernel)));
    }
    const std::vector<GammaSpec> gammas = uses_gamma ? grid.gammas : std::vector{GammaSpec{}};
    const std::vector<int> degrees = uses_degree ? grid.degrees : std::vector{3};
    const std::vector<double> coef0s = uses_coef0 ? grid.coef0s : std::vector{0.0};

    for (double c : cs) {
      for (const WeightSpec& w : grid.weights) {
        for (const GammaSpec& g : gammas) {
          for (int d : degrees) {
            for (double r : coef0s) {
              GridPoint p;
              p.weight = w;
              p.config.kernel = kernel;
              p.config.C = c;
              p.config.positive_class_weight = w.balanced ? balanced_weight : w.value;
              p.config.gamma = g;
              p.config.degree = d;
              p.config.coef0 = r;
              out.push_back(p);
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

void require_both_classes(const SplitData& d, const char* split) {
  bool pos = false, neg = false;
  for (int l : d.labels) (l > 0 ? pos : neg) = true;
  if (!pos || !neg) {
    fail(ErrorKind::SingleClass,
         std::string("grid search: ") + split + " partition must contain both classes");
  }
}

std::vector<std::string> gender_groups(const SplitData& d) {
  std::vector<std::string> g;
  g.reserve(d.genders.size());
  for (Gender x : d.genders) g.emplace_back(to_string(x));
  return g;
}

std::vector<int> signs(const std::vector<double>& f) {
  std::vector<int> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] > 0.0 ? 1 : -1;
  return out;
}

}  // namespace

EvalReport evaluate_model(const SvmModel& model, const DatasetView& view) {
  EvalReport report;
  for (Partition p : {Partition::Dev, Partition::Test}) {
    const SplitData& d = view.of(p);
    const auto pred = signs(decision(model, d.features));
    report.splits[std::string(to_string(p))] = subgroup_eval(pred, d.labels, gender_groups(d));
  }
  return report;
}

GridResult grid_search(const DatasetView& view, const GridSpec& grid, const SearchOptions& options) {
  const SplitData& train_split = view.of(Partition::Train);
  const SplitData& dev_split = view.of(Partition::Dev);
  if (train_split.size() == 0 || dev_split.size() == 0)
    fail(ErrorKind::Validation, "grid search: train and dev partitions must be non-empty");
  require_both_classes(train_split, "train");
  require_both_classes(dev_split, "dev");

  const StandardizationParams params = standardize_fit(train_split.features, view.block_dims);
  const Matrix x_train = standardize_apply(params, train_split.features);
  const Matrix x_dev = standardize_apply(params, dev_split.features);

  std::size_t n_pos = 0;
  for (int l : train_split.labels) n_pos += l > 0 ? 1 : 0;
  const double balanced =
      static_cast<double>(train_split.size() - n_pos) / static_cast<double>(n_pos);

  const std::vector<GridPoint> points = expand(grid, balanced);
  if (points.empty()) fail(ErrorKind::EmptyGrid, "grid expands to no configurations");

  const std::size_t jobs = std::max<std::size_t>(options.jobs, 1);
  const std::size_t cache = std::max<std::size_t>(options.cache_bytes / jobs, 1 << 20);
  auto configure = [&](SvmConfig cfg) {
    cfg.tolerance = options.tolerance;
    cfg.seed = options.seed;
    cfg.cache_bytes = cache;
    return cfg;
  };

  std::vector<LeaderboardEntry> board(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t k) {
    const SvmModel m = train(x_train, train_split.labels, configure(points[k].config));
    const Metrics dev = compute_metrics(signs(decision(m, x_dev)), dev_split.labels);
    board[k] = {k, points[k], *dev.uar, m.summary.converged, m.summary.iterations};
  });

  std::size_t best = 0;
  for (std::size_t k = 1; k < board.size(); ++k) {
    if (board[k].dev_uar > board[best].dev_uar) best = k;
  }

  GridResult result;
  result.best_index = best;
  result.best = points[best];
  result.best.config = configure(points[best].config);
  result.model = train(x_train, train_split.labels, result.best.config);
  result.model.standardization = params;
  result.dev_uar = board[best].dev_uar;
  result.leaderboard = std::move(board);
  result.report = evaluate_model(result.model, view);
  result.dev_decision = decision(result.model, dev_split.features);
  result.test_decision = decision(result.model, view.of(Partition::Test).features);
  return result;
}

ProbeResult probe_layers(const FeaturePack& pack, std::span<const SentenceSample> samples,
                         const PartitionAssignment& partition, const GridSpec& stage1_grid,
                         const GridSpec& stage2_grid, const SearchOptions& options, bool strict) {
  if (pack.layers.empty()) fail(ErrorKind::Validation, "probe: pack " + pack.model_id + " has no layers");
  for (KernelType k : stage1_grid.kernels) {
    if (k != KernelType::Linear)
      fail(ErrorKind::Validation, "probe: stage-1 grid must use the linear kernel only");
  }

  std::vector<int> layers = pack.layers;
  std::sort(layers.begin(), layers.end());

  ProbeResult result;
  result.model_id = pack.model_id;
  result.final_layer = layers.back();

  std::map<int, DatasetView> views;
  for (int layer : layers) views.emplace(layer, align(pack, layer, samples, partition, strict));

  for (int layer : layers) {
    GridResult g = grid_search(views.at(layer), stage1_grid, options);
    LayerProbe lp;
    lp.layer = layer;
    lp.best = g.best;
    lp.dev_uar = g.dev_uar;
    lp.test_uar = g.report.splits.at("test").overall.uar;
    lp.leaderboard = std::move(g.leaderboard);
    result.stage1.push_back(std::move(lp));
  }

  const LayerProbe* best = &result.stage1.front();
  for (const LayerProbe& lp : result.stage1) {
    if (lp.dev_uar > best->dev_uar) best = &lp;
  }
  result.selected_layer = best->layer;

  std::vector<int> stage2_layers = {result.selected_layer};
  if (result.final_layer != result.selected_layer) stage2_layers.push_back(result.final_layer);
  for (int layer : stage2_layers)
    result.stage2.emplace_back(layer, grid_search(views.at(layer), stage2_grid, options));
  return result;
}

// Serialization ---------------------------------------------------------------

OrderedJson to_json(const GridPoint& p) {
  OrderedJson j;
  j["kernel"] = to_string(p.config.kernel);
  j["C"] = p.config.C;
  j["weight"] = to_string(p.weight);
  j["positive_class_weight"] = p.config.positive_class_weight;
  if (p.config.kernel != KernelType::Linear) j["gamma"] = to_string(p.config.gamma);
  if (p.config.kernel == KernelType::Polynomial) j["degree"] = p.config.degree;
  if (p.config.kernel == KernelType::Sigmoid || p.config.kernel == KernelType::Polynomial)
    j["coef0"] = p.config.coef0;
  return j;
}

OrderedJson to_json(const LeaderboardEntry& e) {
  OrderedJson j;
  j["index"] = e.index;
  j["config"] = to_json(e.point);
  j["dev_uar"] = e.dev_uar;
  j["converged"] = e.converged;
  j["iterations"] = e.iterations;
  return j;
}

OrderedJson to_json(const GridSpec& g) {
  OrderedJson j;
  j["C"] = g.C;
  OrderedJson w = OrderedJson::array();
  for (const auto& x : g.weights) {
    if (x.balanced) w.push_back("balanced");
    else w.push_back(x.value);
  }
  j["weights"] = std::move(w);
  OrderedJson k = OrderedJson::array();
  for (auto x : g.kernels) k.push_back(to_string(x));
  j["kernels"] = std::move(k);
  OrderedJson gm = OrderedJson::array();
  for (const auto& x : g.gammas) {
    if (x.scale) gm.push_back("scale");
    else gm.push_back(x.value);
  }
  j["gammas"] = std::move(gm);
  j["degrees"] = g.degrees;
  j["coef0s"] = g.coef0s;
  return j;
}

GridSpec grid_from_json(const Json& j, const GridSpec& defaults) {
  GridSpec g = defaults;
  if (!j.is_object()) fail(ErrorKind::Validation, "grid must be a JSON object");
  auto numbers = [&](const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    const Json& a = j[key];
    if (!a.is_array()) fail(ErrorKind::Validation, std::string("grid '") + key + "' must be an array");
    out.clear();
    for (const Json& v : a) {
      if (!v.is_number()) fail(ErrorKind::Validation, std::string("grid '") + key + "' must hold numbers");
      out.push_back(v.get<double>());
    }
  };
  numbers("C", g.C);
  numbers("coef0s", g.coef0s);
  for (double c : g.C) {
    if (!(c > 0.0)) fail(ErrorKind::Validation, "grid C values must be positive");
  }
  if (j.contains("weights")) {
    g.weights.clear();
    for (const Json& v : j["weights"]) {
      if (v.is_string() && v.get<std::string>() == "balanced") g.weights.push_back(WeightSpec::balanced_weight());
      else if (v.is_number() && v.get<double>() > 0.0) g.weights.push_back(WeightSpec::fixed(v.get<double>()));
      else fail(ErrorKind::Validation, "grid weights must be positive numbers or \"balanced\"");
    }
  }
  if (j.contains("kernels")) {
    g.kernels.clear();
    for (const Json& v : j["kernels"]) {
      const auto k = v.is_string() ? parse_kernel(v.get<std::string>()) : std::nullopt;
      if (!k) fail(ErrorKind::Validation, "grid kernels must be linear, rbf, sigmoid or polynomial");
      g.kernels.push_back(*k);
    }
  }
  if (j.contains("gammas")) {
    g.gammas.clear();
    for (const Json& v : j["gammas"]) {
      if (v.is_string() && v.get<std::string>() == "scale") g.gammas.push_back(GammaSpec::scaled());
      else if (v.is_number() && v.get<double>() > 0.0) g.gammas.push_back(GammaSpec::fixed(v.get<double>()));
      else fail(ErrorKind::Validation, "grid gammas must be positive numbers or \"scale\"");
    }
  }
  if (j.contains("degrees")) {
    g.degrees.clear();
    for (const Json& v : j["degrees"]) {
      if (!v.is_number_integer() || v.get<int>() < 2)
        fail(ErrorKind::Validation, "grid degrees must be integers >= 2");
      g.degrees.push_back(v.get<int>());
    }
  }
  return g;
}

OrderedJson to_json(const ProbeResult& r) {
  OrderedJson j;
  j["model_id"] = r.model_id;
  j["selected_layer"] = r.selected_layer;
  j["final_layer"] = r.final_layer;
  OrderedJson s1 = OrderedJson::array();
  for (const auto& lp : r.stage1) {
    OrderedJson e;
    e["layer"] = lp.layer;
    e["config"] = to_json(lp.best);
    e["dev_uar"] = lp.dev_uar;
    e["test_uar"] = lp.test_uar ? OrderedJson(*lp.test_uar) : OrderedJson(nullptr);
    s1.push_back(std::move(e));
  }
  j["stage1"] = std::move(s1);
  OrderedJson s2 = OrderedJson::array();
  for (const auto& [layer, g] : r.stage2) {
    OrderedJson e;
    e["layer"] = layer;
    e["config"] = to_json(g.best);
    e["dev_uar"] = g.dev_uar;
    e["converged"] = g.model.summary.converged;
    e["report"] = to_json(g.report);
    s2.push_back(std::move(e));
  }
  j["stage2"] = std::move(s2);
  return j;
}

}  // namespace probefuse

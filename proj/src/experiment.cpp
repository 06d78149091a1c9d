#include "probefuse/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "json_fields.hpp"
#include "probefuse/corpus.hpp"
#include "probefuse/feature_store.hpp"
#include "probefuse/metrics.hpp"

namespace probefuse {

namespace fs = std::filesystem;
using detail::field;
using detail::string_field;

using Rows = std::vector<std::vector<std::string>>;

// Config ----------------------------------------------------------------------

fs::path ExperimentConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

namespace {

std::string expand_seed(const std::string& pattern, std::uint64_t seed) {
  std::string out = pattern;
  const std::string key = "{seed}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos))
    out.replace(pos, key.size(), std::to_string(seed));
  return out;
}

const Json& array_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_array()) fail(ErrorKind::Validation, where + ": field '" + key + "' must be an array");
  return v;
}

bool non_negative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

std::uint64_t unsigned_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!non_negative_integer(v))
    fail(ErrorKind::Validation, where + ": field '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      fail(ErrorKind::Validation, where + ": unknown field '" + key + "'");
  }
}

void require_path(const ExperimentConfig& c, const std::string& p, const std::string& what) {
  if (!fs::exists(c.resolve(p)))
    fail(ErrorKind::Validation, what + " not found: " + c.resolve(p).string());
}

}  // namespace

ExperimentConfig config_from_json(const Json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::Validation, "config must be a JSON object");
  reject_unknown(j, {"paths", "split", "grids", "fusion", "seeds", "strict", "solver"}, "config");
  ExperimentConfig c;
  c.base_dir = base_dir;

  const Json& paths = field(j, "paths", "config");
  reject_unknown(paths, {"calls", "out", "packs", "tune", "early_fusion", "late_fusion", "transcripts"},
                 "config.paths");
  c.calls = string_field(paths, "calls", "config.paths");
  if (paths.contains("out")) c.out = string_field(paths, "out", "config.paths");
  if (paths.contains("packs")) {
    for (const Json& p : array_field(paths, "packs", "config.paths")) {
      if (!p.is_string()) fail(ErrorKind::Validation, "config.paths.packs must hold strings");
      c.packs.push_back(p.get<std::string>());
    }
  }
  if (paths.contains("tune")) {
    for (const Json& t : array_field(paths, "tune", "config.paths")) {
      TuneEntry e;
      e.name = string_field(t, "name", "config.paths.tune");
      e.pack = string_field(t, "pack", "config.paths.tune");
      if (t.contains("layer")) e.layer = static_cast<int>(detail::integer_field(t, "layer", "config.paths.tune"));
      c.tune.push_back(std::move(e));
    }
  }
  if (paths.contains("early_fusion")) {
    for (const Json& t : array_field(paths, "early_fusion", "config.paths")) {
      c.early_fusion.push_back({string_field(t, "name", "config.paths.early_fusion"),
                                string_field(t, "audio", "config.paths.early_fusion"),
                                string_field(t, "text", "config.paths.early_fusion")});
    }
  }
  if (paths.contains("late_fusion")) {
    for (const Json& t : array_field(paths, "late_fusion", "config.paths")) {
      LateFusionEntry e;
      e.name = string_field(t, "name", "config.paths.late_fusion");
      for (const Json& s : array_field(t, "sources", "config.paths.late_fusion")) {
        LateSourceEntry src;
        const std::string where = "config.paths.late_fusion." + e.name;
        src.name = string_field(s, "name", where);
        if (s.contains("scores")) src.scores = string_field(s, "scores", where);
        if (s.contains("tune")) src.tune = string_field(s, "tune", where);
        if (src.scores.empty() == src.tune.empty())
          fail(ErrorKind::Validation, where + ": source " + src.name + " needs exactly one of 'scores' and 'tune'");
        e.sources.push_back(std::move(src));
      }
      if (e.sources.empty()) fail(ErrorKind::Validation, "config.paths.late_fusion." + e.name + ": no sources");
      c.late_fusion.push_back(std::move(e));
    }
  }
  if (paths.contains("transcripts")) {
    for (const Json& t : array_field(paths, "transcripts", "config.paths")) {
      c.transcripts.push_back({string_field(t, "source", "config.paths.transcripts"),
                               string_field(t, "path", "config.paths.transcripts")});
    }
  }

  if (j.contains("split")) {
    const Json& s = j["split"];
    reject_unknown(s, {"seed", "restarts", "tolerances"}, "config.split");
    if (s.contains("seed")) c.split.seed = unsigned_field(s, "seed", "config.split");
    if (s.contains("restarts")) c.split.restarts = unsigned_field(s, "restarts", "config.split");
    if (s.contains("tolerances")) {
      const Json& t = s["tolerances"];
      reject_unknown(t, {"positive_rate", "mean_duration"}, "config.split.tolerances");
      if (t.contains("positive_rate"))
        c.split.tolerances.positive_rate = detail::number_field(t, "positive_rate", "config.split.tolerances");
      if (t.contains("mean_duration"))
        c.split.tolerances.mean_duration = detail::number_field(t, "mean_duration", "config.split.tolerances");
    }
    if (c.split.restarts == 0) fail(ErrorKind::Validation, "config.split.restarts must be positive");
  }
  if (j.contains("grids")) {
    const Json& g = j["grids"];
    reject_unknown(g, {"stage1", "stage2"}, "config.grids");
    if (g.contains("stage1")) c.stage1 = grid_from_json(g["stage1"], c.stage1);
    if (g.contains("stage2")) c.stage2 = grid_from_json(g["stage2"], c.stage2);
  }
  for (KernelType k : c.stage1.kernels) {
    if (k != KernelType::Linear) fail(ErrorKind::Validation, "config.grids.stage1 must use the linear kernel only");
  }
  if (j.contains("fusion")) c.fusion = late_fusion_config_from_json(j["fusion"]);
  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const Json& s : array_field(j, "seeds", "config")) {
      if (!non_negative_integer(s)) fail(ErrorKind::Validation, "config.seeds must hold non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
    if (c.seeds.empty()) fail(ErrorKind::Validation, "config.seeds must not be empty");
  }
  if (j.contains("strict")) {
    if (!j["strict"].is_boolean()) fail(ErrorKind::Validation, "config.strict must be a boolean");
    c.strict = j["strict"].get<bool>();
  }
  if (j.contains("solver")) {
    reject_unknown(j["solver"], {"tolerance"}, "config.solver");
    if (j["solver"].contains("tolerance"))
      c.solver_tolerance = detail::number_field(j["solver"], "tolerance", "config.solver");
    if (!(c.solver_tolerance > 0.0)) fail(ErrorKind::Validation, "config.solver.tolerance must be positive");
  }

  std::set<std::string> tune_names;
  for (const auto& t : c.tune) {
    if (!tune_names.insert(t.name).second)
      fail(ErrorKind::Validation, "config.paths.tune: duplicate name " + t.name);
  }
  require_path(c, c.calls, "calls file");
  for (const auto& p : c.packs) require_path(c, p, "feature pack");
  for (const auto& t : c.tune) require_path(c, t.pack, "feature pack");
  for (const auto& e : c.early_fusion) {
    require_path(c, e.audio, "feature pack");
    require_path(c, e.text, "feature pack");
  }
  for (const auto& e : c.late_fusion) {
    for (const auto& s : e.sources) {
      if (!s.tune.empty()) {
        if (!tune_names.count(s.tune))
          fail(ErrorKind::Validation, "late fusion source " + s.name + " names unknown tune entry " + s.tune);
        continue;
      }
      for (std::uint64_t seed : c.seeds) require_path(c, expand_seed(s.scores, seed), "score file");
    }
  }
  for (const auto& t : c.transcripts) require_path(c, t.path, "transcript file");
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  if (!fs::exists(file)) fail(ErrorKind::Validation, "config file not found: " + file.string());
  Json j;
  try {
    j = Json::parse(read_text_file(file));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Validation, file.string() + ": " + e.what());
  }
  return config_from_json(j, fs::absolute(file).parent_path());
}

OrderedJson canonical_json(const ExperimentConfig& c) {
  OrderedJson paths;
  paths["calls"] = c.calls;
  paths["packs"] = c.packs;
  paths["tune"] = OrderedJson::array();
  for (const auto& t : c.tune) {
    OrderedJson e{{"name", t.name}, {"pack", t.pack}};
    e["layer"] = t.layer ? OrderedJson(*t.layer) : OrderedJson(nullptr);
    paths["tune"].push_back(std::move(e));
  }
  paths["early_fusion"] = OrderedJson::array();
  for (const auto& e : c.early_fusion)
    paths["early_fusion"].push_back({{"name", e.name}, {"audio", e.audio}, {"text", e.text}});
  paths["late_fusion"] = OrderedJson::array();
  for (const auto& e : c.late_fusion) {
    OrderedJson sources = OrderedJson::array();
    for (const auto& s : e.sources)
      sources.push_back({{"name", s.name}, {"scores", s.scores}, {"tune", s.tune}});
    paths["late_fusion"].push_back({{"name", e.name}, {"sources", std::move(sources)}});
  }
  paths["transcripts"] = OrderedJson::array();
  for (const auto& t : c.transcripts)
    paths["transcripts"].push_back({{"source", t.source}, {"path", t.path}});

  OrderedJson j;
  j["paths"] = std::move(paths);
  j["split"] = {{"seed", c.split.seed},
                {"restarts", c.split.restarts},
                {"tolerances",
                 {{"positive_rate", c.split.tolerances.positive_rate},
                  {"mean_duration", c.split.tolerances.mean_duration}}}};
  j["grids"] = {{"stage1", to_json(c.stage1)}, {"stage2", to_json(c.stage2)}};
  j["fusion"] = to_json(c.fusion);
  j["seeds"] = c.seeds;
  j["strict"] = c.strict;
  j["solver"] = {{"tolerance", c.solver_tolerance}};
  return j;
}

std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(canonical_json(c).dump())); }

// Shared helpers --------------------------------------------------------------------

namespace {

std::string file_safe(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-' && ch != '_') ch = '_';
  }
  return s;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string describe(const GridPoint& p) {
  std::string s = std::string(to_string(p.config.kernel)) + " C=" + number(p.config.C) +
                  " w=" + to_string(p.weight);
  if (p.config.kernel != KernelType::Linear) s += " g=" + to_string(p.config.gamma);
  if (p.config.kernel == KernelType::Polynomial) s += " d=" + std::to_string(p.config.degree);
  if (p.config.kernel == KernelType::Sigmoid || p.config.kernel == KernelType::Polynomial)
    s += " r=" + number(p.config.coef0);
  return s;
}

std::string percent_of(const Metrics& m) { return format_percent(m.uar); }

std::string percent_agg(const EvalReport& r, const std::string& split) {
  auto it = r.aggregate.find(split);
  return it == r.aggregate.end() ? "n/a" : format_percent(it->second.uar);
}

OrderedJson seeds_json(const ExperimentConfig& c, std::vector<std::uint64_t> runs, bool uses_split) {
  OrderedJson j;
  j["split"] = uses_split ? OrderedJson(c.split.seed) : OrderedJson(nullptr);
  j["runs"] = std::move(runs);
  return j;
}

struct Context {
  const ExperimentConfig& cfg;
  const RunOptions& run;
  fs::path out;

  fs::path artifact(std::string_view command) const { return out / (std::string(command) + ".json"); }

  Json load_payload(std::string_view command) const {
    const fs::path p = artifact(command);
    if (!fs::exists(p)) {
      fail(ErrorKind::MissingArtifact, "missing upstream artifact " + p.string() + " (run '" +
                                           std::string(command) + "' first)");
    }
    return field(Json::parse(read_text_file(p)), "payload", p.string());
  }

  std::vector<SentenceSample> samples() const {
    const fs::path p = out / "manifest.jsonl";
    if (!fs::exists(p))
      fail(ErrorKind::MissingArtifact, "missing upstream artifact " + p.string() + " (run 'assemble' first)");
    return read_manifest(p);
  }

  PartitionAssignment partition() const { return partition_from_json(load_payload("split")["partition"]); }

  SearchOptions search(std::uint64_t seed = 0) const {
    SearchOptions o;
    o.jobs = run.jobs;
    o.cache_bytes = run.cache_bytes;
    o.tolerance = cfg.solver_tolerance;
    o.seed = seed;
    return o;
  }

  fs::path write(std::string_view command, const OrderedJson& seeds, OrderedJson payload,
                 const Rows& table) const {
    payload["table"] = table;
    OrderedJson j;
    j["command"] = command;
    j["config_hash"] = config_hash(cfg);
    j["seeds"] = seeds;
    j["payload"] = std::move(payload);
    write_text_file(artifact(command), j.dump(2) + "\n");
    const fs::path txt = out / (std::string(command) + ".txt");
    write_text_file(txt, render_table(table));
    return txt;
  }
};

void write_leaderboard(const fs::path& file, const std::vector<LeaderboardEntry>& board) {
  std::vector<OrderedJson> rows;
  rows.reserve(board.size());
  for (const auto& e : board) rows.push_back(to_json(e));
  write_jsonl(file, rows);
}

/// Decision values of a selected model on the view's dev and test samples.
ScoreFile decision_scores(const std::string& model_id, const DatasetView& view, const GridResult& g) {
  ScoreFile f;
  f.model_id = model_id;
  f.bounded = false;
  const auto& dev = view.of(Partition::Dev).sample_ids;
  const auto& test = view.of(Partition::Test).sample_ids;
  for (std::size_t i = 0; i < dev.size(); ++i) f.entries[dev[i]] = g.dev_decision[i];
  for (std::size_t i = 0; i < test.size(); ++i) f.entries[test[i]] = g.test_decision[i];
  return f;
}

// Commands ------------------------------------------------------------------

fs::path cmd_assemble(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const std::vector<CallRecord> calls = read_calls(cfg.resolve(cfg.calls));
  const AssemblyResult a = assemble(calls);
  write_manifest(ctx.out / "manifest.jsonl", a.samples);
  write_exclusions(ctx.out / "exclusions.jsonl", a.exclusions);

  std::size_t sentences = 0;
  for (const auto& c : calls) sentences += c.sentence_spans.size();
  std::map<std::string, std::size_t> reasons;
  for (const auto& e : a.exclusions) ++reasons[e.reason];
  const GroupStats g = group_stats(a.samples);

  OrderedJson payload;
  payload["calls"] = cfg.calls;
  payload["call_count"] = calls.size();
  payload["sentence_count"] = sentences;
  payload["sample_count"] = a.samples.size();
  payload["exclusion_count"] = a.exclusions.size();
  payload["exclusions_by_reason"] = reasons;
  payload["stats"] = to_json(g);

  Rows t = {{"", "value"},
            {"calls", std::to_string(calls.size())},
            {"sentences", std::to_string(sentences)},
            {"samples", std::to_string(a.samples.size())},
            {"excluded", std::to_string(a.exclusions.size())},
            {"# speakers (m, f)", std::to_string(g.speaker_count) + " (" + std::to_string(g.male_speakers) +
                                      ", " + std::to_string(g.female_speakers) + ")"},
            {"# flattery", std::to_string(g.positive_count) + " (" +
                               (g.positive_fraction ? fixed(100.0 * *g.positive_fraction, 1) + "%" : "n/a") + ")"},
            {"total dur.", format_hms(g.total_duration_s)}};
  return ctx.write("assemble", seeds_json(cfg, {}, false), std::move(payload), t);
}

fs::path cmd_split(const Context& ctx) {
  const auto samples = ctx.samples();
  SplitOptions opt = ctx.cfg.split;
  opt.jobs = ctx.run.jobs;
  const PartitionAssignment p = make_split(samples, opt);
  const CorpusStats stats = corpus_stats(samples, p);
  OrderedJson payload;
  payload["partition"] = to_json(p);
  payload["stats"] = to_json(stats);
  return ctx.write("split", seeds_json(ctx.cfg, {}, true), std::move(payload), stats_table_rows(stats));
}

fs::path cmd_probe(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.packs.empty()) fail(ErrorKind::Validation, "probe: config.paths.packs is empty");
  const auto samples = ctx.samples();
  const PartitionAssignment part = ctx.partition();
  fs::create_directories(ctx.out / "leaderboards");
  fs::create_directories(ctx.out / "scores");

  OrderedJson models = OrderedJson::array();
  Rows t = {{"model", "layer", "stage", "configuration", "dev UAR", "test UAR"}};
  for (const std::string& path : cfg.packs) {
    const FeaturePack pack = load_pack(cfg.resolve(path));
    const ProbeResult r =
        probe_layers(pack, samples, part, cfg.stage1, cfg.stage2, ctx.search(), cfg.strict);
    const std::string stem = "probe_" + file_safe(pack.model_id);
    for (const auto& lp : r.stage1) {
      write_leaderboard(ctx.out / "leaderboards" / (stem + "_stage1_layer" + std::to_string(lp.layer) + ".jsonl"),
                        lp.leaderboard);
      t.push_back({pack.model_id, std::to_string(lp.layer), "1", describe(lp.best),
                   format_percent(lp.dev_uar), format_percent(lp.test_uar)});
    }
    for (const auto& [layer, g] : r.stage2) {
      write_leaderboard(ctx.out / "leaderboards" / (stem + "_stage2_layer" + std::to_string(layer) + ".jsonl"),
                        g.leaderboard);
      const std::string stage = layer == r.selected_layer ? "2 (selected)" : "2 (final)";
      t.push_back({pack.model_id, std::to_string(layer), stage, describe(g.best), format_percent(g.dev_uar),
                   percent_of(g.report.splits.at("test").overall)});
    }
    const auto& [selected, best] = r.stage2.front();
    const DatasetView view = align(pack, selected, samples, part, cfg.strict);
    write_score_file(ctx.out / "scores" / (stem + ".jsonl"), decision_scores(pack.model_id, view, best));

    OrderedJson m = to_json(r);
    m["pack"] = path;
    m["excluded"] = view.excluded;
    models.push_back(std::move(m));
  }
  OrderedJson payload;
  payload["models"] = std::move(models);
  return ctx.write("probe", seeds_json(cfg, {}, true), std::move(payload), t);
}

fs::path tune_scores_path(const fs::path& out, const std::string& name) {
  return out / "scores" / ("tune_" + file_safe(name) + ".jsonl");
}

fs::path cmd_tune(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.tune.empty()) fail(ErrorKind::Validation, "tune: config.paths.tune is empty");
  const auto samples = ctx.samples();
  const PartitionAssignment part = ctx.partition();
  fs::create_directories(ctx.out / "leaderboards");
  fs::create_directories(ctx.out / "scores");

  OrderedJson entries = OrderedJson::array();
  Rows t = {{"name", "model", "layer", "configuration", "dev UAR", "test UAR"}};
  for (const TuneEntry& e : cfg.tune) {
    const FeaturePack pack = load_pack(cfg.resolve(e.pack));
    const int layer = e.layer.value_or(pack.final_layer());
    const DatasetView view = align(pack, layer, samples, part, cfg.strict);
    const GridResult g = grid_search(view, cfg.stage2, ctx.search());
    write_leaderboard(ctx.out / "leaderboards" / ("tune_" + file_safe(e.name) + ".jsonl"), g.leaderboard);
    write_score_file(tune_scores_path(ctx.out, e.name), decision_scores(pack.model_id, view, g));

    OrderedJson j;
    j["name"] = e.name;
    j["pack"] = e.pack;
    j["model_id"] = pack.model_id;
    j["layer"] = layer;
    j["config"] = to_json(g.best);
    j["dev_uar"] = g.dev_uar;
    j["converged"] = g.model.summary.converged;
    j["excluded"] = view.excluded;
    j["report"] = to_json(g.report);
    entries.push_back(std::move(j));
    t.push_back({e.name, pack.model_id, std::to_string(layer), describe(g.best), format_percent(g.dev_uar),
                 percent_of(g.report.splits.at("test").overall)});
  }
  OrderedJson payload;
  payload["entries"] = std::move(entries);
  return ctx.write("tune", seeds_json(cfg, {}, true), std::move(payload), t);
}

fs::path cmd_fuse_early(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.early_fusion.empty()) fail(ErrorKind::Validation, "fuse-early: config.paths.early_fusion is empty");
  const auto samples = ctx.samples();
  const PartitionAssignment part = ctx.partition();
  fs::create_directories(ctx.out / "leaderboards");

  OrderedJson rows = OrderedJson::array();
  Rows t = {{"name", "audio", "text", "dim", "configuration", "dev UAR", "test UAR"}};
  for (const EarlyFusionEntry& e : cfg.early_fusion) {
    const FeaturePack audio = load_pack(cfg.resolve(e.audio));
    const FeaturePack text = load_pack(cfg.resolve(e.text));
    const EarlyFusionResult r = early_fuse(audio, text, samples, part, cfg.stage2, ctx.search(), cfg.strict);
    write_leaderboard(ctx.out / "leaderboards" / ("fuse_early_" + file_safe(e.name) + ".jsonl"),
                      r.search.leaderboard);
    OrderedJson j;
    j["name"] = e.name;
    j["audio_model"] = audio.model_id;
    j["text_model"] = text.model_id;
    j["audio_layer"] = r.audio_layer;
    j["text_layer"] = r.text_layer;
    j["audio_dim"] = r.audio_dim;
    j["text_dim"] = r.text_dim;
    j["fused_dim"] = r.fused_dim;
    j["config"] = to_json(r.search.best);
    j["dev_uar"] = r.search.dev_uar;
    j["report"] = to_json(r.search.report);
    rows.push_back(std::move(j));
    t.push_back({e.name, audio.model_id, text.model_id, std::to_string(r.fused_dim), describe(r.search.best),
                 format_percent(r.search.dev_uar), percent_of(r.search.report.splits.at("test").overall)});
  }
  OrderedJson payload;
  payload["rows"] = std::move(rows);
  return ctx.write("fuse-early", seeds_json(cfg, {}, true), std::move(payload), t);
}

/// Keeps the scores of evaluated samples only, so sources written for
/// different sample ranges can be combined.
ScoreFile restrict_to(const ScoreFile& f, const LabeledSplit& dev, const LabeledSplit& test) {
  ScoreFile out = f;
  out.entries.clear();
  for (const auto* split : {&dev, &test}) {
    for (const auto& id : split->sample_ids) {
      auto it = f.entries.find(id);
      if (it != f.entries.end()) out.entries.insert(*it);
    }
  }
  return out;
}

fs::path cmd_fuse_late(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.late_fusion.empty()) fail(ErrorKind::Validation, "fuse-late: config.paths.late_fusion is empty");
  const auto samples = ctx.samples();
  const auto [dev, test] = labeled_splits(samples, ctx.partition());

  OrderedJson groups = OrderedJson::array();
  Rows t = {{"name", "method", "dev UAR", "test UAR"}};
  for (const LateFusionEntry& e : cfg.late_fusion) {
    std::vector<std::vector<EvalReport>> source_reports(e.sources.size());
    std::vector<std::vector<double>> source_uars(e.sources.size());
    std::vector<EvalReport> fused_reports;
    OrderedJson weights = OrderedJson::array(), thresholds = OrderedJson::array();

    for (std::uint64_t seed : cfg.seeds) {
      std::vector<ScoreFile> files;
      std::vector<double> dev_uars;
      for (std::size_t k = 0; k < e.sources.size(); ++k) {
        const LateSourceEntry& s = e.sources[k];
        fs::path p;
        if (!s.tune.empty()) {
          p = tune_scores_path(ctx.out, s.tune);
          if (!fs::exists(p))
            fail(ErrorKind::MissingArtifact, "missing upstream artifact " + p.string() + " (run 'tune' first)");
        } else {
          p = cfg.resolve(expand_seed(s.scores, seed));
        }
        files.push_back(restrict_to(read_score_file(p, s.name, static_cast<std::int64_t>(seed)), dev, test));
        const LateFusionResult alone = evaluate_source(files.back(), cfg.fusion, dev, test);
        const double uar = alone.report.splits.at("dev").overall.uar.value_or(0.0);
        dev_uars.push_back(uar);
        source_uars[k].push_back(uar);
        source_reports[k].push_back(alone.report);
      }
      const LateFusionResult fused = late_fuse(files, dev_uars, cfg.fusion, dev, test);
      weights.push_back(fused.weights);
      thresholds.push_back(fused.threshold);
      fused_reports.push_back(fused.report);
    }

    OrderedJson sources = OrderedJson::array();
    for (std::size_t k = 0; k < e.sources.size(); ++k) {
      const EvalReport agg = aggregate_seeds(source_reports[k]);
      sources.push_back({{"name", e.sources[k].name}, {"dev_uars", source_uars[k]}, {"report", to_json(agg)}});
      t.push_back({e.name + ": " + e.sources[k].name, "single", percent_agg(agg, "dev"), percent_agg(agg, "test")});
    }
    const EvalReport agg = aggregate_seeds(fused_reports);
    t.push_back({e.name, "late fusion", percent_agg(agg, "dev"), percent_agg(agg, "test")});
    OrderedJson g;
    g["name"] = e.name;
    g["sources"] = std::move(sources);
    g["fused"] = {{"weights", std::move(weights)}, {"thresholds", std::move(thresholds)}, {"report", to_json(agg)}};
    groups.push_back(std::move(g));
  }
  OrderedJson payload;
  payload["fusion"] = to_json(cfg.fusion);
  payload["groups"] = std::move(groups);
  return ctx.write("fuse-late", seeds_json(cfg, cfg.seeds, true), std::move(payload), t);
}

fs::path cmd_wer(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.transcripts.empty()) fail(ErrorKind::Validation, "wer: config.paths.transcripts is empty");
  const auto samples = ctx.samples();
  std::vector<std::pair<std::string, std::string>> refs;
  refs.reserve(samples.size());
  for (const auto& s : samples) refs.emplace_back(s.sample_id, s.text);

  OrderedJson reports = OrderedJson::array();
  Rows t = {{"source", "WER", "sub", "del", "ins", "ref words", "missing"}};
  for (const TranscriptEntry& e : cfg.transcripts) {
    const TranscriptFile hyp = read_transcript_file(cfg.resolve(e.path), e.source);
    const WerReport r = corpus_wer(e.source, refs, hyp.entries);
    reports.push_back(to_json(r));
    t.push_back({e.source, format_percent(r.total.wer()), std::to_string(r.total.substitutions),
                 std::to_string(r.total.deletions), std::to_string(r.total.insertions),
                 std::to_string(r.total.reference_words), std::to_string(r.missing.size())});
  }
  OrderedJson payload;
  payload["sources"] = std::move(reports);
  return ctx.write("wer", seeds_json(cfg, {}, false), std::move(payload), t);
}

// Report ------------------------------------------------------------------------

std::string markdown_table(const Json& rows) {
  std::ostringstream out;
  bool header = true;
  for (const Json& row : rows) {
    out << '|';
    for (const Json& cell : row) out << ' ' << cell.get<std::string>() << " |";
    out << '\n';
    if (header) {
      out << '|';
      for (std::size_t c = 0; c < row.size(); ++c) out << (c == 0 ? " :-- |" : " --: |");
      out << '\n';
      header = false;
    }
  }
  return out.str();
}

fs::path cmd_report(const Context& ctx) {
  const std::string hash = config_hash(ctx.cfg);
  struct Section {
    const char* command;
    const char* title;
  };
  const Section sections[] = {{"assemble", "Corpus assembly"},
                              {"split", "Corpus statistics per partition"},
                              {"wer", "Transcription quality"},
                              {"probe", "Layer-wise probing"},
                              {"tune", "Tuned classifiers"},
                              {"fuse-early", "Early fusion"},
                              {"fuse-late", "Late fusion"}};
  if (!fs::exists(ctx.artifact("assemble")))
    fail(ErrorKind::MissingArtifact,
         "missing upstream artifact " + ctx.artifact("assemble").string() + " (run 'assemble' first)");

  std::ostringstream md;
  md << "# Experiment report\n\nConfig hash: `" << hash << "`\n";
  OrderedJson included = OrderedJson::array(), missing = OrderedJson::array();
  for (const Section& s : sections) {
    if (!fs::exists(ctx.artifact(s.command))) {
      missing.push_back(s.command);
      continue;
    }
    const Json a = Json::parse(read_text_file(ctx.artifact(s.command)));
    md << "\n## " << s.title << "\n\n";
    const std::string artifact_hash = a.at("config_hash").get<std::string>();
    md << "Source: `" << s.command << ".json`";
    if (artifact_hash != hash) md << " (stale: produced under config `" << artifact_hash << "`)";
    md << "\n\n" << markdown_table(a.at("payload").at("table"));
    included.push_back({{"command", s.command}, {"config_hash", artifact_hash}});
  }
  if (!missing.empty()) {
    md << "\n## Not run\n\n";
    for (const auto& m : missing) md << "- " << m.get<std::string>() << "\n";
  }
  const fs::path report = ctx.out / "report.md";
  write_text_file(report, md.str());

  OrderedJson payload;
  payload["included"] = std::move(included);
  payload["missing"] = std::move(missing);
  payload["markdown"] = "report.md";
  OrderedJson j;
  j["command"] = "report";
  j["config_hash"] = hash;
  j["seeds"] = seeds_json(ctx.cfg, {}, false);
  j["payload"] = std::move(payload);
  write_text_file(ctx.artifact("report"), j.dump(2) + "\n");
  return report;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"assemble", "split",     "probe", "tune",
                                                 "fuse-early", "fuse-late", "wer",   "report"};
  return names;
}

fs::path run_command(std::string_view command, const ExperimentConfig& cfg, const RunOptions& run) {
  const Context ctx{cfg, run, cfg.out_dir()};
  fs::create_directories(ctx.out);
  if (command == "assemble") return cmd_assemble(ctx);
  if (command == "split") return cmd_split(ctx);
  if (command == "probe") return cmd_probe(ctx);
  if (command == "tune") return cmd_tune(ctx);
  if (command == "fuse-early") return cmd_fuse_early(ctx);
  if (command == "fuse-late") return cmd_fuse_late(ctx);
  if (command == "wer") return cmd_wer(ctx);
  if (command == "report") return cmd_report(ctx);
  fail(ErrorKind::Validation, "unknown command '" + std::string(command) + "'");
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingArtifact: return 3;
    case ErrorKind::Numerical: return 4;
    default: return 2;
  }
}

std::size_t parse_cache_bytes(std::string_view text) {
  const std::string where = "PROBEFUSE_CACHE value '" + std::string(text) + "'";
  std::size_t i = 0, value = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
    const std::size_t digit = static_cast<std::size_t>(text[i] - '0');
    if (value > (std::numeric_limits<std::size_t>::max() - digit) / 10)
      fail(ErrorKind::Validation, where + " is too large");
    value = value * 10 + digit;
    ++i;
  }
  if (i == 0) fail(ErrorKind::Validation, where + " must start with a number");
  std::size_t scale = 1;
  if (i < text.size()) {
    switch (std::toupper(static_cast<unsigned char>(text[i]))) {
      case 'K': scale = 1ull << 10; break;
      case 'M': scale = 1ull << 20; break;
      case 'G': scale = 1ull << 30; break;
      default: fail(ErrorKind::Validation, where + " has an unknown unit");
    }
    if (++i != text.size()) fail(ErrorKind::Validation, where + " has trailing characters");
  }
  if (value == 0) fail(ErrorKind::Validation, where + " must be positive");
  if (value > std::numeric_limits<std::size_t>::max() / scale) fail(ErrorKind::Validation, where + " is too large");
  return value * scale;
}

}  // namespace probefuse

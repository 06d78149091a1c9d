#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <functional>

#include "../support/helpers.hpp"
#include "probefuse/corpus.hpp"
#include "probefuse/error.hpp"
#include "probefuse/experiment.hpp"
#include "probefuse/synthetic.hpp"

using namespace probefuse;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = fs::path(PROBEFUSE_TEST_DATA) / "synthetic";

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Validation;
}

/// Minimal valid config over the checked-in fixtures.
Json base_config(const fs::path& out) {
  Json j;
  j["paths"]["calls"] = (kFixtures / "calls.jsonl").string();
  j["paths"]["out"] = out.string();
  j["paths"]["packs"] = {(kFixtures / "packs/speech6").string()};
  j["split"] = {{"seed", 1}, {"restarts", 200}};
  j["grids"]["stage1"] = {{"C", {0.1, 1}}, {"weights", {1}}};
  j["grids"]["stage2"] = {{"C", {1}}, {"weights", {1}}, {"kernels", {"linear", "rbf"}}, {"gammas", {"scale"}}};
  return j;
}

struct Cli {
  int code;
  std::string err;
  std::string out;
};

Cli run_cli(const TempDir& dir, const std::string& args, const char* env = nullptr) {
  const fs::path err = dir / "stderr.txt", out = dir / "stdout.txt";
  std::string cmd = env ? std::string(env) + " " : std::string();
  cmd += std::string("'") + PROBEFUSE_CLI + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), read_text_file(err), read_text_file(out)};
}

fs::path write_config(const TempDir& dir, const Json& j) {
  const fs::path p = dir / "config.json";
  write_text_file(p, j.dump(2));
  return p;
}

Json payload(const fs::path& out, const std::string& command) {
  return Json::parse(read_text_file(out / (command + ".json"))).at("payload");
}

}  // namespace

TEST_CASE("config validation") {
  TempDir dir("cfg");
  const Json ok = base_config(dir / "out");
  CHECK_NOTHROW(config_from_json(ok, dir.path()));

  auto bad = [&](const std::function<void(Json&)>& edit) {
    Json j = ok;
    edit(j);
    return kind_of([&] { config_from_json(j, dir.path()); });
  };
  CHECK(bad([](Json& j) { j["colour"] = 1; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["paths"].erase("calls"); }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["seeds"] = Json::array(); }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["seeds"] = {-1}; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["grids"]["stage1"]["kernels"] = {"rbf"}; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["grids"]["stage2"]["C"] = {0}; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["split"]["restarts"] = 0; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) { j["fusion"] = {{"weight_rule", "fixed"}}; }) == ErrorKind::Validation);
  CHECK(bad([](Json& j) {
          j["paths"]["late_fusion"] = {{{"name", "x"}, {"sources", {{{"name", "a"}, {"tune", "nope"}}}}}};
        }) == ErrorKind::Validation);
  CHECK(bad([&](Json& j) {
          j["paths"]["late_fusion"] = {
              {{"name", "x"},
               {"sources", {{{"name", "a"}, {"tune", "t"}, {"scores", (kFixtures / "scores/audio.jsonl").string()}}}}}};
          j["paths"]["tune"] = {{{"name", "t"}, {"pack", (kFixtures / "packs/text_signal").string()}}};
        }) == ErrorKind::Validation);

  Json missing = ok;
  missing["paths"]["calls"] = "no/such/calls.jsonl";
  try {
    config_from_json(missing, dir.path());
    FAIL("expected an Error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
    CHECK(std::string(e.what()).find("no/such/calls.jsonl") != std::string::npos);
  }

  Json seeded = ok;
  seeded["paths"]["late_fusion"] = {
      {{"name", "x"}, {"sources", {{{"name", "t"}, {"scores", (kFixtures / "scores/text_seed{seed}.jsonl").string()}}}}}};
  seeded["seeds"] = {1, 5};
  CHECK_NOTHROW(config_from_json(seeded, dir.path()));
  seeded["seeds"] = {1, 6};
  CHECK(kind_of([&] { config_from_json(seeded, dir.path()); }) == ErrorKind::Validation);
}

TEST_CASE("relative paths resolve against the config directory") {
  const ExperimentConfig c = load_config(kFixtures / "config.json");
  CHECK(c.resolve(c.calls) == kFixtures / "calls.jsonl");
  CHECK(c.resolve("/abs/x") == fs::path("/abs/x"));
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(c.late_fusion.size() == 2);
}

TEST_CASE("config hash tracks results-relevant fields only") {
  TempDir dir("hash");
  const ExperimentConfig a = config_from_json(base_config(dir / "a"), dir.path());
  const ExperimentConfig b = config_from_json(base_config(dir / "b"), dir.path());
  CHECK(config_hash(a) == config_hash(b));
  Json changed = base_config(dir / "a");
  changed["split"]["seed"] = 2;
  CHECK(config_hash(config_from_json(changed, dir.path())) != config_hash(a));
  changed = base_config(dir / "a");
  changed["grids"]["stage2"]["C"] = {1, 10};
  CHECK(config_hash(config_from_json(changed, dir.path())) != config_hash(a));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("cache budget parsing and exit codes") {
  CHECK(parse_cache_bytes("1024") == 1024);
  CHECK(parse_cache_bytes("4K") == 4096);
  CHECK(parse_cache_bytes("512m") == 512ull << 20);
  CHECK(parse_cache_bytes("2G") == 2ull << 30);
  for (const char* bad : {"", "M", "0", "12Q", "5MB", "-3", "99999999999999999999"})
    CHECK(kind_of([&] { parse_cache_bytes(bad); }) == ErrorKind::Validation);

  CHECK(exit_code(ErrorKind::Validation) == 2);
  CHECK(exit_code(ErrorKind::Io) == 2);
  CHECK(exit_code(ErrorKind::BadMagic) == 2);
  CHECK(exit_code(ErrorKind::MissingArtifact) == 3);
  CHECK(exit_code(ErrorKind::Numerical) == 4);
}

TEST_CASE("assemble conserves sentences and reports exclusions") {
  TempDir dir("assemble3");
  SyntheticCorpusSpec spec;
  spec.speakers = 3;
  spec.min_sentences = 3;
  spec.max_sentences = 3;
  spec.unaligned_sentences = 1;
  std::vector<OrderedJson> rows;
  for (const auto& c : synthetic_calls(spec)) rows.push_back(to_json(c));
  write_jsonl(dir / "calls.jsonl", rows);
  Json j;
  j["paths"] = {{"calls", "calls.jsonl"}, {"out", "out"}};
  const ExperimentConfig cfg = config_from_json(j, dir.path());
  run_command("assemble", cfg, {});
  const Json p = payload(dir / "out", "assemble");
  CHECK(p["call_count"] == 3);
  CHECK(p["sentence_count"] == 10);
  CHECK(p["sample_count"] == 9);
  CHECK(p["exclusion_count"] == 1);
  CHECK(read_manifest(dir / "out/manifest.jsonl").size() == 9);
  CHECK(read_jsonl(dir / "out/exclusions.jsonl").size() == 1);
}

TEST_CASE("commands refuse to run without upstream artifacts") {
  TempDir dir("upstream");
  const ExperimentConfig cfg = config_from_json(base_config(dir / "out"), dir.path());
  CHECK(kind_of([&] { run_command("split", cfg, {}); }) == ErrorKind::MissingArtifact);
  run_command("assemble", cfg, {});
  CHECK(kind_of([&] { run_command("probe", cfg, {}); }) == ErrorKind::MissingArtifact);
  CHECK(kind_of([&] { run_command("fuse-late", cfg, {}); }) == ErrorKind::Validation);
  CHECK(kind_of([&] { run_command("bogus", cfg, {}); }) == ErrorKind::Validation);
}

TEST_CASE("late fusion of one proportional source equals its own evaluation") {
  TempDir dir("single");
  Json j = base_config(dir / "out");
  j["paths"]["late_fusion"] = {
      {{"name", "text only"}, {"sources", {{{"name", "text"}, {"scores", (kFixtures / "scores/text_seed{seed}.jsonl").string()}}}}}};
  j["seeds"] = {1, 2, 3};
  const ExperimentConfig cfg = config_from_json(j, dir.path());
  for (const char* c : {"assemble", "split", "fuse-late"}) run_command(c, cfg, {});
  const Json g = payload(dir / "out", "fuse-late")["groups"][0];
  CHECK(g["fused"]["report"] == g["sources"][0]["report"]);
  CHECK(g["fused"]["weights"] == Json::parse("[[1.0],[1.0],[1.0]]"));
  CHECK(g["fused"]["report"]["per_seed"].size() == 3);
}

TEST_CASE("reruns are byte-identical and artifacts carry hash and seeds") {
  TempDir dir("rerun");
  const ExperimentConfig cfg = config_from_json(base_config(dir / "out"), dir.path());
  for (const char* c : {"assemble", "split", "probe"}) run_command(c, cfg, {});
  const std::string first = read_text_file(dir / "out/probe.json");
  RunOptions par;
  par.jobs = 3;
  par.cache_bytes = 1 << 20;
  run_command("probe", cfg, par);
  CHECK(read_text_file(dir / "out/probe.json") == first);

  const Json a = Json::parse(first);
  CHECK(a["command"] == "probe");
  CHECK(a["config_hash"] == config_hash(cfg));
  CHECK(a["seeds"]["split"] == 1);
  CHECK(a["payload"]["models"][0]["selected_layer"] == 3);
  CHECK(fs::exists(dir / "out/probe.txt"));
  CHECK(fs::exists(dir / "out/leaderboards/probe_speech6_stage1_layer3.jsonl"));

  run_command("report", cfg, {});
  const std::string md = read_text_file(dir / "out/report.md");
  CHECK(md.find("## Layer-wise probing") != std::string::npos);
  CHECK(md.find("- fuse-early") != std::string::npos);
  CHECK(md.find("stale") == std::string::npos);

  Json changed = base_config(dir / "out");
  changed["split"]["seed"] = 9;
  run_command("report", config_from_json(changed, dir.path()), {});
  CHECK(read_text_file(dir / "out/report.md").find("stale") != std::string::npos);
}

TEST_CASE("command-line exit codes and overrides") {
  TempDir dir("cli");
  Json j = base_config("out");
  const fs::path cfg = write_config(dir, j);
  const std::string base = "--config '" + cfg.string() + "'";

  Cli r = run_cli(dir, "split " + base);
  CHECK(r.code == 3);
  CHECK(r.err.find("assemble.json") == std::string::npos);
  CHECK(r.err.find("manifest.jsonl") != std::string::npos);

  r = run_cli(dir, "assemble " + base);
  CHECK(r.code == 0);
  CHECK(r.out.find("samples") != std::string::npos);
  CHECK(fs::exists(dir / "out/manifest.jsonl"));

  r = run_cli(dir, "split " + base + " --seed 4 --out '" + (dir / "other").string() + "'");
  CHECK(r.code == 3);  // --out moved the run away from the assembled manifest
  r = run_cli(dir, "assemble " + base + " --out '" + (dir / "other").string() + "'");
  CHECK(r.code == 0);
  r = run_cli(dir, "split " + base + " --seed 4 --out '" + (dir / "other").string() + "' --jobs 2");
  CHECK(r.code == 0);
  CHECK(payload(dir / "other", "split")["partition"]["seed"] == 4);

  r = run_cli(dir, "split " + base, "PROBEFUSE_CACHE=lots");
  CHECK(r.code == 2);
  CHECK(r.err.find("PROBEFUSE_CACHE") != std::string::npos);

  j["paths"]["calls"] = "missing_calls.jsonl";
  write_config(dir, j);
  r = run_cli(dir, "assemble " + base);
  CHECK(r.code == 2);
  CHECK(r.err.find("missing_calls.jsonl") != std::string::npos);

  CHECK(run_cli(dir, "assemble").code == 2);
  CHECK(run_cli(dir, "frobnicate " + base).code == 2);
  CHECK(run_cli(dir, "--help").code == 0);
}

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "probefuse/error.hpp"
#include "probefuse/experiment.hpp"
#include "probefuse/util.hpp"

namespace {

constexpr const char* kDescriptions[][2] = {
    {"assemble", "Build the sentence manifest from annotated calls"},
    {"split", "Speaker-independent train/dev/test split"},
    {"probe", "Two-stage layer-wise SVM probing of every configured pack"},
    {"tune", "Full grid search on configured pack layers"},
    {"fuse-early", "Grid search on concatenated audio and text final layers"},
    {"fuse-late", "Dev-UAR weighted fusion of per-source scores"},
    {"wer", "Corpus word error rate of each transcript source"},
    {"report", "Collate all artifacts into report.md"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flattery detection experiment runner"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<bool> strict;
  std::size_t jobs = 1;
  app.add_option("--config", config_path, "Experiment config (JSON)")->required();
  app.add_option("--seed", seed, "Override split.seed");
  app.add_option("--out", out, "Override the output directory");
  app.add_flag("--strict,!--no-strict", strict, "Fail on samples missing from a pack");
  app.add_option("--jobs", jobs, "Concurrent trainings")->check(CLI::PositiveNumber);
  for (const auto& [name, help] : kDescriptions) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    probefuse::ExperimentConfig cfg = probefuse::load_config(config_path);
    if (seed) cfg.split.seed = *seed;
    if (out) cfg.out = std::filesystem::absolute(*out).string();
    if (strict) cfg.strict = *strict;

    probefuse::RunOptions run;
    run.jobs = jobs;
    if (const char* env = std::getenv("PROBEFUSE_CACHE")) run.cache_bytes = probefuse::parse_cache_bytes(env);

    const auto shown = probefuse::run_command(command, cfg, run);
    std::cout << probefuse::read_text_file(shown);
    return 0;
  } catch (const probefuse::Error& e) {
    std::cerr << "probefuse " << command << ": " << probefuse::to_string(e.kind()) << ": " << e.what() << "\n";
    return probefuse::exit_code(e.kind());
  } catch (const probefuse::Json::exception& e) {
    std::cerr << "probefuse " << command << ": malformed JSON: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "probefuse " << command << ": internal error: " << e.what() << "\n";
    return 4;
  }
}

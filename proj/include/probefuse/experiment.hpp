#pragma once

// Config-driven experiment commands. Each command reads its inputs and
// upstream artifacts, then writes `<command>.json` and `<command>.txt` into
// the output directory. The JSON artifact is
//   {"command", "config_hash", "seeds", "payload"}
// and holds nothing that depends on the thread count, the cache budget or
// the wall clock.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "probefuse/error.hpp"
#include "probefuse/fusion.hpp"
#include "probefuse/probe.hpp"
#include "probefuse/splitter.hpp"

namespace probefuse {

struct TuneEntry {
  std::string name;
  std::string pack;  // as written in the config
  std::optional<int> layer;  // default: the pack's final layer
};

struct EarlyFusionEntry {
  std::string name;
  std::string audio;
  std::string text;
};

/// Exactly one of `scores` (a file path, "{seed}" expanded per seed) and
/// `tune` (the name of a tune entry whose dev/test decisions are used).
struct LateSourceEntry {
  std::string name;
  std::string scores;
  std::string tune;
};

struct LateFusionEntry {
  std::string name;
  std::vector<LateSourceEntry> sources;
};

struct TranscriptEntry {
  std::string source;
  std::string path;
};

struct ExperimentConfig {
  /// Relative paths resolve against this directory (the config's own).
  std::filesystem::path base_dir;
  std::string calls;
  std::string out = "out";
  std::vector<std::string> packs;
  std::vector<TuneEntry> tune;
  std::vector<EarlyFusionEntry> early_fusion;
  std::vector<LateFusionEntry> late_fusion;
  std::vector<TranscriptEntry> transcripts;

  SplitOptions split;
  GridSpec stage1 = GridSpec::linear_only();
  GridSpec stage2;
  LateFusionConfig fusion;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool strict = true;
  double solver_tolerance = 1e-3;

  std::filesystem::path resolve(const std::string& p) const;
  std::filesystem::path out_dir() const { return resolve(out); }
};

/// Parses and validates a config document. Every referenced input path
/// must exist (Error{Validation} naming the path otherwise).
ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Canonical form of everything that influences results. The output
/// directory is excluded, so relocating a run keeps its hash.
OrderedJson canonical_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

struct RunOptions {
  std::size_t jobs = 1;
  std::size_t cache_bytes = kDefaultCacheBytes;
};

/// "assemble", "split", "probe", "tune", "fuse-early", "fuse-late", "wer", "report".
const std::vector<std::string>& command_names();

/// Runs one command and returns the path of its human-readable output.
/// Missing upstream artifacts raise Error{MissingArtifact}.
std::filesystem::path run_command(std::string_view command, const ExperimentConfig& cfg, const RunOptions& run);

/// 2 for input validation, 3 for a missing artifact, 4 for numerical failure.
int exit_code(ErrorKind kind) noexcept;

/// Kernel-cache budget from a value such as "268435456", "512M" or "1G".
/// Throws Error{Validation} for anything else.
std::size_t parse_cache_bytes(std::string_view text);

}  // namespace probefuse

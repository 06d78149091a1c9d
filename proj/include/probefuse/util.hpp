#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace probefuse {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// SplitMix64. Fully specified output sequence, so seeded results are
/// identical across standard libraries (unlike std::shuffle and friends).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from (seed, stream index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results must be
/// written to per-index slots; completion order is unspecified.
void parallel_for(std::size_t count, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// One JSON value per non-blank line. Parse errors name the line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path,
                 const std::vector<OrderedJson>& rows);

/// Aligned text table: first column left-aligned, the rest right-aligned.
std::string render_table(const std::vector<std::vector<std::string>>& rows);

/// printf("%.*f").
std::string fixed(double value, int decimals);

}  // namespace probefuse

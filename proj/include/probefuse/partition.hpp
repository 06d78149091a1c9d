#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace probefuse {

enum class Partition { Train = 0, Dev = 1, Test = 2 };

inline constexpr std::array<Partition, 3> kPartitions = {Partition::Train, Partition::Dev,
                                                         Partition::Test};

std::string_view to_string(Partition p) noexcept;
std::optional<Partition> parse_partition(std::string_view name) noexcept;

struct BalanceTolerances {
  double positive_rate = 0.15;
  double mean_duration = 0.10;
};

/// Speaker-level train/dev/test assignment.
struct PartitionAssignment {
  std::map<std::string, Partition> speakers;
  double objective = 0.0;
  std::uint64_t seed = 0;
  std::size_t restarts = 0;
  std::size_t best_candidate = 0;
  BalanceTolerances tolerances;
  bool constraints_met = false;

  std::optional<Partition> find(const std::string& speaker_id) const {
    auto it = speakers.find(speaker_id);
    if (it == speakers.end()) return std::nullopt;
    return it->second;
  }
};

}  // namespace probefuse

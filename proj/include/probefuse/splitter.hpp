#pragma once

// Speaker-independent train/dev/test partitioning.
//
// Candidates are random speaker permutations cut at fixed sizes. Candidate k
// of seed s is a pure function of (sorted speaker ids, s, k), so the search
// can be replayed or parallelised without changing its result.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "probefuse/corpus.hpp"
#include "probefuse/partition.hpp"

namespace probefuse {

struct PartitionSizes {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};

/// train = floor(0.7 S) (capped at S - 2), dev/test split the rest with dev
/// taking the odd speaker. Throws Error{Validation} for S < 3.
PartitionSizes partition_sizes(std::size_t speaker_count);

/// Per-speaker totals used by the objective.
struct SpeakerSummary {
  std::string speaker_id;
  std::size_t samples = 0;
  std::size_t positives = 0;
  double duration_s = 0.0;
};

/// Speakers in lexicographic id order.
std::vector<SpeakerSummary> summarize_speakers(std::span<const SentenceSample> samples);

struct Deviation {
  double positive_rate = 0.0;  // |posrate_p - posrate_total| / posrate_total
  double mean_duration = 0.0;  // |meandur_p - meandur_total| / meandur_total
};

struct SplitEvaluation {
  double objective = 0.0;
  std::array<Deviation, 3> deviations;  // indexed by Partition
};

/// `assignment[i]` is the partition of `speakers[i]`.
SplitEvaluation evaluate_split(std::span<const SpeakerSummary> speakers,
                               std::span<const Partition> assignment);

/// Candidate `index` of the seeded search.
std::vector<Partition> split_candidate(std::size_t speaker_count, std::uint64_t seed,
                                       std::size_t index);

bool within_tolerances(const SplitEvaluation& eval, const BalanceTolerances& tol);

struct SplitOptions {
  std::uint64_t seed = 1;
  std::size_t restarts = 1000;
  BalanceTolerances tolerances;
  std::size_t jobs = 1;
};

/// Best of `restarts` candidates by objective; ties go to the lower index.
PartitionAssignment make_split(std::span<const SentenceSample> samples,
                               const SplitOptions& options);

OrderedJson to_json(const PartitionAssignment& p);
PartitionAssignment partition_from_json(const Json& j);

}  // namespace probefuse

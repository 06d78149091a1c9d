#pragma once

// Evaluation: unweighted average recall (balanced accuracy), word error rate,
// per-group breakdowns and per-seed aggregation.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "probefuse/util.hpp"

namespace probefuse {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t positives() const noexcept { return tp + fn; }
  std::size_t negatives() const noexcept { return tn + fp; }
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Recalls and UAR are absent when the class they need is absent.
struct Metrics {
  Confusion confusion;
  std::optional<double> recall_positive;
  std::optional<double> recall_negative;
  std::optional<double> uar;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics metrics_from_confusion(const Confusion& c);

/// Confusion counts of ±1 predictions against ±1 labels; never throws on
/// single-class input.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

/// UAR = (tp/(tp+fn) + tn/(tn+fp)) / 2. Throws Error{LengthMismatch} or
/// Error{SingleClass}.
Metrics uar(std::span<const int> predictions, std::span<const int> labels);

struct SplitMetrics {
  Metrics overall;
  std::map<std::string, Metrics> subgroups;

  friend bool operator==(const SplitMetrics&, const SplitMetrics&) = default;
};

/// Overall metrics plus the same metrics restricted to each group. Groups
/// holding a single class keep their counts but report no UAR. An empty
/// group name is Error{Validation}.
SplitMetrics subgroup_eval(std::span<const int> predictions, std::span<const int> labels,
                           std::span<const std::string> group_of_sample);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // n - 1 divisor; 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

struct AggregateMetrics {
  std::optional<MeanStd> uar;
  std::optional<MeanStd> recall_positive;
  std::optional<MeanStd> recall_negative;
};

/// Splits are keyed by name ("dev", "test"). After aggregation `per_seed`
/// holds the inputs and `aggregate` is keyed by split name and by
/// "split/group" for subgroups.
struct EvalReport {
  std::map<std::string, SplitMetrics> splits;
  std::vector<std::map<std::string, SplitMetrics>> per_seed;
  std::map<std::string, AggregateMetrics> aggregate;
};

/// Throws Error{Heterogeneous} when split or subgroup names differ and
/// Error{Validation} for an empty list. A metric undefined in any seed is
/// left absent.
EvalReport aggregate_seeds(std::span<const EvalReport> reports);

// Word error rate ------------------------------------------------------------------

struct WerCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;

  double wer() const;
  WerCounts& operator+=(const WerCounts& o);
  friend bool operator==(const WerCounts&, const WerCounts&) = default;
};

using Normalizer = std::function<std::string(std::string_view)>;

/// Lowercases ASCII, replaces characters other than letters, digits,
/// apostrophes and whitespace by spaces, and collapses whitespace. Bytes of
/// multi-byte UTF-8 sequences are kept as letters.
std::string normalize_text(std::string_view text);

std::vector<std::string> tokenize_words(std::string_view normalized);

/// Minimum edit alignment over word tokens with unit costs. Among alignments
/// of equal cost, substitutions are preferred over deletion+insertion pairs.
/// Throws Error{Validation} when the normalized reference is empty.
WerCounts wer(std::string_view reference, std::string_view hypothesis,
              const Normalizer& normalizer = normalize_text);

struct WerReport {
  std::string source_id;
  WerCounts total;
  std::vector<std::pair<std::string, WerCounts>> per_sample;
  std::vector<std::string> skipped;  // empty normalized reference
  std::vector<std::string> missing;  // no hypothesis for a reference id
};

/// Pooled corpus WER: (sum S + sum D + sum I) / sum N. A reference without a
/// hypothesis is scored against the empty string and listed in `missing`.
WerReport corpus_wer(std::string source_id,
                     std::span<const std::pair<std::string, std::string>> references,
                     std::span<const std::pair<std::string, std::string>> hypotheses,
                     const Normalizer& normalizer = normalize_text);

// Serialization -------------------------------------------------------------------

OrderedJson to_json(const Metrics& m);
OrderedJson to_json(const SplitMetrics& m);
OrderedJson to_json(const EvalReport& r);
OrderedJson to_json(const WerCounts& w);
OrderedJson to_json(const WerReport& w);

/// "82.67" style percentage, or "n/a".
std::string format_percent(const std::optional<double>& v);
/// "82.67 (+-1.69)", or "n/a".
std::string format_percent(const std::optional<MeanStd>& v);

}  // namespace probefuse

#pragma once

// Sentence-level corpus assembly from annotated call transcripts.
//
// All character offsets are UTF-8 byte offsets into the transcript and all
// spans are half-open [start, end).

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "probefuse/partition.hpp"
#include "probefuse/util.hpp"

namespace probefuse {

enum class Gender { Male, Female, Unknown };
enum class Label { None, Flattery };

std::string_view to_string(Gender g) noexcept;
std::string_view to_string(Label l) noexcept;

struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end > start ? end - start : 0; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

/// Number of characters shared by two half-open spans.
inline std::size_t overlap(CharSpan a, CharSpan b) noexcept {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  return hi > lo ? hi - lo : 0;
}

struct WordAlignment {
  CharSpan chars;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct CallRecord {
  std::string call_id;
  std::string speaker_id;
  Gender speaker_gender = Gender::Unknown;
  std::string transcript;
  std::vector<CharSpan> sentence_spans;
  std::vector<WordAlignment> word_alignments;
  std::vector<CharSpan> flattery_spans;
};

struct SentenceSample {
  std::string sample_id;
  std::string call_id;
  std::string speaker_id;
  Gender speaker_gender = Gender::Unknown;
  std::string text;
  double clip_start_s = 0.0;
  double clip_end_s = 0.0;
  double duration_s = 0.0;
  Label label = Label::None;

  bool positive() const noexcept { return label == Label::Flattery; }
  friend bool operator==(const SentenceSample&, const SentenceSample&) = default;
};

struct Exclusion {
  std::string call_id;
  CharSpan sentence_span;
  std::string reason;
};

struct AssemblyResult {
  std::vector<SentenceSample> samples;
  std::vector<Exclusion> exclusions;
};

/// Throws Error{Validation} naming the first offending span.
void validate(const CallRecord& call);

std::string make_sample_id(std::string_view call_id, std::size_t sentence_index);

/// One sample per sentence span, labelled flattery iff some flattery span
/// shares at least one character with it. Clip fields are left at zero;
/// `assemble` fills them.
std::vector<SentenceSample> project_labels(const CallRecord& call);

/// (min start_s, max end_s) over words overlapping the sentence span.
/// Throws Error{UnalignedSentence} when no word overlaps.
std::pair<double, double> clip_bounds(const CallRecord& call, CharSpan sentence);

/// Labels, clips, and filters every call. Sentences with blank text or no
/// aligned word are dropped and reported. Duplicate sample ids are rejected.
AssemblyResult assemble(std::span<const CallRecord> calls);

// Statistics -------------------------------------------------------------

struct GroupStats {
  std::size_t speaker_count = 0;
  std::size_t male_speakers = 0;
  std::size_t female_speakers = 0;
  std::size_t unknown_speakers = 0;
  std::size_t sample_count = 0;
  std::size_t positive_count = 0;
  std::optional<double> positive_fraction;
  std::optional<double> mean_duration_s;
  std::optional<double> std_duration_s;  // population std
  double total_duration_s = 0.0;
};

struct CorpusStats {
  std::array<GroupStats, 3> partitions;  // indexed by Partition
  GroupStats total;

  const GroupStats& of(Partition p) const { return partitions[static_cast<int>(p)]; }
};

/// Table-1 style statistics. Throws Error{UnknownSpeaker} for a sample whose
/// speaker has no partition.
CorpusStats corpus_stats(std::span<const SentenceSample> samples,
                         const PartitionAssignment& partition);

/// Stats over a single group of samples, no partitioning.
GroupStats group_stats(std::span<const SentenceSample> samples);

/// "H:MM:SS", rounded to the nearest second.
std::string format_hms(double seconds);

/// Header row plus one row per statistic; columns train, dev, test, total.
std::vector<std::vector<std::string>> stats_table_rows(const CorpusStats& stats);
std::string render_stats_table(const CorpusStats& stats);

// Serialization ------------------------------------------------------------

CallRecord call_from_json(const Json& j);
OrderedJson to_json(const CallRecord& c);
std::vector<CallRecord> read_calls(const std::filesystem::path& path);

OrderedJson to_json(const SentenceSample& s);
SentenceSample sample_from_json(const Json& j);
OrderedJson to_json(const Exclusion& e);
OrderedJson to_json(const GroupStats& g);
OrderedJson to_json(const CorpusStats& s);

void write_manifest(const std::filesystem::path& path,
                    std::span<const SentenceSample> samples);
std::vector<SentenceSample> read_manifest(const std::filesystem::path& path);
void write_exclusions(const std::filesystem::path& path,
                      std::span<const Exclusion> exclusions);

}  // namespace probefuse

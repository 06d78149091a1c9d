#include "probefuse/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json_fields.hpp"
#include "probefuse/error.hpp"

namespace probefuse {

using detail::field;
using detail::number_field;
using detail::string_field;

std::string_view to_string(Gender g) noexcept {
  switch (g) {
    case Gender::Male: return "male";
    case Gender::Female: return "female";
    case Gender::Unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Label l) noexcept {
  return l == Label::Flattery ? "flattery" : "none";
}

std::string_view to_string(Partition p) noexcept {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Dev: return "dev";
    case Partition::Test: return "test";
  }
  return "train";
}

std::optional<Partition> parse_partition(std::string_view name) noexcept {
  if (name == "train") return Partition::Train;
  if (name == "dev") return Partition::Dev;
  if (name == "test") return Partition::Test;
  return std::nullopt;
}

namespace {

std::string describe(CharSpan s) {
  return "[" + std::to_string(s.start) + "," + std::to_string(s.end) + ")";
}

void check_in_range(const CallRecord& call, CharSpan s, const char* what) {
  if (s.start > s.end || s.end > call.transcript.size()) {
    fail(ErrorKind::Validation, "call " + call.call_id + ": " + what + " span " + describe(s) +
                                    " outside transcript of length " +
                                    std::to_string(call.transcript.size()));
  }
}

bool is_blank(std::string_view text) {
  return text.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

Gender parse_gender(const std::string& s, const std::string& where) {
  if (s == "male") return Gender::Male;
  if (s == "female") return Gender::Female;
  if (s == "unknown") return Gender::Unknown;
  fail(ErrorKind::Validation, where + ": unknown speaker_gender '" + s + "'");
}

CharSpan span_from_json(const Json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
    fail(ErrorKind::Validation, where + ": span must be [start, end] with non-negative integers");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

}  // namespace

void validate(const CallRecord& call) {
  if (call.call_id.empty()) fail(ErrorKind::Validation, "call with empty call_id");
  if (call.speaker_id.empty())
    fail(ErrorKind::Validation, "call " + call.call_id + ": empty speaker_id");

  for (std::size_t i = 0; i < call.sentence_spans.size(); ++i) {
    const CharSpan s = call.sentence_spans[i];
    check_in_range(call, s, "sentence");
    if (i > 0 && s.start < call.sentence_spans[i - 1].end) {
      fail(ErrorKind::Validation, "call " + call.call_id + ": sentence span " + describe(s) +
                                      " overlaps or precedes " +
                                      describe(call.sentence_spans[i - 1]));
    }
  }
  for (const CharSpan& f : call.flattery_spans) check_in_range(call, f, "flattery");
  for (std::size_t i = 0; i < call.word_alignments.size(); ++i) {
    const WordAlignment& w = call.word_alignments[i];
    check_in_range(call, w.chars, "word");
    if (i > 0 && w.chars.start < call.word_alignments[i - 1].chars.end) {
      fail(ErrorKind::Validation, "call " + call.call_id + ": word span " + describe(w.chars) +
                                      " overlaps or precedes " +
                                      describe(call.word_alignments[i - 1].chars));
    }
    if (!std::isfinite(w.start_s) || !std::isfinite(w.end_s) || w.end_s < w.start_s) {
      fail(ErrorKind::Validation, "call " + call.call_id + ": word span " + describe(w.chars) +
                                      " has invalid times");
    }
  }
}

std::string make_sample_id(std::string_view call_id, std::size_t sentence_index) {
  std::string id(call_id);
  id += '#';
  id += std::to_string(sentence_index);
  return id;
}

std::vector<SentenceSample> project_labels(const CallRecord& call) {
  validate(call);
  std::vector<SentenceSample> out;
  out.reserve(call.sentence_spans.size());
  for (std::size_t i = 0; i < call.sentence_spans.size(); ++i) {
    const CharSpan span = call.sentence_spans[i];
    SentenceSample s;
    s.sample_id = make_sample_id(call.call_id, i);
    s.call_id = call.call_id;
    s.speaker_id = call.speaker_id;
    s.speaker_gender = call.speaker_gender;
    s.text = call.transcript.substr(span.start, span.length());
    s.label = Label::None;
    for (const CharSpan& f : call.flattery_spans) {
      if (overlap(span, f) >= 1) {
        s.label = Label::Flattery;
        break;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<double, double> clip_bounds(const CallRecord& call, CharSpan sentence) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const WordAlignment& w : call.word_alignments) {
    if (overlap(w.chars, sentence) == 0) continue;
    any = true;
    lo = std::min(lo, w.start_s);
    hi = std::max(hi, w.end_s);
  }
  if (!any) {
    fail(ErrorKind::UnalignedSentence,
         "call " + call.call_id + ": sentence " + describe(sentence) + " has no aligned word");
  }
  return {lo, hi};
}

AssemblyResult assemble(std::span<const CallRecord> calls) {
  AssemblyResult result;
  std::unordered_set<std::string> seen;
  for (const CallRecord& call : calls) {
    std::vector<SentenceSample> projected = project_labels(call);
    for (std::size_t i = 0; i < projected.size(); ++i) {
      SentenceSample& s = projected[i];
      const CharSpan span = call.sentence_spans[i];
      if (is_blank(s.text)) {
        result.exclusions.push_back({call.call_id, span, "empty_text"});
        continue;
      }
      try {
        const auto [start, end] = clip_bounds(call, span);
        s.clip_start_s = start;
        s.clip_end_s = end;
        s.duration_s = end - start;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UnalignedSentence) throw;
        result.exclusions.push_back({call.call_id, span, "unaligned"});
        continue;
      }
      if (!seen.insert(s.sample_id).second)
        fail(ErrorKind::Validation, "duplicate sample id " + s.sample_id);
      result.samples.push_back(std::move(s));
    }
  }
  return result;
}

// Statistics -------------------------------------------------------------

namespace {

struct Accumulator {
  std::map<std::string, Gender> speakers;
  std::size_t samples = 0;
  std::size_t positives = 0;
  std::vector<double> durations;

  void add(const SentenceSample& s) {
    speakers.emplace(s.speaker_id, s.speaker_gender);
    ++samples;
    if (s.positive()) ++positives;
    durations.push_back(s.duration_s);
  }

  GroupStats finish() const {
    GroupStats g;
    g.speaker_count = speakers.size();
    for (const auto& [id, gender] : speakers) {
      if (gender == Gender::Male) ++g.male_speakers;
      else if (gender == Gender::Female) ++g.female_speakers;
      else ++g.unknown_speakers;
    }
    g.sample_count = samples;
    g.positive_count = positives;
    double total = 0.0;
    for (double d : durations) total += d;
    g.total_duration_s = total;
    if (samples > 0) {
      const double n = static_cast<double>(samples);
      const double mean = total / n;
      double ss = 0.0;
      for (double d : durations) ss += (d - mean) * (d - mean);
      g.positive_fraction = static_cast<double>(positives) / n;
      g.mean_duration_s = mean;
      g.std_duration_s = std::sqrt(ss / n);
    }
    return g;
  }
};

}  // namespace

GroupStats group_stats(std::span<const SentenceSample> samples) {
  Accumulator acc;
  for (const auto& s : samples) acc.add(s);
  return acc.finish();
}

CorpusStats corpus_stats(std::span<const SentenceSample> samples,
                         const PartitionAssignment& partition) {
  std::array<Accumulator, 3> parts;
  Accumulator total;
  for (const auto& s : samples) {
    const auto p = partition.find(s.speaker_id);
    if (!p) {
      fail(ErrorKind::UnknownSpeaker,
           "speaker " + s.speaker_id + " of sample " + s.sample_id + " has no partition");
    }
    parts[static_cast<int>(*p)].add(s);
    total.add(s);
  }
  CorpusStats stats;
  for (int i = 0; i < 3; ++i) stats.partitions[i] = parts[i].finish();
  stats.total = total.finish();
  return stats;
}

std::string format_hms(double seconds) {
  const long long total = std::llround(std::max(0.0, seconds));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld:%02lld:%02lld", total / 3600, (total / 60) % 60,
                total % 60);
  return buf;
}


std::vector<std::vector<std::string>> stats_table_rows(const CorpusStats& stats) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"", "train", "dev", "test", "total"});
  std::vector<const GroupStats*> cols = {&stats.of(Partition::Train), &stats.of(Partition::Dev),
                                         &stats.of(Partition::Test), &stats.total};
  auto row = [&](std::string name, auto cell) {
    std::vector<std::string> r = {std::move(name)};
    for (const GroupStats* g : cols) r.push_back(cell(*g));
    rows.push_back(std::move(r));
  };
  row("# speakers (m, f)", [](const GroupStats& g) {
    return std::to_string(g.speaker_count) + " (" + std::to_string(g.male_speakers) + ", " +
           std::to_string(g.female_speakers) + ")";
  });
  row("# samples (flattery)", [](const GroupStats& g) {
    const std::string frac =
        g.positive_fraction ? fixed(100.0 * *g.positive_fraction, 1) + "%" : "n/a";
    return std::to_string(g.sample_count) + " (" + frac + ")";
  });
  row("mean sample dur. (std) [s]", [](const GroupStats& g) -> std::string {
    if (!g.mean_duration_s) return "n/a";
    return fixed(*g.mean_duration_s, 1) + " (+-" + fixed(*g.std_duration_s, 1) + ")";
  });
  row("total dur.", [](const GroupStats& g) { return format_hms(g.total_duration_s); });
  return rows;
}

std::string render_stats_table(const CorpusStats& stats) {
  return render_table(stats_table_rows(stats));
}

// Serialization ------------------------------------------------------------

CallRecord call_from_json(const Json& j) {
  const std::string where = j.is_object() && j.contains("call_id") && j["call_id"].is_string()
                                ? "call " + j["call_id"].get<std::string>()
                                : std::string("call record");
  CallRecord c;
  c.call_id = string_field(j, "call_id", where);
  c.speaker_id = string_field(j, "speaker_id", where);
  c.speaker_gender = parse_gender(string_field(j, "speaker_gender", where), where);
  c.transcript = string_field(j, "transcript", where);

  auto spans = [&](const char* key) {
    const Json& arr = field(j, key, where);
    if (!arr.is_array()) fail(ErrorKind::Validation, where + ": '" + key + "' must be an array");
    std::vector<CharSpan> out;
    for (const Json& v : arr) out.push_back(span_from_json(v, where + " " + key));
    return out;
  };
  c.sentence_spans = spans("sentence_spans");
  c.flattery_spans = spans("flattery_spans");

  const Json& words = field(j, "word_alignments", where);
  if (!words.is_array()) fail(ErrorKind::Validation, where + ": 'word_alignments' must be an array");
  for (const Json& w : words) {
    if (!w.is_array() || w.size() != 4 || !w[0].is_number_unsigned() ||
        !w[1].is_number_unsigned() || !w[2].is_number() || !w[3].is_number()) {
      fail(ErrorKind::Validation,
           where + ": word alignment must be [char_start, char_end, start_s, end_s]");
    }
    c.word_alignments.push_back(
        {{w[0].get<std::size_t>(), w[1].get<std::size_t>()}, w[2].get<double>(), w[3].get<double>()});
  }
  validate(c);
  return c;
}

OrderedJson to_json(const CallRecord& c) {
  auto span = [](CharSpan s) { return OrderedJson::array({s.start, s.end}); };
  OrderedJson j;
  j["call_id"] = c.call_id;
  j["speaker_id"] = c.speaker_id;
  j["speaker_gender"] = to_string(c.speaker_gender);
  j["transcript"] = c.transcript;
  j["sentence_spans"] = OrderedJson::array();
  for (CharSpan s : c.sentence_spans) j["sentence_spans"].push_back(span(s));
  j["flattery_spans"] = OrderedJson::array();
  for (CharSpan s : c.flattery_spans) j["flattery_spans"].push_back(span(s));
  j["word_alignments"] = OrderedJson::array();
  for (const WordAlignment& w : c.word_alignments)
    j["word_alignments"].push_back(OrderedJson::array({w.chars.start, w.chars.end, w.start_s, w.end_s}));
  return j;
}

std::vector<CallRecord> read_calls(const std::filesystem::path& path) {
  std::vector<CallRecord> calls;
  for (const Json& j : read_jsonl(path)) calls.push_back(call_from_json(j));
  return calls;
}

OrderedJson to_json(const SentenceSample& s) {
  OrderedJson j;
  j["sample_id"] = s.sample_id;
  j["call_id"] = s.call_id;
  j["speaker_id"] = s.speaker_id;
  j["speaker_gender"] = to_string(s.speaker_gender);
  j["text"] = s.text;
  j["clip_start_s"] = s.clip_start_s;
  j["clip_end_s"] = s.clip_end_s;
  j["duration_s"] = s.duration_s;
  j["label"] = to_string(s.label);
  return j;
}

SentenceSample sample_from_json(const Json& j) {
  const std::string where = "manifest row";
  SentenceSample s;
  s.sample_id = string_field(j, "sample_id", where);
  const std::string w = where + " " + s.sample_id;
  s.call_id = string_field(j, "call_id", w);
  s.speaker_id = string_field(j, "speaker_id", w);
  s.speaker_gender = parse_gender(string_field(j, "speaker_gender", w), w);
  s.text = string_field(j, "text", w);
  s.clip_start_s = number_field(j, "clip_start_s", w);
  s.clip_end_s = number_field(j, "clip_end_s", w);
  s.duration_s = number_field(j, "duration_s", w);
  const std::string label = string_field(j, "label", w);
  if (label == "flattery") s.label = Label::Flattery;
  else if (label == "none") s.label = Label::None;
  else fail(ErrorKind::Validation, w + ": unknown label '" + label + "'");
  if (!(s.duration_s >= 0.0)) fail(ErrorKind::Validation, w + ": negative duration");
  return s;
}

OrderedJson to_json(const Exclusion& e) {
  OrderedJson j;
  j["call_id"] = e.call_id;
  j["sentence_span"] = {e.sentence_span.start, e.sentence_span.end};
  j["reason"] = e.reason;
  return j;
}

OrderedJson to_json(const GroupStats& g) {
  auto opt = [](const std::optional<double>& v) -> OrderedJson {
    return v ? OrderedJson(*v) : OrderedJson(nullptr);
  };
  OrderedJson j;
  j["speaker_count"] = g.speaker_count;
  j["male_speakers"] = g.male_speakers;
  j["female_speakers"] = g.female_speakers;
  j["unknown_speakers"] = g.unknown_speakers;
  j["sample_count"] = g.sample_count;
  j["positive_count"] = g.positive_count;
  j["positive_fraction"] = opt(g.positive_fraction);
  j["mean_duration_s"] = opt(g.mean_duration_s);
  j["std_duration_s"] = opt(g.std_duration_s);
  j["total_duration_s"] = g.total_duration_s;
  j["total_duration_hms"] = format_hms(g.total_duration_s);
  return j;
}

OrderedJson to_json(const CorpusStats& s) {
  OrderedJson j;
  for (Partition p : kPartitions) j[std::string(to_string(p))] = to_json(s.of(p));
  j["total"] = to_json(s.total);
  return j;
}

void write_manifest(const std::filesystem::path& path, std::span<const SentenceSample> samples) {
  std::vector<OrderedJson> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(to_json(s));
  write_jsonl(path, rows);
}

std::vector<SentenceSample> read_manifest(const std::filesystem::path& path) {
  std::vector<SentenceSample> samples;
  std::unordered_set<std::string> seen;
  for (const Json& j : read_jsonl(path)) {
    samples.push_back(sample_from_json(j));
    if (!seen.insert(samples.back().sample_id).second)
      fail(ErrorKind::Validation, "duplicate sample id " + samples.back().sample_id);
  }
  return samples;
}

void write_exclusions(const std::filesystem::path& path, std::span<const Exclusion> exclusions) {
  std::vector<OrderedJson> rows;
  for (const auto& e : exclusions) rows.push_back(to_json(e));
  write_jsonl(path, rows);
}

}  // namespace probefuse

#include "probefuse/splitter.hpp"

#include <cmath>
#include <map>

#include "json_fields.hpp"
#include "probefuse/error.hpp"

namespace probefuse {

PartitionSizes partition_sizes(std::size_t speaker_count) {
  if (speaker_count < 3) {
    fail(ErrorKind::Validation, "speaker-independent split needs at least 3 speakers, got " +
                                    std::to_string(speaker_count));
  }
  // floor(0.7 * S) in integer arithmetic so 255 -> 178 exactly.
  std::size_t train = speaker_count * 7 / 10;
  train = std::min(train, speaker_count - 2);
  const std::size_t rest = speaker_count - train;
  return {train, (rest + 1) / 2, rest / 2};
}

std::vector<SpeakerSummary> summarize_speakers(std::span<const SentenceSample> samples) {
  std::map<std::string, SpeakerSummary> by_id;
  for (const auto& s : samples) {
    auto& sum = by_id[s.speaker_id];
    sum.speaker_id = s.speaker_id;
    ++sum.samples;
    if (s.positive()) ++sum.positives;
    sum.duration_s += s.duration_s;
  }
  std::vector<SpeakerSummary> out;
  out.reserve(by_id.size());
  for (auto& [id, sum] : by_id) out.push_back(std::move(sum));
  return out;
}

SplitEvaluation evaluate_split(std::span<const SpeakerSummary> speakers,
                               std::span<const Partition> assignment) {
  if (speakers.size() != assignment.size())
    fail(ErrorKind::LengthMismatch, "assignment length differs from speaker count");

  struct Totals {
    double samples = 0, positives = 0, duration = 0;
  };
  std::array<Totals, 3> part{};
  Totals all;
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    Totals& t = part[static_cast<int>(assignment[i])];
    t.samples += static_cast<double>(speakers[i].samples);
    t.positives += static_cast<double>(speakers[i].positives);
    t.duration += speakers[i].duration_s;
    all.samples += static_cast<double>(speakers[i].samples);
    all.positives += static_cast<double>(speakers[i].positives);
    all.duration += speakers[i].duration_s;
  }
  if (all.positives <= 0.0)
    fail(ErrorKind::SingleClass, "split objective undefined: corpus has no positive samples");

  const double rate_total = all.positives / all.samples;
  const double dur_total = all.duration / all.samples;
  SplitEvaluation eval;
  for (int p = 0; p < 3; ++p) {
    Deviation& d = eval.deviations[p];
    if (part[p].samples == 0) {
      // An empty partition is maximally unbalanced.
      d.positive_rate = 1.0;
      d.mean_duration = 1.0;
    } else {
      d.positive_rate = std::abs(part[p].positives / part[p].samples - rate_total) / rate_total;
      d.mean_duration = dur_total > 0.0
                            ? std::abs(part[p].duration / part[p].samples - dur_total) / dur_total
                            : 0.0;
    }
    eval.objective += d.positive_rate + d.mean_duration;
  }
  return eval;
}

std::vector<Partition> split_candidate(std::size_t speaker_count, std::uint64_t seed,
                                       std::size_t index) {
  const PartitionSizes sizes = partition_sizes(speaker_count);
  std::vector<std::size_t> order(speaker_count);
  for (std::size_t i = 0; i < speaker_count; ++i) order[i] = i;
  SplitMix64 rng(mix_seed(seed, index));
  rng.shuffle(order);

  std::vector<Partition> assignment(speaker_count, Partition::Test);
  for (std::size_t k = 0; k < speaker_count; ++k) {
    Partition p = Partition::Test;
    if (k < sizes.train) p = Partition::Train;
    else if (k < sizes.train + sizes.dev) p = Partition::Dev;
    assignment[order[k]] = p;
  }
  return assignment;
}

bool within_tolerances(const SplitEvaluation& eval, const BalanceTolerances& tol) {
  for (const Deviation& d : eval.deviations) {
    if (d.positive_rate > tol.positive_rate || d.mean_duration > tol.mean_duration) return false;
  }
  return true;
}

PartitionAssignment make_split(std::span<const SentenceSample> samples,
                               const SplitOptions& options) {
  if (options.restarts == 0) fail(ErrorKind::Validation, "split needs at least one restart");
  const std::vector<SpeakerSummary> speakers = summarize_speakers(samples);
  partition_sizes(speakers.size());

  std::size_t positives = 0;
  for (const auto& s : samples) positives += s.positive() ? 1 : 0;
  if (positives == 0) fail(ErrorKind::SingleClass, "split needs at least one positive sample");
  if (positives == samples.size())
    fail(ErrorKind::SingleClass, "split needs at least one negative sample");

  std::vector<double> objectives(options.restarts);
  parallel_for(options.restarts, options.jobs, [&](std::size_t k) {
    const auto candidate = split_candidate(speakers.size(), options.seed, k);
    objectives[k] = evaluate_split(speakers, candidate).objective;
  });

  std::size_t best = 0;
  for (std::size_t k = 1; k < objectives.size(); ++k) {
    if (objectives[k] < objectives[best]) best = k;
  }

  const auto winner = split_candidate(speakers.size(), options.seed, best);
  const SplitEvaluation eval = evaluate_split(speakers, winner);

  PartitionAssignment result;
  for (std::size_t i = 0; i < speakers.size(); ++i)
    result.speakers.emplace(speakers[i].speaker_id, winner[i]);
  result.objective = eval.objective;
  result.seed = options.seed;
  result.restarts = options.restarts;
  result.best_candidate = best;
  result.tolerances = options.tolerances;
  result.constraints_met = within_tolerances(eval, options.tolerances);
  return result;
}

OrderedJson to_json(const PartitionAssignment& p) {
  OrderedJson j;
  j["seed"] = p.seed;
  j["restarts"] = p.restarts;
  j["best_candidate"] = p.best_candidate;
  j["objective"] = p.objective;
  j["constraints_met"] = p.constraints_met;
  j["tolerances"] = {{"positive_rate", p.tolerances.positive_rate},
                     {"mean_duration", p.tolerances.mean_duration}};
  OrderedJson assignments = OrderedJson::object();
  for (const auto& [speaker, part] : p.speakers) assignments[speaker] = to_string(part);
  j["assignments"] = std::move(assignments);
  return j;
}

PartitionAssignment partition_from_json(const Json& j) {
  const std::string where = "partition";
  PartitionAssignment p;
  p.seed = static_cast<std::uint64_t>(detail::integer_field(j, "seed", where));
  p.restarts = static_cast<std::size_t>(detail::integer_field(j, "restarts", where));
  p.objective = detail::number_field(j, "objective", where);
  if (j.contains("best_candidate"))
    p.best_candidate = static_cast<std::size_t>(detail::integer_field(j, "best_candidate", where));
  if (j.contains("constraints_met") && j["constraints_met"].is_boolean())
    p.constraints_met = j["constraints_met"].get<bool>();
  if (j.contains("tolerances")) {
    const Json& t = j["tolerances"];
    p.tolerances.positive_rate = detail::number_field(t, "positive_rate", where);
    p.tolerances.mean_duration = detail::number_field(t, "mean_duration", where);
  }
  const Json& a = detail::field(j, "assignments", where);
  if (!a.is_object()) fail(ErrorKind::Validation, "partition: 'assignments' must be an object");
  for (const auto& [speaker, value] : a.items()) {
    const auto part = value.is_string() ? parse_partition(value.get<std::string>()) : std::nullopt;
    if (!part) fail(ErrorKind::Validation, "partition: bad partition for speaker " + speaker);
    p.speakers.emplace(speaker, *part);
  }
  return p;
}

}  // namespace probefuse

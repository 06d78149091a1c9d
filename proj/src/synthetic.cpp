#include "probefuse/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "probefuse/error.hpp"
#include "probefuse/util.hpp"

namespace probefuse {

namespace {

constexpr const char* kVocabulary[] = {"the",     "quarter", "revenue", "margin",  "guidance",
                                       "we",      "expect",  "growth",  "customers", "cash",
                                       "flow",    "question", "thanks", "on",      "our",
                                       "segment", "pricing", "demand",  "year",    "and"};
constexpr std::size_t kVocabularySize = sizeof(kVocabulary) / sizeof(kVocabulary[0]);

std::size_t between(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

std::vector<CallRecord> synthetic_calls(const SyntheticCorpusSpec& spec) {
  if (spec.speakers == 0 || spec.min_sentences == 0 || spec.min_sentences > spec.max_sentences ||
      spec.min_words < 3 || spec.min_words > spec.max_words) {
    fail(ErrorKind::Validation, "synthetic corpus: invalid size parameters");
  }
  std::vector<CallRecord> calls;
  std::size_t unaligned_left = spec.unaligned_sentences;
  const std::size_t females =
      static_cast<std::size_t>(std::llround(spec.female_fraction * static_cast<double>(spec.speakers)));

  for (std::size_t spk = 0; spk < spec.speakers; ++spk) {
    SplitMix64 rng(mix_seed(spec.seed, spk));
    const double propensity = spec.positive_rate * (0.5 + rng.uniform());
    const double tempo = 0.25 + 0.1 * rng.uniform();  // seconds per word
    char speaker_id[32];
    std::snprintf(speaker_id, sizeof speaker_id, "spk%03zu", spk);

    for (std::size_t call_no = 0; call_no < spec.calls_per_speaker; ++call_no) {
      CallRecord c;
      c.call_id = std::string(speaker_id) + "_call" + std::to_string(call_no);
      c.speaker_id = speaker_id;
      // spread female speakers over the id range
      c.speaker_gender = females > 0 && (spk * females) % spec.speakers < females
                             ? Gender::Female
                             : Gender::Male;
      double clock = 0.0;
      const std::size_t sentences = between(rng, spec.min_sentences, spec.max_sentences);
      for (std::size_t s = 0; s < sentences; ++s) {
        const bool positive = rng.uniform() < propensity;
        const std::size_t words = between(rng, spec.min_words, spec.max_words);
        const std::size_t great_at = positive ? rng.below(words) : words;
        const std::size_t sentence_start = c.transcript.size();
        std::size_t flattery_start = 0;
        for (std::size_t w = 0; w < words; ++w) {
          if (w > 0) c.transcript += ' ';
          const std::size_t start = c.transcript.size();
          if (w == great_at) {
            flattery_start = start;
            c.transcript += "great";
          } else {
            c.transcript += kVocabulary[rng.below(kVocabularySize)];
          }
          const double length = tempo * (0.6 + 0.8 * rng.uniform());
          c.word_alignments.push_back({{start, c.transcript.size()}, clock, clock + length});
          clock += length + 0.05;
        }
        c.transcript += '.';
        c.sentence_spans.push_back({sentence_start, c.transcript.size()});
        if (positive) {
          const std::size_t end = std::min(c.transcript.size(), flattery_start + 12);
          c.flattery_spans.push_back({flattery_start, end});
        }
        c.transcript += ' ';
        clock += 0.3;
      }
      if (unaligned_left > 0) {
        --unaligned_left;
        const std::size_t start = c.transcript.size();
        c.transcript += "inaudible crosstalk.";
        c.sentence_spans.push_back({start, c.transcript.size()});
      }
      calls.push_back(std::move(c));
    }
  }
  return calls;
}

FeaturePack synthetic_pack(std::span<const SentenceSample> samples, const SyntheticPackSpec& spec) {
  if (spec.dim == 0 || spec.layers.empty())
    fail(ErrorKind::Validation, "synthetic pack: dim and layers must be non-empty");
  FeaturePack pack;
  pack.model_id = spec.model_id;
  pack.pooling = spec.pooling;
  pack.layers = spec.layers;
  pack.dim = spec.dim;
  for (const auto& s : samples) pack.sample_ids.push_back(s.sample_id);
  for (int layer : spec.layers) {
    auto it = spec.separation.find(layer);
    const double half = it == spec.separation.end() ? 0.0 : 0.5 * it->second;
    MatrixF m(samples.size(), spec.dim);
    for (std::size_t r = 0; r < samples.size(); ++r) {
      SplitMix64 rng(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(layer)),
                              fnv1a(samples[r].sample_id)));
      const double shift = samples[r].positive() ? half : -half;
      for (std::size_t c = 0; c < spec.dim; ++c)
        m(r, c) = static_cast<float>(rng.normal() + shift);
    }
    pack.matrices.push_back(std::move(m));
  }
  return pack;
}

ScoreFile synthetic_scores(std::span<const SentenceSample> samples, const std::string& model_id,
                           double quality, std::uint64_t seed) {
  ScoreFile f;
  f.model_id = model_id;
  f.seed = static_cast<std::int64_t>(seed);
  for (const auto& s : samples) {
    SplitMix64 rng(mix_seed(seed, fnv1a(s.sample_id)));
    const double z = quality * (s.positive() ? 1.0 : -1.0) + rng.normal();
    f.entries[s.sample_id] = 1.0 / (1.0 + std::exp(-z));
  }
  return f;
}

}  // namespace probefuse

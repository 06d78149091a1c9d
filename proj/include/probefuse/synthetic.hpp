#pragma once

// Deterministic synthetic corpora, feature packs and score files for tests
// and fixtures. Every value is a pure function of the seed (and, for packs
// and scores, of the sample id), never of row order or thread count.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "probefuse/corpus.hpp"
#include "probefuse/feature_store.hpp"

namespace probefuse {

struct SyntheticCorpusSpec {
  std::size_t speakers = 20;
  double female_fraction = 0.1;
  std::size_t calls_per_speaker = 1;
  std::size_t min_sentences = 6;
  std::size_t max_sentences = 14;
  std::size_t min_words = 8;
  std::size_t max_words = 30;
  double positive_rate = 0.07;
  /// Extra sentences without word alignments, spread over the first calls.
  std::size_t unaligned_sentences = 0;
  std::uint64_t seed = 1;
};

/// Calls whose positive sentences contain the word "great" and carry a
/// flattery span over a few of their words. Speakers get individual
/// positive propensities and speaking rates.
std::vector<CallRecord> synthetic_calls(const SyntheticCorpusSpec& spec);

struct SyntheticPackSpec {
  std::string model_id = "synthetic";
  Pooling pooling = Pooling::MeanTokens;
  std::vector<int> layers = {0};
  std::size_t dim = 8;
  /// Layer -> distance between class means, in noise standard deviations,
  /// along every coordinate. Unlisted layers are pure noise.
  std::map<int, double> separation;
  std::uint64_t seed = 1;
};

/// Rows follow `samples`; labels come from each sample's label.
FeaturePack synthetic_pack(std::span<const SentenceSample> samples, const SyntheticPackSpec& spec);

/// Scores in [0,1]: logistic(quality * y + N(0,1)).
ScoreFile synthetic_scores(std::span<const SentenceSample> samples, const std::string& model_id,
                           double quality, std::uint64_t seed);

}  // namespace probefuse

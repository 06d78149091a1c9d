#pragma once

// Feature packs: per-layer embedding matrices keyed by sample id.
//
// On disk a pack is a directory holding
//   manifest.json   {format_version, model_id, pooling, dim, layers, sample_count}
//   ids.txt         one sample id per line, in row order
//   layer_<k>.fpk   "FPK1" | u32 version | u32 rows | u32 cols | rows*cols f32
// with every integer and float little-endian and matrices row-major.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "probefuse/corpus.hpp"
#include "probefuse/matrix.hpp"
#include "probefuse/partition.hpp"

namespace probefuse {

enum class Pooling { ClsToken, MeanTokens };

std::string_view to_string(Pooling p) noexcept;

inline constexpr std::uint32_t kPackFormatVersion = 1;

struct FeaturePack {
  std::string model_id;
  Pooling pooling = Pooling::MeanTokens;
  std::vector<int> layers;
  std::size_t dim = 0;
  std::vector<std::string> sample_ids;
  std::vector<MatrixF> matrices;  // parallel to `layers`

  bool has_layer(int layer) const;
  const MatrixF& layer(int layer) const;
  int final_layer() const;
};

/// Shape, id-uniqueness and finiteness checks shared by load and write.
void validate(const FeaturePack& pack);

void write_pack(const std::filesystem::path& dir, const FeaturePack& pack);
FeaturePack load_pack(const std::filesystem::path& dir);

/// Reads one layer file. Exposed for tooling and tests.
MatrixF read_layer_file(const std::filesystem::path& file);
void write_layer_file(const std::filesystem::path& file, const MatrixF& m);

/// Single-layer pack whose rows are the per-sample concatenation of the
/// chosen layer of each pack, in pack order. Rows follow the first pack's
/// sample order; the others are re-indexed by id.
FeaturePack concat(std::span<const FeaturePack> packs, std::span<const int> layer_choice);

// Dataset views ---------------------------------------------------------------

struct SplitData {
  Matrix features;
  std::vector<int> labels;  // +1 flattery, -1 none
  std::vector<std::string> sample_ids;
  std::vector<Gender> genders;

  std::size_t size() const noexcept { return labels.size(); }
};

struct DatasetView {
  std::array<SplitData, 3> splits;  // indexed by Partition
  std::size_t dim = 0;
  /// Column blocks standardized independently; defaults to one block.
  std::vector<std::size_t> block_dims;
  std::vector<std::string> excluded;  // sample ids missing from the pack

  const SplitData& of(Partition p) const { return splits[static_cast<int>(p)]; }
  SplitData& of(Partition p) { return splits[static_cast<int>(p)]; }
};

/// Per-partition matrices in manifest order. With `strict`, a sample missing
/// from the pack is Error{MissingSample}; otherwise it is dropped and listed
/// in `excluded`.
DatasetView align(const FeaturePack& pack, int layer, std::span<const SentenceSample> samples,
                  const PartitionAssignment& partition, bool strict);

// Score and transcript files ------------------------------------------------

struct ScoreFile {
  std::string model_id;
  std::int64_t seed = 0;
  /// False for raw SVM decision values, which are not confined to [0,1].
  bool bounded = true;
  std::map<std::string, double> entries;
};

struct TranscriptFile {
  std::string source_id;
  std::vector<std::pair<std::string, std::string>> entries;  // file order
};

/// Rows {sample_id, score} with score in [0,1], or {sample_id, decision}
/// with any finite decision value (the file must not mix the two).
ScoreFile read_score_file(const std::filesystem::path& path, std::string model_id,
                          std::int64_t seed);
void write_score_file(const std::filesystem::path& path, const ScoreFile& scores);

TranscriptFile read_transcript_file(const std::filesystem::path& path, std::string source_id);
void write_transcript_file(const std::filesystem::path& path, const TranscriptFile& t);

}  // namespace probefuse

#include "probefuse/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "json_fields.hpp"
#include "probefuse/error.hpp"

namespace probefuse {

namespace fs = std::filesystem;

std::string_view to_string(Pooling p) noexcept {
  return p == Pooling::ClsToken ? "cls_token" : "mean_tokens";
}

bool FeaturePack::has_layer(int id) const {
  return std::find(layers.begin(), layers.end(), id) != layers.end();
}

const MatrixF& FeaturePack::layer(int id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == id) return matrices[i];
  }
  fail(ErrorKind::Validation, "pack " + model_id + " has no layer " + std::to_string(id));
}

int FeaturePack::final_layer() const {
  if (layers.empty()) fail(ErrorKind::Validation, "pack " + model_id + " has no layers");
  return *std::max_element(layers.begin(), layers.end());
}

void validate(const FeaturePack& pack) {
  const std::string who = "pack " + pack.model_id;
  if (pack.dim == 0) fail(ErrorKind::DimensionMismatch, who + ": dim must be positive");
  if (pack.layers.empty()) fail(ErrorKind::Validation, who + ": no layers");
  if (pack.layers.size() != pack.matrices.size())
    fail(ErrorKind::Validation, who + ": layer list and matrix count differ");
  std::unordered_set<int> layer_ids;
  for (int l : pack.layers) {
    if (l < 0) fail(ErrorKind::Validation, who + ": negative layer id");
    if (!layer_ids.insert(l).second)
      fail(ErrorKind::Validation, who + ": duplicate layer " + std::to_string(l));
  }
  std::unordered_set<std::string> ids;
  for (const auto& id : pack.sample_ids) {
    if (id.empty() || id.find('\n') != std::string::npos)
      fail(ErrorKind::Validation, who + ": invalid sample id");
    if (!ids.insert(id).second) fail(ErrorKind::DuplicateId, who + ": duplicate sample id " + id);
  }
  for (std::size_t i = 0; i < pack.layers.size(); ++i) {
    const MatrixF& m = pack.matrices[i];
    const std::string where = who + " layer " + std::to_string(pack.layers[i]);
    if (m.rows() != pack.sample_ids.size()) {
      fail(ErrorKind::RowCountMismatch, where + ": " + std::to_string(m.rows()) + " rows but " +
                                            std::to_string(pack.sample_ids.size()) + " ids");
    }
    if (m.cols() != pack.dim && m.rows() > 0) {
      fail(ErrorKind::DimensionMismatch, where + ": " + std::to_string(m.cols()) +
                                             " columns but dim " + std::to_string(pack.dim));
    }
    for (float v : m.data()) {
      if (!std::isfinite(v)) fail(ErrorKind::NonFinite, where + ": non-finite value");
    }
  }
}

// Binary layer files ----------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "FPK1";
constexpr std::size_t kHeaderBytes = 16;

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) fail(ErrorKind::Validation, std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_layer_file(const fs::path& file, const MatrixF& m) {
  detail::ByteWriter w;
  w.reserve(kHeaderBytes + m.data().size() * 4);
  w.bytes(kMagic);
  w.u32(kPackFormatVersion);
  w.u32(checked_u32(m.rows(), "row count"));
  w.u32(checked_u32(m.cols(), "column count"));
  for (float v : m.data()) w.f32(v);
  write_text_file(file, w.str());
}

MatrixF read_layer_file(const fs::path& file) {
  const std::string bytes = read_text_file(file);
  if (bytes.size() < kHeaderBytes) fail(ErrorKind::BadMagic, file.string() + ": truncated header");
  detail::ByteReader r(bytes, file.string());
  if (r.bytes(4) != kMagic) fail(ErrorKind::BadMagic, file.string() + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kPackFormatVersion) {
    fail(ErrorKind::VersionMismatch,
         file.string() + ": unsupported layer version " + std::to_string(version));
  }
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  if (r.remaining() != rows * cols * 4) {
    fail(ErrorKind::RowCountMismatch, file.string() + ": payload is " +
                                          std::to_string(r.remaining()) +
                                          " bytes, header implies " +
                                          std::to_string(rows * cols * 4));
  }
  std::vector<float> values(rows * cols);
  for (float& v : values) v = r.f32();
  return MatrixF(rows, cols, std::move(values));
}

// Pack directories --------------------------------------------------------------

namespace {

fs::path layer_path(const fs::path& dir, int layer) {
  return dir / ("layer_" + std::to_string(layer) + ".fpk");
}

}  // namespace

void write_pack(const fs::path& dir, const FeaturePack& pack) {
  validate(pack);
  fs::create_directories(dir);
  OrderedJson manifest;
  manifest["format_version"] = kPackFormatVersion;
  manifest["model_id"] = pack.model_id;
  manifest["pooling"] = to_string(pack.pooling);
  manifest["dim"] = pack.dim;
  manifest["layers"] = pack.layers;
  manifest["sample_count"] = pack.sample_ids.size();
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string ids;
  for (const auto& id : pack.sample_ids) {
    ids += id;
    ids += '\n';
  }
  write_text_file(dir / "ids.txt", ids);
  for (std::size_t i = 0; i < pack.layers.size(); ++i)
    write_layer_file(layer_path(dir, pack.layers[i]), pack.matrices[i]);
}

FeaturePack load_pack(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    fail(ErrorKind::Io, "feature pack manifest not found: " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text_file(manifest_path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Validation, manifest_path.string() + ": " + e.what());
  }
  const std::string where = manifest_path.string();
  const long long version = detail::integer_field(manifest, "format_version", where);
  if (version != kPackFormatVersion) {
    fail(ErrorKind::VersionMismatch,
         where + ": unsupported format_version " + std::to_string(version));
  }

  FeaturePack pack;
  pack.model_id = detail::string_field(manifest, "model_id", where);
  const std::string pooling = detail::string_field(manifest, "pooling", where);
  if (pooling == "cls_token") pack.pooling = Pooling::ClsToken;
  else if (pooling == "mean_tokens") pack.pooling = Pooling::MeanTokens;
  else fail(ErrorKind::Validation, where + ": unknown pooling '" + pooling + "'");
  const long long dim = detail::integer_field(manifest, "dim", where);
  if (dim <= 0) fail(ErrorKind::DimensionMismatch, where + ": dim must be positive");
  pack.dim = static_cast<std::size_t>(dim);
  const Json& layers = detail::field(manifest, "layers", where);
  if (!layers.is_array()) fail(ErrorKind::Validation, where + ": 'layers' must be an array");
  for (const Json& l : layers) {
    if (!l.is_number_integer()) fail(ErrorKind::Validation, where + ": layer ids must be integers");
    pack.layers.push_back(l.get<int>());
  }
  const long long sample_count = detail::integer_field(manifest, "sample_count", where);

  std::istringstream ids(read_text_file(dir / "ids.txt"));
  std::string line;
  while (std::getline(ids, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    pack.sample_ids.push_back(line);
  }
  if (static_cast<long long>(pack.sample_ids.size()) != sample_count) {
    fail(ErrorKind::RowCountMismatch, where + ": sample_count " + std::to_string(sample_count) +
                                          " but ids.txt has " +
                                          std::to_string(pack.sample_ids.size()) + " ids");
  }
  for (int l : pack.layers) pack.matrices.push_back(read_layer_file(layer_path(dir, l)));
  validate(pack);
  return pack;
}

FeaturePack concat(std::span<const FeaturePack> packs, std::span<const int> layer_choice) {
  if (packs.empty()) fail(ErrorKind::Validation, "concat needs at least one pack");
  if (packs.size() != layer_choice.size())
    fail(ErrorKind::LengthMismatch, "concat needs one layer choice per pack");

  std::unordered_set<std::string> models;
  for (const auto& p : packs) {
    if (!models.insert(p.model_id).second)
      fail(ErrorKind::DuplicateModel, "concat: model " + p.model_id + " given twice");
  }

  const FeaturePack& first = packs.front();
  std::vector<std::vector<std::size_t>> row_of(packs.size());
  for (std::size_t k = 0; k < packs.size(); ++k) {
    const FeaturePack& p = packs[k];
    if (p.sample_ids.size() != first.sample_ids.size()) {
      fail(ErrorKind::IdMismatch, "concat: " + p.model_id + " and " + first.model_id +
                                      " cover different sample sets");
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < p.sample_ids.size(); ++r) index.emplace(p.sample_ids[r], r);
    row_of[k].reserve(first.sample_ids.size());
    for (const auto& id : first.sample_ids) {
      auto it = index.find(id);
      if (it == index.end()) {
        fail(ErrorKind::IdMismatch, "concat: sample " + id + " missing from " + p.model_id);
      }
      row_of[k].push_back(it->second);
    }
  }

  FeaturePack out;
  out.pooling = first.pooling;
  out.layers = {layer_choice.front()};
  out.sample_ids = first.sample_ids;
  for (std::size_t k = 0; k < packs.size(); ++k) {
    if (k > 0) out.model_id += "+";
    out.model_id += packs[k].model_id;
    out.dim += packs[k].dim;
  }
  MatrixF m(first.sample_ids.size(), out.dim);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < packs.size(); ++k) {
    const MatrixF& src = packs[k].layer(layer_choice[k]);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = src.row(row_of[k][r]);
      std::copy(row.begin(), row.end(), m.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += packs[k].dim;
  }
  out.matrices.push_back(std::move(m));
  return out;
}

DatasetView align(const FeaturePack& pack, int layer, std::span<const SentenceSample> samples,
                  const PartitionAssignment& partition, bool strict) {
  const MatrixF& m = pack.layer(layer);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < pack.sample_ids.size(); ++r) index.emplace(pack.sample_ids[r], r);

  DatasetView view;
  view.dim = pack.dim;
  view.block_dims = {pack.dim};
  std::vector<double> row(pack.dim);
  for (const auto& s : samples) {
    const auto part = partition.find(s.speaker_id);
    if (!part) {
      fail(ErrorKind::UnknownSpeaker,
           "speaker " + s.speaker_id + " of sample " + s.sample_id + " has no partition");
    }
    auto it = index.find(s.sample_id);
    if (it == index.end()) {
      if (strict) {
        fail(ErrorKind::MissingSample,
             "sample " + s.sample_id + " missing from pack " + pack.model_id);
      }
      view.excluded.push_back(s.sample_id);
      continue;
    }
    const auto src = m.row(it->second);
    std::copy(src.begin(), src.end(), row.begin());
    SplitData& d = view.of(*part);
    if (d.features.empty()) d.features = Matrix(0, pack.dim);
    d.features.append_row(row);
    d.labels.push_back(s.positive() ? 1 : -1);
    d.sample_ids.push_back(s.sample_id);
    d.genders.push_back(s.speaker_gender);
  }
  return view;
}

// Score and transcript files ------------------------------------------------

ScoreFile read_score_file(const fs::path& path, std::string model_id, std::int64_t seed) {
  ScoreFile out;
  out.model_id = std::move(model_id);
  out.seed = seed;
  std::optional<bool> bounded;
  const std::string where = path.string();
  for (const Json& row : read_jsonl(path)) {
    const std::string id = detail::string_field(row, "sample_id", where);
    const bool is_score = row.contains("score");
    if (!is_score && !row.contains("decision"))
      fail(ErrorKind::Validation, where + ": row " + id + " has neither 'score' nor 'decision'");
    if (bounded && *bounded != is_score)
      fail(ErrorKind::Validation, where + ": mixes 'score' and 'decision' rows");
    bounded = is_score;
    const double v = detail::number_field(row, is_score ? "score" : "decision", where);
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, where + ": non-finite value for " + id);
    if (is_score && (v < 0.0 || v > 1.0))
      fail(ErrorKind::Validation, where + ": score for " + id + " outside [0,1]");
    if (!out.entries.emplace(id, v).second)
      fail(ErrorKind::DuplicateId, where + ": duplicate sample id " + id);
  }
  out.bounded = bounded.value_or(true);
  return out;
}

void write_score_file(const fs::path& path, const ScoreFile& scores) {
  std::vector<OrderedJson> rows;
  rows.reserve(scores.entries.size());
  for (const auto& [id, v] : scores.entries) {
    OrderedJson j;
    j["sample_id"] = id;
    j[scores.bounded ? "score" : "decision"] = v;
    rows.push_back(std::move(j));
  }
  write_jsonl(path, rows);
}

TranscriptFile read_transcript_file(const fs::path& path, std::string source_id) {
  TranscriptFile out;
  out.source_id = std::move(source_id);
  std::unordered_set<std::string> seen;
  const std::string where = path.string();
  for (const Json& row : read_jsonl(path)) {
    std::string id = detail::string_field(row, "sample_id", where);
    std::string text = detail::string_field(row, "text", where);
    if (!seen.insert(id).second) fail(ErrorKind::DuplicateId, where + ": duplicate sample id " + id);
    out.entries.emplace_back(std::move(id), std::move(text));
  }
  return out;
}

void write_transcript_file(const fs::path& path, const TranscriptFile& t) {
  std::vector<OrderedJson> rows;
  for (const auto& [id, text] : t.entries) {
    OrderedJson j;
    j["sample_id"] = id;
    j["text"] = text;
    rows.push_back(std::move(j));
  }
  write_jsonl(path, rows);
}

}  // namespace probefuse

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>

#include "probefuse/error.hpp"
#include "probefuse/feature_store.hpp"
#include "probefuse/util.hpp"
#include "../support/helpers.hpp"

using namespace probefuse;
using testing_support::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Validation;
}

FeaturePack small_pack(const std::string& model, std::vector<std::string> ids, std::size_t dim,
                       std::vector<int> layers, float base) {
  FeaturePack p;
  p.model_id = model;
  p.pooling = Pooling::ClsToken;
  p.dim = dim;
  p.layers = layers;
  p.sample_ids = std::move(ids);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixF m(p.sample_ids.size(), dim);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < dim; ++c)
        m(r, c) = base + 100.0f * static_cast<float>(layers[l]) + 10.0f * static_cast<float>(r) +
                  static_cast<float>(c) + 0.125f;
    p.matrices.push_back(std::move(m));
  }
  return p;
}

SentenceSample sample(const std::string& id, const std::string& speaker, bool positive,
                      Gender g = Gender::Male) {
  SentenceSample s;
  s.sample_id = id;
  s.speaker_id = speaker;
  s.speaker_gender = g;
  s.label = positive ? Label::Flattery : Label::None;
  return s;
}

std::string layer_bytes(std::string_view magic, std::uint32_t version, std::uint32_t rows,
                        std::uint32_t cols, std::size_t floats) {
  std::string b(magic);
  for (std::uint32_t v : {version, rows, cols})
    for (int k = 0; k < 4; ++k) b += static_cast<char>((v >> (8 * k)) & 0xff);
  b.append(floats * 4, '\0');
  return b;
}

}  // namespace

TEST_CASE("pack round-trip is bit-exact") {
  TempDir dir("pack_rt");
  FeaturePack p = small_pack("m", {"a", "b", "c"}, 4, {0, 1}, 0.0f);
  p.matrices[1](2, 3) = -1.0e-38f;  // subnormal-adjacent value survives
  p.matrices[0](0, 0) = 3.14159274f;
  write_pack(dir.path(), p);
  const FeaturePack q = load_pack(dir.path());
  CHECK(q.model_id == "m");
  CHECK(q.pooling == Pooling::ClsToken);
  CHECK(q.dim == 4);
  CHECK(q.layers == std::vector<int>{0, 1});
  CHECK(q.sample_ids == p.sample_ids);
  REQUIRE(q.matrices.size() == 2);
  CHECK(q.matrices[0].rows() == 3);
  CHECK(q.matrices[0].cols() == 4);
  for (std::size_t l = 0; l < 2; ++l)
    CHECK(std::memcmp(q.matrices[l].data().data(), p.matrices[l].data().data(),
                      p.matrices[l].data().size() * sizeof(float)) == 0);
  CHECK(q.final_layer() == 1);
}

TEST_CASE("layer file layout is little-endian with a 16-byte header") {
  TempDir dir("layer_layout");
  MatrixF m(1, 2, std::vector<float>{1.0f, -2.0f});
  write_layer_file(dir / "x.fpk", m);
  const std::string b = read_text_file(dir / "x.fpk");
  REQUIRE(b.size() == 24);
  CHECK(b.substr(0, 4) == "FPK1");
  CHECK(b[4] == 1);
  CHECK(b[8] == 1);
  CHECK(b[12] == 2);
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000
  CHECK(static_cast<unsigned char>(b[19]) == 0x3f);
  CHECK(static_cast<unsigned char>(b[18]) == 0x80);
  CHECK(static_cast<unsigned char>(b[23]) == 0xc0);
}

TEST_CASE("pack loading errors") {
  TempDir dir("pack_err");
  const FeaturePack p = small_pack("m", {"a", "b"}, 4, {0, 1}, 0.0f);

  SUBCASE("missing manifest") {
    CHECK(kind_of([&] { load_pack(dir / "nothing"); }) == ErrorKind::Io);
  }
  SUBCASE("three ids for two rows") {
    write_pack(dir.path(), p);
    write_text_file(dir / "ids.txt", "a\nb\nc\n");
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::RowCountMismatch);
  }
  SUBCASE("manifest sample count disagrees with the layer rows") {
    write_pack(dir.path(), p);
    write_text_file(dir / "ids.txt", "a\nb\nc\n");
    Json man = Json::parse(read_text_file(dir / "manifest.json"));
    man["sample_count"] = 3;
    write_text_file(dir / "manifest.json", man.dump());
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::RowCountMismatch);
  }
  SUBCASE("bad magic") {
    write_pack(dir.path(), p);
    write_text_file(dir / "layer_1.fpk", layer_bytes("FPK2", 1, 2, 4, 8));
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::BadMagic);
  }
  SUBCASE("truncated header") {
    write_pack(dir.path(), p);
    write_text_file(dir / "layer_0.fpk", "FPK1");
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::BadMagic);
  }
  SUBCASE("layer version") {
    write_pack(dir.path(), p);
    write_text_file(dir / "layer_0.fpk", layer_bytes("FPK1", 2, 2, 4, 8));
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::VersionMismatch);
  }
  SUBCASE("manifest version") {
    write_pack(dir.path(), p);
    Json man = Json::parse(read_text_file(dir / "manifest.json"));
    man["format_version"] = 7;
    write_text_file(dir / "manifest.json", man.dump());
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::VersionMismatch);
  }
  SUBCASE("short payload") {
    write_pack(dir.path(), p);
    write_text_file(dir / "layer_0.fpk", layer_bytes("FPK1", 1, 2, 4, 7));
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::RowCountMismatch);
  }
  SUBCASE("non-finite value") {
    FeaturePack bad = p;
    bad.matrices[0](1, 2) = std::numeric_limits<float>::quiet_NaN();
    CHECK(kind_of([&] { write_pack(dir.path(), bad); }) == ErrorKind::NonFinite);
    write_pack(dir.path(), p);
    write_layer_file(dir / "layer_0.fpk", bad.matrices[0]);
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::NonFinite);
    bad.matrices[0](1, 2) = std::numeric_limits<float>::infinity();
    write_layer_file(dir / "layer_0.fpk", bad.matrices[0]);
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::NonFinite);
  }
  SUBCASE("duplicate id") {
    write_pack(dir.path(), p);
    write_text_file(dir / "ids.txt", "a\na\n");
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::DuplicateId);
  }
  SUBCASE("unknown pooling") {
    write_pack(dir.path(), p);
    Json man = Json::parse(read_text_file(dir / "manifest.json"));
    man["pooling"] = "max_tokens";
    write_text_file(dir / "manifest.json", man.dump());
    CHECK(kind_of([&] { load_pack(dir.path()); }) == ErrorKind::Validation);
  }
}

TEST_CASE("concat sums dims and re-indexes by id") {
  const FeaturePack a = small_pack("a", {"x", "y", "z"}, 3, {0, 5}, 0.0f);
  const FeaturePack b = small_pack("b", {"z", "x", "y"}, 2, {2}, 1000.0f);
  const std::vector<FeaturePack> packs = {a, b};
  const std::vector<int> choice = {5, 2};
  const FeaturePack c = concat(packs, choice);
  CHECK(c.dim == 5);
  CHECK(c.model_id == "a+b");
  CHECK(c.sample_ids == a.sample_ids);
  REQUIRE(c.matrices.size() == 1);
  const MatrixF& m = c.matrices[0];
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t col = 0; col < 3; ++col) CHECK(m(r, col) == a.layer(5)(r, col));
    // row r of `a` is row (r + 1) % 3 of `b`
    for (std::size_t col = 0; col < 2; ++col)
      CHECK(m(r, 3 + col) == b.layer(2)((r + 1) % 3, col));
  }

  const std::vector<FeaturePack> one = {a};
  const std::vector<int> one_choice = {0};
  const FeaturePack id = concat(one, one_choice);
  CHECK(id.dim == a.dim);
  CHECK(id.matrices[0] == a.layer(0));
}

TEST_CASE("concat errors") {
  const FeaturePack a = small_pack("a", {"x", "y"}, 3, {0}, 0.0f);
  const FeaturePack b = small_pack("b", {"x", "w"}, 3, {0}, 0.0f);
  const FeaturePack b3 = small_pack("b", {"x", "y", "w"}, 3, {0}, 0.0f);
  const std::vector<int> two = {0, 0};
  const std::vector<int> three = {0, 0, 0};
  CHECK(kind_of([&] { concat(std::vector<FeaturePack>{a, b}, two); }) == ErrorKind::IdMismatch);
  CHECK(kind_of([&] { concat(std::vector<FeaturePack>{a, b3}, two); }) == ErrorKind::IdMismatch);
  CHECK(kind_of([&] { concat(std::vector<FeaturePack>{a, a}, two); }) == ErrorKind::DuplicateModel);
  CHECK(kind_of([&] { concat(std::vector<FeaturePack>{a, b}, three); }) ==
        ErrorKind::LengthMismatch);
}

TEST_CASE("align follows manifest order and partitions by speaker") {
  // Pack rows are a permutation of the manifest; values encode the pack row.
  FeaturePack p;
  p.model_id = "m";
  p.dim = 2;
  p.layers = {3};
  p.sample_ids = {"s4", "s1", "s3", "s0", "s2"};
  MatrixF m(5, 2);
  for (std::size_t r = 0; r < 5; ++r) m(r, 0) = static_cast<float>(r), m(r, 1) = -1.0f;
  p.matrices.push_back(m);

  const std::vector<SentenceSample> samples = {
      sample("s0", "A", true), sample("s1", "B", false, Gender::Female), sample("s2", "A", false),
      sample("s3", "C", true), sample("s4", "B", true, Gender::Female)};
  PartitionAssignment part;
  part.speakers = {{"A", Partition::Train}, {"B", Partition::Dev}, {"C", Partition::Test}};

  const DatasetView v = align(p, 3, samples, part, true);
  CHECK(v.dim == 2);
  CHECK(v.block_dims == std::vector<std::size_t>{2});
  CHECK(v.excluded.empty());
  const SplitData& tr = v.of(Partition::Train);
  CHECK(tr.sample_ids == std::vector<std::string>{"s0", "s2"});
  CHECK(tr.labels == std::vector<int>{1, -1});
  CHECK(tr.features(0, 0) == 3.0);
  CHECK(tr.features(1, 0) == 4.0);
  const SplitData& dv = v.of(Partition::Dev);
  CHECK(dv.sample_ids == std::vector<std::string>{"s1", "s4"});
  CHECK(dv.features(0, 0) == 1.0);
  CHECK(dv.features(1, 0) == 0.0);
  CHECK(dv.genders == std::vector<Gender>{Gender::Female, Gender::Female});
  CHECK(v.of(Partition::Test).sample_ids == std::vector<std::string>{"s3"});
  CHECK(v.of(Partition::Test).features(0, 0) == 2.0);

  auto extra = samples;
  extra.push_back(sample("s9", "C", false));
  CHECK(kind_of([&] { align(p, 3, extra, part, true); }) == ErrorKind::MissingSample);
  const DatasetView loose = align(p, 3, extra, part, false);
  CHECK(loose.excluded == std::vector<std::string>{"s9"});
  CHECK(loose.of(Partition::Test).size() == 1);

  extra.push_back(sample("s3", "Z", false));
  CHECK(kind_of([&] { align(p, 3, extra, part, false); }) == ErrorKind::UnknownSpeaker);
  CHECK(kind_of([&] { align(p, 4, samples, part, false); }) == ErrorKind::Validation);
}

TEST_CASE("score files") {
  TempDir dir("scores");
  const auto path = dir / "s.jsonl";

  write_text_file(path, "{\"sample_id\":\"a\",\"score\":0.25}\n{\"sample_id\":\"b\",\"score\":1}\n");
  ScoreFile f = read_score_file(path, "m", 3);
  CHECK(f.bounded);
  CHECK(f.seed == 3);
  CHECK(f.entries.at("a") == 0.25);
  CHECK(f.entries.at("b") == 1.0);

  write_text_file(path, "{\"sample_id\":\"a\",\"decision\":-2.5}\n{\"sample_id\":\"b\",\"decision\":4}\n");
  f = read_score_file(path, "m", 0);
  CHECK_FALSE(f.bounded);
  CHECK(f.entries.at("a") == -2.5);

  write_score_file(dir / "back.jsonl", f);
  const ScoreFile g = read_score_file(dir / "back.jsonl", "m", 0);
  CHECK(g.entries == f.entries);
  CHECK_FALSE(g.bounded);

  auto bad = [&](const std::string& text) {
    write_text_file(path, text);
    return kind_of([&] { read_score_file(path, "m", 0); });
  };
  CHECK(bad("{\"sample_id\":\"a\",\"score\":1.5}\n") == ErrorKind::Validation);
  CHECK(bad("{\"sample_id\":\"a\",\"score\":-0.01}\n") == ErrorKind::Validation);
  CHECK(bad("{\"sample_id\":\"a\",\"value\":0.5}\n") == ErrorKind::Validation);
  CHECK(bad("{\"sample_id\":\"a\",\"score\":0.5}\n{\"sample_id\":\"b\",\"decision\":0.5}\n") ==
        ErrorKind::Validation);
  CHECK(bad("{\"sample_id\":\"a\",\"score\":0.5}\n{\"sample_id\":\"a\",\"score\":0.4}\n") ==
        ErrorKind::DuplicateId);
}

TEST_CASE("transcript files keep file order") {
  TempDir dir("transcripts");
  TranscriptFile t;
  t.source_id = "asr";
  t.entries = {{"z", "hello there"}, {"a", "quote \" and unicode \xc3\xa9"}};
  write_transcript_file(dir / "t.jsonl", t);
  const TranscriptFile back = read_transcript_file(dir / "t.jsonl", "asr");
  CHECK(back.entries == t.entries);
  write_text_file(dir / "d.jsonl",
                  "{\"sample_id\":\"a\",\"text\":\"x\"}\n{\"sample_id\":\"a\",\"text\":\"y\"}\n");
  CHECK(kind_of([&] { read_transcript_file(dir / "d.jsonl", "asr"); }) == ErrorKind::DuplicateId);
}

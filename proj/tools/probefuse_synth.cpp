// Writes the checked-in synthetic fixtures: a calls file, feature packs,
// score files, an ASR-style transcript file and a matching config.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "probefuse/corpus.hpp"
#include "probefuse/error.hpp"
#include "probefuse/feature_store.hpp"
#include "probefuse/metrics.hpp"
#include "probefuse/synthetic.hpp"
#include "probefuse/util.hpp"

namespace fs = std::filesystem;
using namespace probefuse;

namespace {

/// Gold text with roughly one word in ten substituted or dropped.
std::string corrupt(const std::string& text, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::istringstream in(text);
  std::string word, out;
  while (in >> word) {
    const double u = rng.uniform();
    if (u < 0.05) continue;
    if (u < 0.10) word = "uh";
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

FeaturePack make_pack(const std::vector<SentenceSample>& samples, std::string model, std::vector<int> layers,
                      std::map<int, double> separation, std::uint64_t seed) {
  SyntheticPackSpec spec;
  spec.model_id = std::move(model);
  spec.layers = std::move(layers);
  spec.dim = 8;
  spec.separation = std::move(separation);
  spec.seed = seed;
  return synthetic_pack(samples, spec);
}

constexpr const char* kConfig = R"json({
  "paths": {
    "calls": "calls.jsonl",
    "out": "out",
    "packs": ["packs/speech6"],
    "tune": [
      {"name": "audio", "pack": "packs/audio_noise"},
      {"name": "text", "pack": "packs/text_signal"}
    ],
    "early_fusion": [
      {"name": "A+T", "audio": "packs/audio_noise", "text": "packs/text_signal"},
      {"name": "A+T (noise text)", "audio": "packs/audio_noise", "text": "packs/text_noise"}
    ],
    "late_fusion": [
      {"name": "A+T gold", "sources": [
        {"name": "audio", "scores": "scores/audio.jsonl"},
        {"name": "text", "scores": "scores/text_seed{seed}.jsonl"}
      ]},
      {"name": "A+T tuned", "sources": [
        {"name": "audio", "tune": "audio"},
        {"name": "text", "tune": "text"}
      ]}
    ],
    "transcripts": [{"source": "asr", "path": "transcripts/asr.jsonl"}]
  },
  "split": {"seed": 1, "restarts": 1000},
  "grids": {
    "stage1": {"C": [0.01, 0.1, 1], "weights": [1, "balanced"]},
    "stage2": {
      "C": [0.1, 1, 10],
      "weights": [1, "balanced"],
      "kernels": ["linear", "rbf", "sigmoid", "polynomial"],
      "gammas": ["scale", 0.01, 0.1],
      "degrees": [2],
      "coef0s": [0]
    }
  },
  "fusion": {
    "weight_rule": "dev_uar_proportional",
    "score_normalization": "minmax_on_dev",
    "threshold_rule": "dev_uar_argmax"
  },
  "seeds": [1, 2, 3, 4, 5],
  "strict": true
}
)json";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic fixture set"};
  std::string out = "tests/data/synthetic";
  std::size_t speakers = 52;
  app.add_option("--out", out, "Fixture directory");
  app.add_option("--speakers", speakers, "Synthetic speakers");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path dir(out);
    fs::create_directories(dir / "scores");
    fs::create_directories(dir / "transcripts");

    SyntheticCorpusSpec spec;
    spec.speakers = speakers;
    spec.female_fraction = 0.1;
    spec.positive_rate = 0.2;
    spec.unaligned_sentences = 3;
    spec.seed = 2024;
    const auto calls = synthetic_calls(spec);
    std::vector<OrderedJson> rows;
    for (const auto& c : calls) rows.push_back(to_json(c));
    write_jsonl(dir / "calls.jsonl", rows);

    const AssemblyResult a = assemble(calls);
    const auto& samples = a.samples;

    write_pack(dir / "packs/speech6", make_pack(samples, "speech6", {1, 2, 3, 4, 5, 6}, {{3, 3.0}}, 11));
    write_pack(dir / "packs/audio_noise", make_pack(samples, "audio-noise", {12}, {}, 12));
    write_pack(dir / "packs/text_signal", make_pack(samples, "text-signal", {12}, {{12, 1.5}}, 13));
    write_pack(dir / "packs/text_noise", make_pack(samples, "text-noise", {12}, {}, 14));

    write_score_file(dir / "scores/audio.jsonl", synthetic_scores(samples, "audio", 1.0, 21));
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      write_score_file(dir / ("scores/text_seed" + std::to_string(seed) + ".jsonl"),
                       synthetic_scores(samples, "text", 2.0, 30 + seed));
    }

    TranscriptFile asr;
    asr.source_id = "asr";
    for (const auto& s : samples) asr.entries.emplace_back(s.sample_id, corrupt(s.text, fnv1a(s.sample_id)));
    write_transcript_file(dir / "transcripts/asr.jsonl", asr);

    write_text_file(dir / "config.json", kConfig);
    std::cout << calls.size() << " calls, " << samples.size() << " samples, " << a.exclusions.size()
              << " excluded\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "probefuse_synth: " << e.what() << "\n";
    return 2;
  }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "man/eval.hpp"
#include "man/io.hpp"
#include "man/language.hpp"
#include "man/rng.hpp"
#include "man/trainer.hpp"

namespace man {

// Synthetic moment-retrieval data. Each video is a row of equal-length
// segments, each showing one event class; clip features are the class
// prototype plus Gaussian noise. Queries come from three templates:
//   plain       "<e>"                  the only segment showing e
//   ordinal     "<e> the <k-th> time"  the k-th segment showing e
//   relational  "<a> after <b>"        the first a following the first b
// Ground truth always snaps to a single segment.

struct GenerationSpec {
  std::size_t plain = 0;
  std::size_t ordinal = 0;
  std::size_t relational = 0;
  std::string preset = "didemo";
  std::size_t events = 4;
  std::size_t dim = 64;
  double noise_sigma = 0.1;
  std::size_t max_ordinal = 3;
  std::uint64_t seed = 0;
  // Index of the first sample. Shards of one dataset share seed and event
  // prototypes and differ only here, e.g. a held-out split.
  std::size_t first_sample = 0;

  std::size_t total() const { return plain + ordinal + relational; }
  void validate() const;
  json to_json() const;
  static GenerationSpec from_json(const json& j);
};

// Segment layout of the synthetic videos for a preset.
struct SyntheticGeometry {
  std::size_t segments = 0;
  std::size_t clips_per_segment = 0;
  double clip_seconds = 0.0;

  static SyntheticGeometry for_preset(const std::string& preset);
  std::size_t clips() const { return segments * clips_per_segment; }
  double segment_seconds() const { return clip_seconds * static_cast<double>(clips_per_segment); }
  Interval segment(std::size_t k) const;
};

struct EventVocabulary {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> prototypes;  // N(0, 1) per coordinate

  // Redraws a prototype until it makes an angle above 10 degrees with every
  // earlier one.
  static EventVocabulary draw(std::size_t events, std::size_t dim, Rng& rng);
  std::size_t index(std::string_view token) const;  // throws InputError if unknown
};

inline constexpr double kMinPrototypeAngleDegrees = 10.0;

enum class QueryTemplate { kPlain, kOrdinal, kRelational };
std::string to_string(QueryTemplate t);

struct SyntheticVideo {
  std::string video_id;
  std::vector<std::size_t> segments;  // event index per segment
};

struct SyntheticSample {
  QueryTemplate kind = QueryTemplate::kPlain;
  SyntheticVideo video;
  TrainingSample annotation;
};

struct SyntheticDataset {
  GenerationSpec spec;
  SyntheticGeometry geometry;
  EventVocabulary events;
  Vocabulary vocab;
  std::vector<SyntheticSample> samples;
  std::vector<ClipFeatures> features;  // one per sample, same order

  Dataset to_dataset() const;
};

// Closed vocabulary: <unk>, the event tokens, the, first, second, third,
// time, after, before.
Vocabulary synthetic_vocabulary(const EventVocabulary& events);

// Pure function of the spec. Sample i draws from its own stream derived
// from (seed, first_sample + i), so shards can be produced independently.
SyntheticDataset generate(const GenerationSpec& spec);

// Resolves a rendered query by scanning the event sequence. Throws InputError
// for queries that do not parse or have no answer in this video.
Interval oracle_solve(const SyntheticVideo& video, std::string_view query, const EventVocabulary& events,
                      const SyntheticGeometry& geometry);

// Writes features/<video_id>.{json,bin}, annotations.jsonl, events.jsonl,
// vocab.txt and manifest.json (generation spec, file list, `run_config`).
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data, const json& run_config);

}  // namespace man

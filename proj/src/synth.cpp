#include "man/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "man/errors.hpp"

namespace man {

namespace {

constexpr std::string_view kEventNames[] = {"jump",  "open",  "close", "sit",  "stand", "wave",
                                            "laugh", "drink", "eat",   "read", "cook",  "sweep"};
constexpr std::string_view kOrdinals[] = {"first", "second", "third"};

std::string event_token(std::size_t e) {
  if (e < std::size(kEventNames)) return std::string(kEventNames[e]);
  return "event" + std::to_string(e + 1);
}

double angle_degrees(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return std::acos(std::abs(c)) * 180.0 / std::numbers::pi;
}

// Event index uniformly drawn from [0, events) minus `excluded`.
std::size_t draw_other(Rng& rng, std::size_t events, std::initializer_list<std::size_t> excluded) {
  std::vector<std::size_t> pool;
  for (std::size_t e = 0; e < events; ++e) {
    if (std::ranges::find(excluded, e) == excluded.end()) pool.push_back(e);
  }
  return pool[rng.index(pool.size())];
}

// `count` distinct positions in [0, n), ascending.
std::vector<std::size_t> draw_positions(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  rng.shuffle(std::span(all));
  all.resize(count);
  std::ranges::sort(all);
  return all;
}

std::vector<std::size_t> occurrences(const SyntheticVideo& video, std::size_t event) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < video.segments.size(); ++k) {
    if (video.segments[k] == event) out.push_back(k);
  }
  return out;
}

struct Drawn {
  SyntheticVideo video;
  std::string query;
  std::size_t answer = 0;  // segment index
};

Drawn draw_plain(Rng& rng, const GenerationSpec& spec, std::size_t segments) {
  Drawn d;
  const std::size_t e = rng.index(spec.events);
  const std::size_t at = rng.index(segments);
  d.video.segments.resize(segments);
  for (std::size_t k = 0; k < segments; ++k) d.video.segments[k] = k == at ? e : draw_other(rng, spec.events, {e});
  d.query = event_token(e);
  d.answer = at;
  return d;
}

Drawn draw_ordinal(Rng& rng, const GenerationSpec& spec, std::size_t segments) {
  Drawn d;
  const std::size_t e = rng.index(spec.events);
  // At least two occurrences and at least one segment of another event.
  const std::size_t max_count = std::min(segments - 1, spec.max_ordinal + 1);
  const std::size_t count = 2 + rng.index(max_count - 1);
  const std::size_t k = 1 + rng.index(std::min(count, spec.max_ordinal));
  const auto positions = draw_positions(rng, segments, count);
  d.video.segments.resize(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    d.video.segments[s] = std::ranges::binary_search(positions, s) ? e : draw_other(rng, spec.events, {e});
  }
  d.query = fmt::format("{} the {} time", event_token(e), kOrdinals[k - 1]);
  d.answer = positions[k - 1];
  return d;
}

Drawn draw_relational(Rng& rng, const GenerationSpec& spec, std::size_t segments) {
  Drawn d;
  const std::size_t a = rng.index(spec.events);
  const std::size_t b = draw_other(rng, spec.events, {a});
  // b at pb, a at pa > pb, and with probability 1/2 a decoy a before b.
  const std::size_t pb = rng.index(segments - 1);
  const std::size_t pa = pb + 1 + rng.index(segments - pb - 1);
  const bool decoy = pb > 0 && rng.uniform() < 0.5;
  const std::size_t pd = decoy ? rng.index(pb) : segments;
  d.video.segments.resize(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    if (s == pa || s == pd) {
      d.video.segments[s] = a;
    } else if (s == pb) {
      d.video.segments[s] = b;
    } else {
      d.video.segments[s] = spec.events > 2 ? draw_other(rng, spec.events, {a, b}) : b;
    }
  }
  d.query = fmt::format("{} after {}", event_token(a), event_token(b));
  // With two classes the filler is b, so the first b may precede pb.
  const auto first_b = std::ranges::find(d.video.segments, b) - d.video.segments.begin();
  d.answer = static_cast<std::size_t>(std::find(d.video.segments.begin() + first_b, d.video.segments.end(), a) -
                                      d.video.segments.begin());
  return d;
}

}  // namespace

// ---- spec ------------------------------------------------------------------

void GenerationSpec::validate() const {
  const auto geometry = SyntheticGeometry::for_preset(preset);
  if (events < 2) throw ConfigError("synthetic data needs at least 2 event classes");
  if (dim == 0) throw ConfigError("feature dim must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  if (max_ordinal == 0 || max_ordinal > std::size(kOrdinals)) {
    throw ConfigError(fmt::format("max ordinal {} outside [1, {}]", max_ordinal, std::size(kOrdinals)));
  }
  if (ordinal > 0 && max_ordinal + 1 > geometry.segments) {
    throw ConfigError(fmt::format("ordinal k up to {} needs more than {} segments", max_ordinal, geometry.segments));
  }
}

json GenerationSpec::to_json() const {
  return {{"plain", plain},   {"ordinal", ordinal}, {"relational", relational},   {"preset", preset},
          {"events", events}, {"dim", dim},         {"noise_sigma", noise_sigma}, {"max_ordinal", max_ordinal},
          {"seed", seed}, {"first_sample", first_sample}};
}

GenerationSpec GenerationSpec::from_json(const json& j) {
  const std::string ctx = "generation spec";
  GenerationSpec s;
  s.plain = require_field<std::size_t>(j, "plain", ctx);
  s.ordinal = require_field<std::size_t>(j, "ordinal", ctx);
  s.relational = require_field<std::size_t>(j, "relational", ctx);
  s.preset = require_field<std::string>(j, "preset", ctx);
  s.events = require_field<std::size_t>(j, "events", ctx);
  s.dim = require_field<std::size_t>(j, "dim", ctx);
  s.noise_sigma = require_field<double>(j, "noise_sigma", ctx);
  s.max_ordinal = require_field<std::size_t>(j, "max_ordinal", ctx);
  s.seed = require_field<std::size_t>(j, "seed", ctx);
  s.first_sample = require_field<std::size_t>(j, "first_sample", ctx);
  return s;
}

SyntheticGeometry SyntheticGeometry::for_preset(const std::string& preset) {
  if (preset == "didemo") return {6, 40, 0.125};
  if (preset == "charades") return {16, 16, 0.25};
  throw ConfigError("unknown preset '" + preset + "' (expected charades or didemo)");
}

Interval SyntheticGeometry::segment(std::size_t k) const {
  const double len = segment_seconds();
  return {len * static_cast<double>(k), len * static_cast<double>(k + 1)};
}

// ---- events ----------------------------------------------------------------

EventVocabulary EventVocabulary::draw(std::size_t events, std::size_t dim, Rng& rng) {
  EventVocabulary v;
  for (std::size_t e = 0; e < events; ++e) {
    std::vector<double> p(dim);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw ConfigError(fmt::format("cannot place {} prototypes in {} dimensions", events, dim));
      for (double& x : p) x = rng.normal();
      const bool separated = std::ranges::all_of(
          v.prototypes, [&](const auto& q) { return angle_degrees(p, q) > kMinPrototypeAngleDegrees; });
      if (separated) break;
    }
    v.tokens.push_back(event_token(e));
    v.prototypes.push_back(std::move(p));
  }
  return v;
}

std::size_t EventVocabulary::index(std::string_view token) const {
  const auto it = std::ranges::find(tokens, token);
  if (it == tokens.end()) throw InputError("unknown event '" + std::string(token) + "'");
  return static_cast<std::size_t>(it - tokens.begin());
}

std::string to_string(QueryTemplate t) {
  switch (t) {
    case QueryTemplate::kPlain: return "plain";
    case QueryTemplate::kOrdinal: return "ordinal";
    case QueryTemplate::kRelational: return "relational";
  }
  return "?";
}

Vocabulary synthetic_vocabulary(const EventVocabulary& events) {
  std::vector<std::string> tokens = {std::string(kUnknownToken)};
  tokens.insert(tokens.end(), events.tokens.begin(), events.tokens.end());
  for (const char* w : {"the", "first", "second", "third", "time", "after", "before"}) tokens.emplace_back(w);
  return Vocabulary(std::move(tokens));
}

// ---- generation ------------------------------------------------------------

SyntheticDataset generate(const GenerationSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.spec = spec;
  out.geometry = SyntheticGeometry::for_preset(spec.preset);
  Rng proto_rng(Rng::derive(spec.seed, "prototypes"));
  out.events = EventVocabulary::draw(spec.events, spec.dim, proto_rng);
  out.vocab = synthetic_vocabulary(out.events);

  const std::size_t segments = out.geometry.segments;
  const std::size_t per_segment = out.geometry.clips_per_segment;
  for (std::size_t i = 0; i < spec.total(); ++i) {
    const std::size_t index = spec.first_sample + i;
    Rng rng(Rng::derive(spec.seed, "sample/" + std::to_string(index)));
    SyntheticSample s;
    s.kind = i < spec.plain                   ? QueryTemplate::kPlain
             : i < spec.plain + spec.ordinal ? QueryTemplate::kOrdinal
                                              : QueryTemplate::kRelational;
    Drawn d = s.kind == QueryTemplate::kPlain     ? draw_plain(rng, spec, segments)
              : s.kind == QueryTemplate::kOrdinal ? draw_ordinal(rng, spec, segments)
                                                  : draw_relational(rng, spec, segments);
    s.video = std::move(d.video);
    s.video.video_id = fmt::format("v{:06d}", index);
    s.annotation = {fmt::format("q{:06d}", index), s.video.video_id, d.query, out.geometry.segment(d.answer)};

    std::vector<double> values;
    values.reserve(out.geometry.clips() * spec.dim);
    for (std::size_t seg = 0; seg < segments; ++seg) {
      const auto& proto = out.events.prototypes[s.video.segments[seg]];
      for (std::size_t c = 0; c < per_segment; ++c) {
        for (double p : proto) values.push_back(p + spec.noise_sigma * rng.normal());
      }
    }
    out.features.push_back(
        {s.video.video_id, Tensor::from({out.geometry.clips(), spec.dim}, std::move(values)), out.geometry.clip_seconds});
    out.samples.push_back(std::move(s));
  }
  return out;
}

Dataset SyntheticDataset::to_dataset() const {
  Dataset d;
  d.vocab = vocab;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    d.samples.push_back(samples[i].annotation);
    d.features.emplace(features[i].video_id, features[i]);
  }
  return d;
}

Interval oracle_solve(const SyntheticVideo& video, std::string_view query, const EventVocabulary& events,
                      const SyntheticGeometry& geometry) {
  std::vector<std::string> words;
  std::istringstream is{std::string(query)};
  for (std::string w; is >> w;) words.push_back(w);
  const std::string q(query);

  if (words.size() == 1) {
    const auto occ = occurrences(video, events.index(words[0]));
    if (occ.size() != 1) throw InputError(fmt::format("'{}' occurs {} times in {}", q, occ.size(), video.video_id));
    return geometry.segment(occ[0]);
  }
  if (words.size() == 4 && words[1] == "the" && words[3] == "time") {
    const auto ord = std::ranges::find(kOrdinals, words[2]);
    if (ord == std::end(kOrdinals)) throw InputError("unknown ordinal in '" + q + "'");
    const auto k = static_cast<std::size_t>(ord - std::begin(kOrdinals));
    const auto occ = occurrences(video, events.index(words[0]));
    if (k >= occ.size()) throw InputError(fmt::format("'{}' has no answer in {}", q, video.video_id));
    return geometry.segment(occ[k]);
  }
  if (words.size() == 3 && words[1] == "after") {
    const auto a = occurrences(video, events.index(words[0]));
    const auto b = occurrences(video, events.index(words[2]));
    if (!b.empty()) {
      const auto it = std::ranges::upper_bound(a, b.front());
      if (it != a.end()) return geometry.segment(*it);
    }
    throw InputError(fmt::format("'{}' has no answer in {}", q, video.video_id));
  }
  throw InputError("query does not match any template: '" + q + "'");
}

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data, const json& run_config) {
  const std::filesystem::path features_dir = dir / "features";
  std::filesystem::create_directories(features_dir);
  json files = json::array();
  std::vector<TrainingSample> annotations;
  std::string events_text;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    save_clip_features(features_dir, data.features[i]);
    files.push_back("features/" + s.video.video_id + ".json");
    files.push_back("features/" + s.video.video_id + ".bin");
    annotations.push_back(s.annotation);
    json seq = json::array();
    for (std::size_t e : s.video.segments) seq.push_back(data.events.tokens[e]);
    events_text += json{{"video_id", s.video.video_id}, {"template", to_string(s.kind)}, {"segments", seq}}.dump();
    events_text += '\n';
  }
  save_annotations(dir / "annotations.jsonl", annotations);
  write_file_atomic(dir / "events.jsonl", events_text);
  data.vocab.save(dir / "vocab.txt");
  for (const char* f : {"annotations.jsonl", "events.jsonl", "vocab.txt"}) files.push_back(f);
  const json manifest = {{"generation_spec", data.spec.to_json()},
                         {"segments", data.geometry.segments},
                         {"clips_per_segment", data.geometry.clips_per_segment},
                         {"clip_seconds", data.geometry.clip_seconds},
                         {"files", files},
                         {"run_config", run_config}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace man

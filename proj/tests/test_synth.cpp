#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "man/errors.hpp"
#include "man/synth.hpp"

using namespace man;
namespace fs = std::filesystem;

namespace {

GenerationSpec mixed_spec(std::uint64_t seed) {
  GenerationSpec spec;
  spec.plain = 300;
  spec.ordinal = 350;
  spec.relational = 350;
  spec.dim = 6;
  spec.events = 5;
  spec.seed = seed;
  return spec;
}

std::vector<std::string> words_of(const std::string& q) {
  std::istringstream is(q);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::map<std::string, std::string> directory_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

}  // namespace

TEST(Generate, EmptySpecGivesEmptyDataset) {
  const fs::path dir = fs::temp_directory_path() / "man_synth_empty";
  fs::remove_all(dir);
  const SyntheticDataset data = generate(GenerationSpec{});
  EXPECT_TRUE(data.samples.empty());
  write_dataset(dir, data, json::object());
  EXPECT_EQ(read_file(dir / "annotations.jsonl"), "");
  EXPECT_TRUE(fs::is_empty(dir / "features"));
  fs::remove_all(dir);
}

TEST(Generate, InfeasibleSpecsAreConfigErrors) {
  GenerationSpec spec;
  spec.events = 1;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = GenerationSpec{};
  spec.max_ordinal = 4;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = GenerationSpec{};
  spec.preset = "tacos";
  EXPECT_THROW(generate(spec), ConfigError);
}

TEST(OracleSolve, SecondOccurrenceOfOrdinal) {
  Rng rng(0);
  const EventVocabulary events = EventVocabulary::draw(2, 4, rng);
  const SyntheticVideo video{"v", {0, 1, 0, 1, 0, 0}};
  const std::string query = events.tokens[1] + " the second time";
  EXPECT_EQ(oracle_solve(video, query, events, SyntheticGeometry::for_preset("didemo")), (Interval{15.0, 20.0}));
}

TEST(OracleSolve, RelationalPicksTheEventAfterTheAnchor) {
  Rng rng(0);
  const EventVocabulary events = EventVocabulary::draw(3, 4, rng);
  const SyntheticVideo video{"v", {2, 1, 2, 2, 0, 2}};
  const std::string query = events.tokens[0] + " after " + events.tokens[1];
  EXPECT_EQ(oracle_solve(video, query, events, SyntheticGeometry::for_preset("didemo")), (Interval{20.0, 25.0}));
}

TEST(OracleSolve, PlainSingleOccurrence) {
  Rng rng(0);
  const EventVocabulary events = EventVocabulary::draw(3, 4, rng);
  const SyntheticVideo video{"v", {2, 2, 2, 1, 2, 2}};
  EXPECT_EQ(oracle_solve(video, events.tokens[1], events, SyntheticGeometry::for_preset("didemo")),
            (Interval{15.0, 20.0}));
}

TEST(OracleSolve, UnresolvableQueryThrows) {
  Rng rng(0);
  const EventVocabulary events = EventVocabulary::draw(3, 4, rng);
  const SyntheticVideo video{"v", {2, 2, 2, 1, 2, 2}};
  const auto geo = SyntheticGeometry::for_preset("didemo");
  EXPECT_THROW(oracle_solve(video, events.tokens[0], events, geo), InputError);
  EXPECT_THROW(oracle_solve(video, events.tokens[1] + " the second time", events, geo), InputError);
  EXPECT_THROW(oracle_solve(video, events.tokens[1] + " before " + events.tokens[2], events, geo), InputError);
}

TEST(Generate, OracleAgreesWithEveryStoredAnswer) {
  for (const char* preset : {"didemo", "charades"}) {
    GenerationSpec spec = mixed_spec(3);
    spec.preset = preset;
    const SyntheticDataset data = generate(spec);
    ASSERT_EQ(data.samples.size(), 1000u);
    std::size_t agree = 0;
    for (const auto& s : data.samples) {
      agree += oracle_solve(s.video, s.annotation.query, data.events, data.geometry) == s.annotation.interval;
    }
    EXPECT_EQ(agree, data.samples.size()) << preset;
  }
}

TEST(Generate, OrdinalQueriesHaveEarlierOccurrencesOfTheSameEvent) {
  const SyntheticDataset data = generate(mixed_spec(4));
  const std::vector<std::string> ordinals = {"first", "second", "third"};
  for (const auto& s : data.samples) {
    if (s.kind != QueryTemplate::kOrdinal) continue;
    const auto w = words_of(s.annotation.query);
    ASSERT_EQ(w.size(), 4u);
    const std::size_t e = data.events.index(w[0]);
    const std::size_t k = static_cast<std::size_t>(std::find(ordinals.begin(), ordinals.end(), w[2]) - ordinals.begin()) + 1;
    std::vector<std::size_t> occ;
    for (std::size_t i = 0; i < s.video.segments.size(); ++i) {
      if (s.video.segments[i] == e) occ.push_back(i);
    }
    ASSERT_GE(occ.size(), k);
    ASSERT_GE(occ.size(), 2u);
    if (k >= 2) {
      EXPECT_EQ(s.video.segments[occ[0]], s.video.segments[occ[k - 1]]);
      EXPECT_NE(data.geometry.segment(occ[0]), s.annotation.interval);
    }
  }
}

TEST(Generate, RelationalSentenceOrderDiffersFromTemporalOrder) {
  const SyntheticDataset data = generate(mixed_spec(5));
  std::size_t seen = 0;
  for (const auto& s : data.samples) {
    if (s.kind != QueryTemplate::kRelational) continue;
    ++seen;
    const auto w = words_of(s.annotation.query);
    ASSERT_EQ(w.size(), 3u);
    ASSERT_EQ(w[1], "after");
    const std::size_t a = data.events.index(w[0]), b = data.events.index(w[2]);
    EXPECT_NE(a, b);
    const auto& seg = s.video.segments;
    const std::size_t first_b = static_cast<std::size_t>(std::find(seg.begin(), seg.end(), b) - seg.begin());
    ASSERT_LT(first_b, seg.size());
    // A is mentioned first but the answer lies strictly after B.
    EXPECT_GT(s.annotation.interval.start_seconds, data.geometry.segment(first_b).start_seconds);
    EXPECT_EQ(data.geometry.segment(first_b).end_seconds <= s.annotation.interval.start_seconds, true);
  }
  EXPECT_EQ(seen, 350u);
}

TEST(Generate, PrototypesAreSeparatedByMoreThanTenDegrees) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const EventVocabulary ev = EventVocabulary::draw(12, 3, rng);
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          dot += ev.prototypes[i][k] * ev.prototypes[j][k];
          ni += ev.prototypes[i][k] * ev.prototypes[i][k];
          nj += ev.prototypes[j][k] * ev.prototypes[j][k];
        }
        const double angle = std::acos(std::clamp(dot / std::sqrt(ni * nj), -1.0, 1.0)) * 180.0 / std::acos(-1.0);
        EXPECT_GT(angle, kMinPrototypeAngleDegrees);
      }
    }
  }
}

TEST(Generate, GroundTruthSnapsToASegmentAndFeaturesFollowPrototypes) {
  GenerationSpec spec = mixed_spec(6);
  spec.plain = spec.ordinal = spec.relational = 5;
  spec.noise_sigma = 0.0;
  const SyntheticDataset data = generate(spec);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    EXPECT_DOUBLE_EQ(s.annotation.interval.length(), 5.0);
    const Tensor& f = data.features[i].features;
    ASSERT_EQ(f.rows(), 240u);
    for (std::size_t t = 0; t < 240; t += 17) {
      const auto& proto = data.events.prototypes[s.video.segments[t / 40]];
      for (std::size_t k = 0; k < spec.dim; ++k) EXPECT_EQ(f.at(t, k), proto[k]);
    }
  }
}

TEST(Generate, ShardsShareEventsAndDifferOnlyInSamples) {
  GenerationSpec a = mixed_spec(7);
  a.plain = 3;
  a.ordinal = a.relational = 0;
  GenerationSpec b = a;
  b.first_sample = 1000;
  const SyntheticDataset da = generate(a), db = generate(b);
  EXPECT_EQ(da.events.prototypes, db.events.prototypes);
  EXPECT_EQ(db.samples.front().annotation.query_id, "q001000");
  EXPECT_NE(da.samples.front().video.video_id, db.samples.front().video.video_id);
}

TEST(Generate, SameSeedWritesByteIdenticalFiles) {
  const fs::path root = fs::temp_directory_path() / "man_synth_det";
  fs::remove_all(root);
  GenerationSpec spec = mixed_spec(7);
  spec.plain = spec.ordinal = spec.relational = 4;
  write_dataset(root / "a", generate(spec), json{{"seed", 7}});
  write_dataset(root / "b", generate(spec), json{{"seed", 7}});
  const auto a = directory_contents(root / "a"), b = directory_contents(root / "b");
  EXPECT_EQ(a.size(), 4u * 3u * 2u + 4u);
  EXPECT_EQ(a, b);
  spec.seed = 8;
  write_dataset(root / "c", generate(spec), json{{"seed", 8}});
  EXPECT_NE(directory_contents(root / "c").at("annotations.jsonl") + directory_contents(root / "c").at("features/v000000.bin"),
            a.at("annotations.jsonl") + a.at("features/v000000.bin"));
  fs::remove_all(root);
}

TEST(Generate, WrittenDatasetLoadsForTraining) {
  const fs::path dir = fs::temp_directory_path() / "man_synth_load";
  fs::remove_all(dir);
  GenerationSpec spec = mixed_spec(9);
  spec.plain = spec.ordinal = spec.relational = 2;
  const SyntheticDataset data = generate(spec);
  write_dataset(dir, data, json::object());
  const Dataset loaded = load_dataset(dir / "annotations.jsonl", dir / "features", dir / "vocab.txt");
  ASSERT_EQ(loaded.samples.size(), 6u);
  EXPECT_EQ(loaded.feature_dim(), spec.dim);
  EXPECT_EQ(loaded.vocab.tokens(), data.vocab.tokens());
  const json manifest = read_json(dir / "manifest.json");
  EXPECT_EQ(GenerationSpec::from_json(manifest.at("generation_spec")).to_json(), spec.to_json());
  fs::remove_all(dir);
}

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "man/errors.hpp"
#include "man/video.hpp"

using namespace man;

namespace {

DynamicFilter filter_from(std::size_t L, std::size_t d, std::vector<double> words) {
  return DynamicFilter{Tensor::from({L, d}, std::move(words))};
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from({r, c}, v);
}

}  // namespace

TEST(Presets, CandidateCounts) {
  EXPECT_EQ(PyramidConfig::charades().candidate_count(), 31u);
  EXPECT_EQ(PyramidConfig::didemo().candidate_count(), 21u);
  EXPECT_EQ(enumerate_moments(PyramidConfig::charades(), 64.0).size(), 31u);
  EXPECT_EQ(enumerate_moments(PyramidConfig::didemo(), 30.0).size(), 21u);
}

TEST(Presets, UnknownNameIsConfigError) { EXPECT_THROW(PyramidConfig::by_name("tacos"), ConfigError); }

TEST(EnumerateMoments, DidemoLayerOneIsSixFiveSecondSegments) {
  const auto m = enumerate_moments(PyramidConfig::didemo(), 30.0);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(m[j].layer, 1u);
    EXPECT_DOUBLE_EQ(m[j].start_seconds, 5.0 * static_cast<double>(j));
    EXPECT_DOUBLE_EQ(m[j].end_seconds, 5.0 * static_cast<double>(j + 1));
  }
}

TEST(EnumerateMoments, DidemoTopLayerIsFullVideo) {
  const auto m = enumerate_moments(PyramidConfig::didemo(), 30.0);
  EXPECT_EQ(m.back().layer, 6u);
  EXPECT_DOUBLE_EQ(m.back().start_seconds, 0.0);
  EXPECT_DOUBLE_EQ(m.back().end_seconds, 30.0);
}

TEST(EnumerateMoments, CharadesFirstCell) {
  const auto m = enumerate_moments(PyramidConfig::charades(), 64.0);
  EXPECT_DOUBLE_EQ(m[0].start_seconds, 0.0);
  EXPECT_DOUBLE_EQ(m[0].end_seconds, 4.0);
}

TEST(EnumerateMoments, DidemoEqualsAllConsecutiveSpans) {
  std::set<std::pair<int, int>> brute;
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b <= 6; ++b) brute.insert({a, b});
  }
  std::set<std::pair<int, int>> got;
  for (const auto& m : enumerate_moments(PyramidConfig::didemo(), 30.0)) {
    got.insert({static_cast<int>(std::lround(m.start_seconds / 5.0)), static_cast<int>(std::lround(m.end_seconds / 5.0))});
  }
  EXPECT_EQ(got, brute);
  EXPECT_EQ(brute.size(), 21u);
}

TEST(EnumerateMoments, ExtentsAreValidAndIncreasingWithinLayers) {
  for (const auto& config : {PyramidConfig::charades(), PyramidConfig::didemo()}) {
    for (double duration : {1.0, 17.3, 30.0, 64.0, 250.5}) {
      const auto m = enumerate_moments(config, duration);
      ASSERT_EQ(m.size(), config.candidate_count());
      for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_LE(0.0, m[i].start_seconds);
        EXPECT_LT(m[i].start_seconds, m[i].end_seconds);
        EXPECT_LE(m[i].end_seconds, duration + 1e-9);
        if (i > 0 && m[i].layer == m[i - 1].layer) EXPECT_LT(m[i - 1].start_seconds, m[i].start_seconds);
      }
    }
  }
}

TEST(AlignFeatures, ZeroFilterGivesUniformAttention) {
  Rng rng(1);
  const Tensor fv = random_matrix(5, 3, rng);
  const AlignedFeatures a = align_features(fv, filter_from(2, 3, std::vector<double>(6, 0.0)));
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_DOUBLE_EQ(a.attention.values()[t], 0.2);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(a.features.at(t, k), fv.at(t, k) / 5.0);
  }
}

TEST(AlignFeatures, TwoClipClosedForm) {
  const AlignedFeatures a = align_features(Tensor::from({2, 2}, {1, 0, 0, 1}), filter_from(1, 2, {1, 0}));
  const double e = std::exp(1.0);
  EXPECT_NEAR(a.response.at(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(a.response.at(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(a.attention.values()[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(a.attention.values()[1], 1.0 / (e + 1.0), 1e-15);
}

TEST(AlignFeatures, PermutingClipsPermutesAttention) {
  Rng rng(2);
  const Tensor fv = random_matrix(6, 4, rng);
  const DynamicFilter f{random_matrix(3, 4, rng)};
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<double> permuted;
  for (std::size_t t : perm) {
    for (std::size_t k = 0; k < 4; ++k) permuted.push_back(fv.at(t, k));
  }
  const auto a = align_features(fv, f), b = align_features(Tensor::from({6, 4}, permuted), f);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(b.attention.values()[i], a.attention.values()[perm[i]], 1e-15);
}

TEST(AlignFeatures, AttentionSumsToOneAndRescalesRows) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng.index(40), d = 1 + rng.index(6), L = 1 + rng.index(5);
    const Tensor fv = random_matrix(T, d, rng);
    const auto a = align_features(fv, DynamicFilter{random_matrix(L, d, rng)});
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      total += a.attention.values()[t];
      for (std::size_t k = 0; k < d; ++k) EXPECT_DOUBLE_EQ(a.features.at(t, k), a.attention.values()[t] * fv.at(t, k));
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(AlignFeatures, DimensionMismatchNamesD) {
  try {
    align_features(Tensor::zeros({4, 3}), filter_from(1, 2, {0, 0}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("d=2"), std::string::npos) << e.what();
  }
}

TEST(BuildPyramid, RowCountsMatchPresets) {
  Rng rng(4);
  for (const auto& config : {PyramidConfig::charades(), PyramidConfig::didemo()}) {
    const PyramidParams p = PyramidParams::init(config, 3, rng);
    const MomentFeatures m = build_pyramid(random_matrix(config.clips, 3, rng), config, p);
    EXPECT_EQ(m.nodes.rows(), config.candidate_count());
    EXPECT_EQ(m.nodes.cols(), 3u);
  }
}

TEST(BuildPyramid, WrongClipCountIsError) {
  Rng rng(5);
  const auto config = PyramidConfig::didemo();
  const PyramidParams p = PyramidParams::init(config, 2, rng);
  EXPECT_THROW(build_pyramid(random_matrix(100, 2, rng), config, p), DimensionError);
}

TEST(BuildPyramid, DidemoSpanCellsSeeOnlyTheirSegments) {
  // With context width 1, layer k cell j depends only on segments [j, j + k).
  Rng rng(6);
  auto config = PyramidConfig::didemo();
  config.context_width = 1;
  const PyramidParams p = PyramidParams::init(config, 2, rng);
  const Tensor base = random_matrix(240, 2, rng);
  const MomentFeatures a = build_pyramid(base, config, p);
  std::vector<double> changed(base.values().begin(), base.values().end());
  for (std::size_t t = 200; t < 240; ++t) changed[t * 2] += 3.0;  // segment 5
  const MomentFeatures b = build_pyramid(Tensor::from({240, 2}, changed), config, p);
  const auto moments = enumerate_moments(config, 30.0);
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].end_seconds <= 25.0 + 1e-9) {
      EXPECT_EQ(a.nodes.at(i, 0), b.nodes.at(i, 0)) << i;
      EXPECT_EQ(a.nodes.at(i, 1), b.nodes.at(i, 1)) << i;
    }
  }
}

TEST(ClipFeatures, FileRoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "man_video_test";
  std::filesystem::remove_all(dir);
  Rng rng(7);
  ClipFeatures clip{"vid_1", random_matrix(12, 5, rng), 0.25};
  save_clip_features(dir, clip);
  const ClipFeatures back = load_clip_features(feature_manifest_path(dir, "vid_1"));
  EXPECT_EQ(back.video_id, "vid_1");
  EXPECT_EQ(back.clip_duration_seconds, 0.25);
  ASSERT_EQ(back.features.shape(), clip.features.shape());
  for (std::size_t i = 0; i < clip.features.numel(); ++i) EXPECT_EQ(back.features.values()[i], clip.features.values()[i]);
  std::filesystem::remove_all(dir);
}

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "man/errors.hpp"
#include "man/synth.hpp"
#include "man/trainer.hpp"
#include "oracles.hpp"

using namespace man;
namespace fs = std::filesystem;

namespace {

SyntheticDataset small_synthetic(std::uint64_t seed = 1) {
  GenerationSpec spec;
  spec.plain = 6;
  spec.ordinal = 3;
  spec.relational = 3;
  spec.dim = 8;
  spec.seed = seed;
  return generate(spec);
}

HyperParams small_params() {
  HyperParams hp;
  hp.dim = 8;
  hp.lr = 1e-3;
  hp.batch = 4;
  hp.epochs = 2;
  hp.cells = 1;
  hp.seed = 5;
  hp.track_rank1 = false;
  return hp;
}

std::vector<std::vector<double>> parameter_values(const MomentAlignmentNet& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

MatchingScores scores_from_logits(const std::vector<double>& logits) {
  const Tensor z = Tensor::from({logits.size()}, logits);
  return MatchingScores{z, sigmoid(z)};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("man_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(AssignTargets, ExactCandidateGetsOne) {
  const auto moments = enumerate_moments(PyramidConfig::didemo(), 30.0);
  const TargetAssignment t = assign_targets(moments, Interval{10.0, 20.0});
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].start_seconds == 10.0 && moments[i].end_seconds == 20.0) EXPECT_EQ(t.s[i], 1.0);
  }
}

TEST(AssignTargets, DisjointGroundTruthGivesZeros) {
  auto config = PyramidConfig::didemo();
  const auto moments = enumerate_moments(config, 30.0);
  const TargetAssignment t = assign_targets(moments, Interval{40.0, 45.0});
  for (double s : t.s) EXPECT_EQ(s, 0.0);
}

TEST(AssignTargets, HalfOverlapIsNotPositive) {
  const auto moments = enumerate_moments(PyramidConfig::didemo(), 30.0);
  const TargetAssignment t = assign_targets(moments, Interval{5.0, 15.0});
  for (std::size_t i = 0; i < moments.size(); ++i) {
    const auto& m = moments[i];
    if (m.start_seconds == 5.0 && m.end_seconds == 10.0) EXPECT_EQ(t.s[i], 0.0);
    if (m.start_seconds == 5.0 && m.end_seconds == 15.0) EXPECT_EQ(t.s[i], 1.0);
  }
}

TEST(AssignTargets, DegenerateGroundTruthIsInputError) {
  const auto moments = enumerate_moments(PyramidConfig::didemo(), 30.0);
  EXPECT_THROW(assign_targets(moments, Interval{5.0, 5.0}), InputError);
  EXPECT_THROW(assign_targets(moments, Interval{6.0, 5.0}), InputError);
}

TEST(AssignTargets, MatchesBruteForceOnRandomDraws) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto config = trial % 2 ? PyramidConfig::charades() : PyramidConfig::didemo();
    const double duration = rng.uniform(5.0, 120.0);
    const auto moments = enumerate_moments(config, duration);
    double a = rng.uniform(0.0, duration), b = rng.uniform(0.0, duration);
    if (trial % 7 == 0) {
      // snap to a candidate boundary so exact matches and the 0.5 edge occur
      const auto& m = moments[rng.index(moments.size())];
      a = m.start_seconds;
      b = m.end_seconds;
    }
    if (a == b) continue;
    const Interval gt{std::min(a, b), std::max(a, b)};
    const NegativeTargets mode = trial % 3 == 0 ? NegativeTargets::kIoU : NegativeTargets::kZero;
    const TargetAssignment t = assign_targets(moments, gt, mode);
    ASSERT_EQ(t.s.size(), moments.size());
    for (std::size_t i = 0; i < moments.size(); ++i) {
      const double iou = oracle::exact_iou({moments[i].start_seconds, moments[i].end_seconds}, gt);
      // the two IoU formulas can round differently, so skip draws sitting on the threshold
      if (std::abs(iou - 0.5) < 1e-12) continue;
      const double expected = iou > 0.5 ? iou : (mode == NegativeTargets::kIoU ? iou : 0.0);
      EXPECT_NEAR(t.s[i], expected, 1e-12);
      EXPECT_GE(t.s[i], 0.0);
      EXPECT_LE(t.s[i], 1.0);
    }
  }
}

TEST(MatchingLoss, HalfTargetsAtHalfScoresIsLn2) {
  const MatchingScores a = scores_from_logits(std::vector<double>(21, 0.0));
  const TargetAssignment s{std::vector<double>(21, 0.5)};
  EXPECT_NEAR(matching_loss(a, s).item(), std::log(2.0), 1e-12);
}

TEST(MatchingLoss, ZeroTargetsAtHalfScoresIsLn2) {
  const MatchingScores a = scores_from_logits(std::vector<double>(31, 0.0));
  const TargetAssignment s{std::vector<double>(31, 0.0)};
  EXPECT_NEAR(matching_loss(a, s).item(), std::log(2.0), 1e-12);
}

TEST(MatchingLoss, PerfectHardPredictionsVanish) {
  std::vector<double> logits, targets;
  for (int i = 0; i < 21; ++i) {
    targets.push_back(i % 3 == 0 ? 1.0 : 0.0);
    logits.push_back(i % 3 == 0 ? 40.0 : -40.0);
  }
  EXPECT_LE(matching_loss(scores_from_logits(logits), TargetAssignment{targets}).item(), 1e-6);
}

TEST(MatchingLoss, NormalizesByCandidateCountAcrossTheBatch) {
  const std::vector<MatchingScores> scores = {scores_from_logits({1.0, -2.0}), scores_from_logits({0.5, 0.0, 3.0})};
  const std::vector<TargetAssignment> targets = {{{1.0, 0.0}}, {{0.0, 0.7, 1.0}}};
  double expected = 0.0;
  const double z[] = {1.0, -2.0, 0.5, 0.0, 3.0}, s[] = {1.0, 0.0, 0.0, 0.7, 1.0};
  for (int i = 0; i < 5; ++i) {
    const double a = 1.0 / (1.0 + std::exp(-z[i]));
    expected -= s[i] * std::log(a) + (1.0 - s[i]) * std::log(1.0 - a);
  }
  EXPECT_NEAR(matching_loss(scores, targets).item(), expected / 5.0, 1e-14);
}

TEST(MatchingLoss, LengthMismatchThrows) {
  EXPECT_THROW(matching_loss(scores_from_logits({0.0, 1.0}), TargetAssignment{{0.0}}), DimensionError);
}

TEST(MatchingLoss, NonNegativeAndZeroOnlyAtHardTargets) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(30);
    std::vector<double> z(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = rng.uniform(-10.0, 10.0);
      s[i] = rng.uniform() < 0.5 ? 0.0 : rng.uniform();
    }
    const double loss = matching_loss(scores_from_logits(z), TargetAssignment{s}).item();
    EXPECT_GT(loss, 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsTheStep) {
  const std::vector<NamedParameter> params = {{"w", Tensor::parameter({2}, {0.3, -0.4})}};
  AdamState state = AdamState::zeros(params);
  HyperParams hp;
  adam_step(params, state, hp);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(params[0].tensor.values()[0], 0.3);
  EXPECT_EQ(params[0].tensor.values()[1], -0.4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tape tape;
  TapeScope scope(tape);
  Tensor p = Tensor::parameter({1}, {2.0});
  backward(sum(p));  // gradient 1
  const std::vector<NamedParameter> params = {{"p", p}};
  AdamState state = AdamState::zeros(params);
  HyperParams hp;
  hp.lr = 1e-3;
  adam_step(params, state, hp);
  // m_hat = 1, v_hat = 1: update = lr / (1 + eps)
  EXPECT_NEAR(2.0 - p.values()[0], 1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  Tape tape;
  TapeScope scope(tape);
  Tensor a = Tensor::parameter({1}, {1.0});
  Tensor b = Tensor::parameter({1}, {-1.0});
  backward(sum(add(scale(a, 2.0), mul(b, Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()})))));
  const std::vector<NamedParameter> params = {{"first", a}, {"second.weight", b}};
  AdamState state = AdamState::zeros(params);
  try {
    adam_step(params, state, HyperParams{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a.values()[0], 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(HyperParams, DefaultsAndJsonRoundTrip) {
  HyperParams hp;
  EXPECT_EQ(hp.lr, 1e-4);
  EXPECT_EQ(hp.beta1, 0.9);
  EXPECT_EQ(hp.beta2, 0.999);
  EXPECT_EQ(hp.epsilon, 1e-8);
  EXPECT_EQ(hp.cells, 3u);
  EXPECT_EQ(hp.dim, 512u);
  hp.negatives = NegativeTargets::kIoU;
  hp.lr = 0.00123;
  const HyperParams back = HyperParams::from_json(hp.to_json());
  EXPECT_EQ(back.to_json(), hp.to_json());
}

TEST(HyperParams, RejectsNonPositiveValues) {
  HyperParams hp;
  hp.batch = 0;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = HyperParams{};
  hp.lr = -1.0;
  EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(Annotations, FileRoundTrip) {
  const fs::path dir = scratch_dir("annotations");
  const std::vector<TrainingSample> samples = {{"a", "v1", "jump", {0.0, 5.0}}, {"b", "v2", "sit after jump", {5.0, 10.0}}};
  save_annotations(dir / "ann.jsonl", samples);
  const auto back = load_annotations(dir / "ann.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].query_id, "b");
  EXPECT_EQ(back[1].query, "sit after jump");
  EXPECT_EQ(back[1].interval, (Interval{5.0, 10.0}));
}

TEST(Dataset, MissingFeatureFileNamesVideo) {
  const fs::path dir = scratch_dir("missing");
  const SyntheticDataset data = small_synthetic();
  write_dataset(dir, data, json::object());
  fs::remove(feature_manifest_path(dir / "features", data.samples[2].video.video_id));
  try {
    load_dataset(dir / "annotations.jsonl", dir / "features", dir / "vocab.txt");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(data.samples[2].video.video_id), std::string::npos) << e.what();
  }
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  HyperParams hp = small_params();
  hp.lr = 0.0;
  Trainer trainer(data, hp);
  const auto before = parameter_values(trainer.model());
  trainer.train_epoch();
  EXPECT_EQ(parameter_values(trainer.model()), before);
}

TEST(Trainer, InitialLossIsNearLn2) {
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  const Trainer trainer(data, small_params());
  EXPECT_NEAR(trainer.evaluate_loss(), std::log(2.0), 0.02);
}

TEST(Trainer, SameSeedGivesBitIdenticalParameters) {
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  Trainer a(data, small_params()), b(data, small_params());
  const auto la = train(a), lb = train(b);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss);
  EXPECT_EQ(parameter_values(a.model()), parameter_values(b.model()));
}

TEST(Trainer, SingleSampleLossFalls) {
  GenerationSpec spec;
  spec.plain = 1;
  spec.dim = 8;
  const Dataset data = generate(spec).to_dataset();
  HyperParams hp = small_params();
  hp.batch = 1;
  hp.lr = 1e-2;
  Trainer trainer(data, hp);
  const double initial = trainer.evaluate_loss();
  for (int i = 0; i < 100; ++i) trainer.train_epoch();
  EXPECT_LT(trainer.evaluate_loss(), 0.5 * initial);
}

TEST(Trainer, TrainLogsEpochZeroThenEveryEpoch) {
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  HyperParams hp = small_params();
  hp.epochs = 3;
  hp.track_rank1 = true;
  Trainer trainer(data, hp);
  const auto log = train(trainer);
  ASSERT_EQ(log.size(), 4u);
  for (std::size_t e = 0; e < log.size(); ++e) {
    EXPECT_EQ(log[e].epoch, e);
    EXPECT_GE(log[e].rank1, 0.0);
    EXPECT_LE(log[e].rank1, 1.0);
  }
  const std::string csv = format_training_log(log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss,rank1");
}

TEST(Checkpoint, SaveLoadSaveIsBitExact) {
  const fs::path dir = scratch_dir("ckpt");
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  Trainer trainer(data, small_params());
  trainer.train_epoch();
  save_checkpoint(dir / "a.json", trainer.checkpoint());
  save_checkpoint(dir / "b.json", load_checkpoint(dir / "a.json"));
  EXPECT_EQ(read_file(dir / "a.bin"), read_file(dir / "b.bin"));
  json ja = read_json(dir / "a.json"), jb = read_json(dir / "b.json");
  ja.erase("data_file");
  jb.erase("data_file");
  EXPECT_EQ(ja, jb);
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
  const fs::path dir = scratch_dir("resume");
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  Trainer straight(data, small_params());
  straight.train_epoch();
  save_checkpoint(dir / "c.json", straight.checkpoint());
  Trainer resumed(data, load_checkpoint(dir / "c.json"));
  EXPECT_EQ(resumed.epoch(), 1u);
  EXPECT_EQ(straight.train_epoch(), resumed.train_epoch());
  EXPECT_EQ(parameter_values(straight.model()), parameter_values(resumed.model()));
}

TEST(Predict, RanksEveryCandidateByLogit) {
  const SyntheticDataset synth = small_synthetic();
  const Dataset data = synth.to_dataset();
  const Trainer trainer(data, small_params());
  const auto& s = data.samples.front();
  const RankedPrediction p = predict(trainer.model(), trainer.embeddings(), data.vocab, s, data.features.at(s.video_id));
  EXPECT_EQ(p.query_id, s.query_id);
  ASSERT_EQ(p.ranked.size(), 21u);
  for (std::size_t i = 1; i < p.ranked.size(); ++i) EXPECT_GE(p.ranked[i - 1].score, p.ranked[i].score);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "man/eval.hpp"
#include "man/io.hpp"
#include "man/language.hpp"
#include "man/model.hpp"
#include "man/rng.hpp"
#include "man/video.hpp"

namespace man {

struct TrainingSample {
  std::string query_id;
  std::string video_id;
  std::string query;
  Interval interval;
};

// JSON lines {query_id?, video_id, query, start_seconds, end_seconds}. A
// missing query_id defaults to the zero-based line index.
std::vector<TrainingSample> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, std::span<const TrainingSample> samples);

// What a candidate with IoU <= 0.5 is trained towards.
enum class NegativeTargets {
  kZero,  // s_i = 0
  kIoU,   // s_i = IoU, the raw overlap
};

std::string to_string(NegativeTargets mode);
NegativeTargets negative_targets_from_string(const std::string& name);

inline constexpr double kPositiveIoU = 0.5;

struct TargetAssignment {
  std::vector<double> s;  // aligned with the candidate enumeration
};

// s_i = IoU(moment_i, gt) when IoU > 0.5 (strict), otherwise 0 or IoU per `negatives`.
TargetAssignment assign_targets(std::span<const CandidateMoment> moments, const Interval& gt,
                                NegativeTargets negatives = NegativeTargets::kZero);

// Sigmoid cross-entropy summed over every candidate of every sample in the
// batch and divided by the total candidate count N_b.
Tensor matching_loss(std::span<const MatchingScores> scores, std::span<const TargetAssignment> targets);
Tensor matching_loss(const MatchingScores& scores, const TargetAssignment& targets);

struct HyperParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch = 8;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t dim = 512;
  std::string preset = "didemo";
  std::size_t cells = 3;
  bool feature_alignment = true;
  NegativeTargets negatives = NegativeTargets::kZero;
  std::size_t context_width = 3;
  double diag_value = 1.0;
  // Evaluate train-set Rank@1 after each epoch (one extra forward pass per sample).
  bool track_rank1 = true;

  void validate() const;
  json to_json() const;
  static HyperParams from_json(const json& j);
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState zeros(std::span<const NamedParameter> params);
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient, in the order of `params`. Parameters without a gradient are
// treated as having a zero gradient. A non-finite gradient throws
// NumericError naming the parameter before anything is modified.
void adam_step(std::span<const NamedParameter> params, AdamState& state, const HyperParams& hp);

struct Dataset {
  std::vector<TrainingSample> samples;
  std::map<std::string, ClipFeatures> features;  // by video_id
  Vocabulary vocab;

  std::size_t feature_dim() const;
  // Every sample resolves to features and lies inside its video.
  void validate() const;
};

Dataset load_dataset(const std::filesystem::path& annotations, const std::filesystem::path& features_dir,
                     const std::filesystem::path& vocab_path);

struct Checkpoint {
  HyperParams hp;
  ModelConfig model;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;
  AdamState adam;
  std::string rng_state;
  std::size_t epoch = 0;
  json provenance;  // run configuration of the process that wrote it

  json manifest(const std::string& data_file) const;
};

// "<path>" holds the JSON manifest; parameters and Adam moments go to
// "<path stem>.bin" next to it as raw little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double rank1 = -1.0;  // negative when not tracked
};

// CSV with header "epoch,loss,rank1"; untracked rank1 is left empty.
std::string format_training_log(std::span<const EpochLog> log);

ModelConfig model_config(const HyperParams& hp, std::size_t feature_dim);

class Trainer {
 public:
  Trainer(const Dataset& data, HyperParams hp);
  Trainer(const Dataset& data, const Checkpoint& checkpoint);

  // One optimizer step on the given samples; returns the batch loss.
  double step(std::span<const std::size_t> batch);
  // Shuffles, then steps through the dataset in batches; returns the mean batch loss.
  double train_epoch();

  // Full-dataset loss without updating anything.
  double evaluate_loss() const;
  // Share of samples whose top-scored candidate has the highest IoU with the ground truth.
  double evaluate_rank1() const;

  Checkpoint checkpoint() const;
  std::size_t epoch() const { return epoch_; }
  const MomentAlignmentNet& model() const { return model_; }
  const EmbeddingTable& embeddings() const { return embeddings_; }
  const HyperParams& hyper_params() const { return hp_; }

 private:
  struct Prepared {
    std::vector<int> ids;
    const ClipFeatures* clip = nullptr;
    std::vector<CandidateMoment> moments;
    TargetAssignment targets;
    std::vector<double> ious;
  };

  void prepare();

  const Dataset& data_;
  HyperParams hp_;
  MomentAlignmentNet model_;
  EmbeddingTable embeddings_;
  AdamState adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<Prepared> prepared_;
};

// Runs epochs until hp.epochs, starting with an epoch-0 entry that records
// the loss before any update. `on_epoch` is called after every entry.
std::vector<EpochLog> train(Trainer& trainer,
                            const std::function<void(const EpochLog&)>& on_epoch = nullptr);

// Candidates for one query ranked by matching logit.
RankedPrediction predict(const MomentAlignmentNet& model, const EmbeddingTable& embeddings,
                         const Vocabulary& vocab, const TrainingSample& sample, const ClipFeatures& clip);

}  // namespace man

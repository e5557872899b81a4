#include "man/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "man/errors.hpp"

namespace man {

// ---- annotations -----------------------------------------------------------

std::vector<TrainingSample> load_annotations(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("annotations not found: " + path.string());
  std::vector<TrainingSample> out;
  const auto rows = read_jsonl(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    const std::string ctx = fmt::format("{} line {}", path.string(), i + 1);
    TrainingSample s;
    s.query_id = row.contains("query_id") ? require_field<std::string>(row, "query_id", ctx) : std::to_string(i);
    s.video_id = require_field<std::string>(row, "video_id", ctx);
    s.query = require_field<std::string>(row, "query", ctx);
    s.interval = {require_field<double>(row, "start_seconds", ctx), require_field<double>(row, "end_seconds", ctx)};
    out.push_back(std::move(s));
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, std::span<const TrainingSample> samples) {
  std::string text;
  for (const auto& s : samples) {
    text += json{{"query_id", s.query_id},
                 {"video_id", s.video_id},
                 {"query", s.query},
                 {"start_seconds", s.interval.start_seconds},
                 {"end_seconds", s.interval.end_seconds}}
                .dump();
    text += '\n';
  }
  write_file_atomic(path, text);
}

// ---- targets and loss ------------------------------------------------------

std::string to_string(NegativeTargets mode) { return mode == NegativeTargets::kZero ? "zero" : "iou"; }

NegativeTargets negative_targets_from_string(const std::string& name) {
  if (name == "zero") return NegativeTargets::kZero;
  if (name == "iou") return NegativeTargets::kIoU;
  throw ConfigError("unknown negative target mode '" + name + "' (expected zero or iou)");
}

TargetAssignment assign_targets(std::span<const CandidateMoment> moments, const Interval& gt,
                                NegativeTargets negatives) {
  if (!(gt.start_seconds < gt.end_seconds)) {
    throw InputError(fmt::format("degenerate ground truth [{}, {})", gt.start_seconds, gt.end_seconds));
  }
  if (moments.empty()) throw InputError("assign_targets: no candidate moments");
  TargetAssignment t;
  t.s.reserve(moments.size());
  for (const auto& m : moments) {
    const double iou = temporal_iou({m.start_seconds, m.end_seconds}, gt);
    t.s.push_back(iou > kPositiveIoU || negatives == NegativeTargets::kIoU ? iou : 0.0);
  }
  return t;
}

Tensor matching_loss(std::span<const MatchingScores> scores, std::span<const TargetAssignment> targets) {
  if (scores.size() != targets.size() || scores.empty()) {
    throw DimensionError(fmt::format("matching_loss: {} score sets for {} target sets", scores.size(), targets.size()));
  }
  std::vector<Tensor> logits;
  std::vector<double> s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].logits.numel() != targets[i].s.size()) {
      throw DimensionError(fmt::format("matching_loss: {} scores for {} targets", scores[i].logits.numel(),
                                       targets[i].s.size()));
    }
    logits.push_back(reshape(scores[i].logits, {scores[i].logits.numel(), 1}));
    s.insert(s.end(), targets[i].s.begin(), targets[i].s.end());
  }
  const Tensor all = reshape(concat_rows(logits), {s.size()});
  return scale(sigmoid_cross_entropy_sum(all, s), 1.0 / static_cast<double>(s.size()));
}

Tensor matching_loss(const MatchingScores& scores, const TargetAssignment& targets) {
  return matching_loss(std::span(&scores, 1), std::span(&targets, 1));
}

// ---- hyperparameters -------------------------------------------------------

void HyperParams::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a non-negative number");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (dim == 0) throw ConfigError("dim must be positive");
  if (context_width == 0) throw ConfigError("context width must be positive");
  PyramidConfig::by_name(preset);
}

json HyperParams::to_json() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"batch", batch},
          {"epochs", epochs},
          {"seed", seed},
          {"dim", dim},
          {"preset", preset},
          {"cells", cells},
          {"feature_alignment", feature_alignment},
          {"negatives", to_string(negatives)},
          {"context_width", context_width},
          {"diag_value", diag_value},
          {"track_rank1", track_rank1}};
}

HyperParams HyperParams::from_json(const json& j) {
  const std::string ctx = "hyperparameters";
  HyperParams hp;
  hp.lr = require_field<double>(j, "lr", ctx);
  hp.beta1 = require_field<double>(j, "beta1", ctx);
  hp.beta2 = require_field<double>(j, "beta2", ctx);
  hp.epsilon = require_field<double>(j, "epsilon", ctx);
  hp.batch = require_field<std::size_t>(j, "batch", ctx);
  hp.epochs = require_field<std::size_t>(j, "epochs", ctx);
  hp.seed = require_field<std::size_t>(j, "seed", ctx);
  hp.dim = require_field<std::size_t>(j, "dim", ctx);
  hp.preset = require_field<std::string>(j, "preset", ctx);
  hp.cells = require_field<std::size_t>(j, "cells", ctx);
  hp.feature_alignment = require_field<bool>(j, "feature_alignment", ctx);
  hp.negatives = negative_targets_from_string(require_field<std::string>(j, "negatives", ctx));
  hp.context_width = require_field<std::size_t>(j, "context_width", ctx);
  hp.diag_value = require_field<double>(j, "diag_value", ctx);
  hp.track_rank1 = require_field<bool>(j, "track_rank1", ctx);
  return hp;
}

ModelConfig model_config(const HyperParams& hp, std::size_t feature_dim) {
  ModelConfig c;
  c.dim = hp.dim;
  c.feature_dim = feature_dim;
  c.pyramid = PyramidConfig::by_name(hp.preset);
  c.pyramid.context_width = hp.context_width;
  c.igan_cells = hp.cells;
  c.feature_alignment = hp.feature_alignment;
  c.diag_value = hp.diag_value;
  return c;
}

// ---- Adam ------------------------------------------------------------------

AdamState AdamState::zeros(std::span<const NamedParameter> params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.numel(), 0.0);
    s.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<const NamedParameter> params, AdamState& state, const HyperParams& hp) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError(fmt::format("adam_step: state for {} parameters, got {}", state.first_moment.size(),
                                     params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k].tensor;
    if (state.first_moment[k].size() != p.numel() || state.second_moment[k].size() != p.numel()) {
      throw DimensionError("adam_step: moment size mismatch for " + params[k].name);
    }
    if (p.has_grad()) {
      for (double g : p.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params[k].name);
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].tensor;
    const bool has_grad = p.has_grad();
    const std::span<const double> grad = has_grad ? p.grad() : std::span<const double>{};
    auto values = p.mutable_values();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      values[i] -= hp.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hp.epsilon);
    }
  }
}

// ---- dataset ---------------------------------------------------------------

std::size_t Dataset::feature_dim() const {
  if (features.empty()) throw InputError("dataset has no features");
  return features.begin()->second.features.cols();
}

void Dataset::validate() const {
  if (samples.empty()) throw InputError("dataset has no samples");
  const std::size_t dim = feature_dim();
  for (const auto& [id, clip] : features) {
    if (clip.features.cols() != dim) {
      throw InputError(fmt::format("features of video {} have dim {}, expected {}", id, clip.features.cols(), dim));
    }
  }
  for (const auto& s : samples) {
    const auto it = features.find(s.video_id);
    if (it == features.end()) throw InputError("no features for video_id " + s.video_id);
    const double duration = it->second.duration_seconds();
    if (!(s.interval.start_seconds >= 0.0 && s.interval.start_seconds < s.interval.end_seconds &&
          s.interval.end_seconds <= duration)) {
      throw InputError(fmt::format("query {}: interval [{}, {}) outside video {} of {} s", s.query_id,
                                   s.interval.start_seconds, s.interval.end_seconds, s.video_id, duration));
    }
  }
}

Dataset load_dataset(const std::filesystem::path& annotations, const std::filesystem::path& features_dir,
                     const std::filesystem::path& vocab_path) {
  Dataset d;
  d.samples = load_annotations(annotations);
  d.vocab = Vocabulary::load(vocab_path);
  for (const auto& s : d.samples) {
    if (d.features.contains(s.video_id)) continue;
    const auto manifest = feature_manifest_path(features_dir, s.video_id);
    if (!std::filesystem::exists(manifest)) {
      throw InputError("missing feature file for video_id " + s.video_id + ": " + manifest.string());
    }
    d.features.emplace(s.video_id, load_clip_features(manifest));
  }
  d.validate();
  return d;
}

// ---- checkpoints -----------------------------------------------------------

json Checkpoint::manifest(const std::string& data_file) const {
  json params = json::array();
  for (std::size_t k = 0; k < names.size(); ++k) params.push_back({{"name", names[k]}, {"shape", shapes[k]}});
  return {{"format", "man-checkpoint-1"},
          {"epoch", epoch},
          {"adam_step", adam.step},
          {"rng_state", rng_state},
          {"hyperparameters", hp.to_json()},
          {"model", model.to_json()},
          {"parameters", params},
          {"layout", "per parameter in order: values, Adam first moment, Adam second moment"},
          {"data_file", data_file},
          {"provenance", provenance}};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (c.values.size() != c.names.size() || c.shapes.size() != c.names.size() ||
      c.adam.first_moment.size() != c.names.size() || c.adam.second_moment.size() != c.names.size()) {
    throw ContractError("save_checkpoint: inconsistent checkpoint");
  }
  std::vector<double> blob;
  for (std::size_t k = 0; k < c.names.size(); ++k) {
    blob.insert(blob.end(), c.values[k].begin(), c.values[k].end());
    blob.insert(blob.end(), c.adam.first_moment[k].begin(), c.adam.first_moment[k].end());
    blob.insert(blob.end(), c.adam.second_moment[k].begin(), c.adam.second_moment[k].end());
  }
  const std::string data_file = path.stem().string() + ".bin";
  write_file_atomic(path.parent_path() / data_file, encode_f64le(blob));
  write_file_atomic(path, c.manifest(data_file).dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("checkpoint not found: " + path.string());
  const json m = read_json(path);
  const std::string ctx = path.string();
  Checkpoint c;
  c.epoch = require_field<std::size_t>(m, "epoch", ctx);
  c.adam.step = require_field<std::size_t>(m, "adam_step", ctx);
  c.rng_state = require_field<std::string>(m, "rng_state", ctx);
  c.hp = HyperParams::from_json(require_field<json>(m, "hyperparameters", ctx));
  c.model = ModelConfig::from_json(require_field<json>(m, "model", ctx));
  c.provenance = m.contains("provenance") ? m["provenance"] : json();
  std::size_t total = 0;
  for (const auto& p : require_field<json>(m, "parameters", ctx)) {
    c.names.push_back(require_field<std::string>(p, "name", ctx));
    c.shapes.push_back(require_field<json>(p, "shape", ctx).get<Shape>());
    total += 3 * shape_numel(c.shapes.back());
  }
  const auto blob = read_f64le(path.parent_path() / require_field<std::string>(m, "data_file", ctx), total);
  auto cursor = blob.begin();
  auto take = [&](std::size_t n) {
    std::vector<double> v(cursor, cursor + static_cast<std::ptrdiff_t>(n));
    cursor += static_cast<std::ptrdiff_t>(n);
    return v;
  };
  for (const auto& shape : c.shapes) {
    const std::size_t n = shape_numel(shape);
    c.values.push_back(take(n));
    c.adam.first_moment.push_back(take(n));
    c.adam.second_moment.push_back(take(n));
  }
  return c;
}

std::string format_training_log(std::span<const EpochLog> log) {
  std::string out = "epoch,loss,rank1\n";
  for (const auto& e : log) {
    out += fmt::format("{},{:.17g},", e.epoch, e.loss);
    if (e.rank1 >= 0.0) out += fmt::format("{:.17g}", e.rank1);
    out += '\n';
  }
  return out;
}

// ---- trainer ---------------------------------------------------------------

namespace {

MomentAlignmentNet fresh_model(const HyperParams& hp, std::size_t feature_dim) {
  hp.validate();
  Rng init(Rng::derive(hp.seed, "init"));
  return MomentAlignmentNet(model_config(hp, feature_dim), init);
}

MomentAlignmentNet restored_model(const Checkpoint& c) {
  Rng unused(0);
  MomentAlignmentNet model(c.model, unused);
  const auto params = model.parameters();
  if (params.size() != c.names.size()) {
    throw InputError(fmt::format("checkpoint holds {} parameters, model expects {}", c.names.size(), params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].name != c.names[k] || params[k].tensor.shape() != c.shapes[k]) {
      throw InputError("checkpoint parameter " + c.names[k] + " " + shape_string(c.shapes[k]) +
                       " does not match model parameter " + params[k].name + " " +
                       shape_string(params[k].tensor.shape()));
    }
    Tensor t = params[k].tensor;
    std::ranges::copy(c.values[k], t.mutable_values().begin());
  }
  return model;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::ranges::max_element(v)));
}

}  // namespace

Trainer::Trainer(const Dataset& data, HyperParams hp)
    : data_(data),
      hp_(std::move(hp)),
      model_(fresh_model(hp_, data.feature_dim())),
      embeddings_(data.vocab, hp_.seed, model_.config().embedding_dim),
      adam_(AdamState::zeros(model_.parameters())),
      rng_(Rng::derive(hp_.seed, "shuffle")) {
  prepare();
}

Trainer::Trainer(const Dataset& data, const Checkpoint& checkpoint)
    : data_(data),
      hp_(checkpoint.hp),
      model_(restored_model(checkpoint)),
      embeddings_(data.vocab, hp_.seed, model_.config().embedding_dim),
      adam_(checkpoint.adam),
      epoch_(checkpoint.epoch) {
  rng_.set_state(checkpoint.rng_state);
  if (data.feature_dim() != model_.config().feature_dim) {
    throw InputError(fmt::format("features have dim {}, checkpoint expects {}", data.feature_dim(),
                                 model_.config().feature_dim));
  }
  prepare();
}

void Trainer::prepare() {
  data_.validate();
  const PyramidConfig& pyramid = model_.config().pyramid;
  prepared_.clear();
  prepared_.reserve(data_.samples.size());
  for (const auto& s : data_.samples) {
    Prepared p;
    p.ids = tokenize(s.query, data_.vocab);
    p.clip = &data_.features.at(s.video_id);
    if (p.clip->clips() != pyramid.clips) {
      throw InputError(fmt::format("video {} has {} clips, preset {} expects {}", s.video_id, p.clip->clips(),
                                   pyramid.name, pyramid.clips));
    }
    p.moments = enumerate_moments(pyramid, p.clip->duration_seconds());
    p.targets = assign_targets(p.moments, s.interval, hp_.negatives);
    for (const auto& m : p.moments) p.ious.push_back(temporal_iou({m.start_seconds, m.end_seconds}, s.interval));
    prepared_.push_back(std::move(p));
  }
}

double Trainer::step(std::span<const std::size_t> batch) {
  const auto params = model_.parameters();
  for (auto p : params) p.tensor.zero_grad();
  double loss_value = 0.0;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<MatchingScores> scores;
    std::vector<TargetAssignment> targets;
    for (std::size_t i : batch) {
      const Prepared& p = prepared_.at(i);
      scores.push_back(model_.forward(p.ids, p.clip->features, embeddings_).scores);
      targets.push_back(p.targets);
    }
    const Tensor loss = matching_loss(scores, targets);
    loss_value = loss.item();
    backward(loss);
  }
  adam_step(params, adam_, hp_);
  for (auto p : params) p.tensor.zero_grad();
  return loss_value;
}

double Trainer::train_epoch() {
  std::vector<std::size_t> order(prepared_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng_.shuffle(std::span(order));
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += hp_.batch) {
    const std::size_t end = std::min(order.size(), begin + hp_.batch);
    total += step(std::span(order).subspan(begin, end - begin));
    ++batches;
  }
  ++epoch_;
  return total / static_cast<double>(batches);
}

double Trainer::evaluate_loss() const {
  NoGradScope no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (const Prepared& p : prepared_) {
    const MatchingScores scores = model_.forward(p.ids, p.clip->features, embeddings_).scores;
    total += matching_loss(scores, p.targets).item() * static_cast<double>(p.targets.s.size());
    count += p.targets.s.size();
  }
  return total / static_cast<double>(count);
}

double Trainer::evaluate_rank1() const {
  NoGradScope no_grad;
  std::size_t hits = 0;
  for (const Prepared& p : prepared_) {
    const MatchingScores scores = model_.forward(p.ids, p.clip->features, embeddings_).scores;
    const double best = *std::ranges::max_element(p.ious);
    if (p.ious[argmax(scores.logits.values())] == best) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(prepared_.size());
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.hp = hp_;
  c.model = model_.config();
  for (const auto& p : model_.parameters()) {
    c.names.push_back(p.name);
    c.shapes.push_back(p.tensor.shape());
    c.values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  c.adam = adam_;
  c.rng_state = rng_.state();
  c.epoch = epoch_;
  return c;
}

std::vector<EpochLog> train(Trainer& trainer, const std::function<void(const EpochLog&)>& on_epoch) {
  const HyperParams& hp = trainer.hyper_params();
  std::vector<EpochLog> log;
  auto emit = [&](EpochLog entry) {
    if (hp.track_rank1) entry.rank1 = trainer.evaluate_rank1();
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  };
  if (trainer.epoch() == 0) emit({0, trainer.evaluate_loss(), -1.0});
  while (trainer.epoch() < hp.epochs) {
    const double loss = trainer.train_epoch();
    emit({trainer.epoch(), loss, -1.0});
  }
  return log;
}

RankedPrediction predict(const MomentAlignmentNet& model, const EmbeddingTable& embeddings,
                         const Vocabulary& vocab, const TrainingSample& sample, const ClipFeatures& clip) {
  NoGradScope no_grad;
  const PyramidConfig& pyramid = model.config().pyramid;
  if (clip.clips() != pyramid.clips) {
    throw InputError(fmt::format("video {} has {} clips, preset {} expects {}", clip.video_id, clip.clips(),
                                 pyramid.name, pyramid.clips));
  }
  const auto moments = enumerate_moments(pyramid, clip.duration_seconds());
  const auto pass = model.forward(tokenize(sample.query, vocab), clip.features, embeddings);
  return rank_moments(sample.query_id, moments, pass.scores.logits.values());
}

}  // namespace man

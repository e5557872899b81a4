#include "man/model.hpp"

#include <cmath>

#include "man/errors.hpp"

namespace man {

json ModelConfig::to_json() const {
  return {{"dim", dim},
          {"embedding_dim", embedding_dim},
          {"feature_dim", feature_dim},
          {"preset", pyramid.name},
          {"context_width", pyramid.context_width},
          {"igan_cells", igan_cells},
          {"feature_alignment", feature_alignment},
          {"diag_value", diag_value}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  const std::string ctx = "model config";
  ModelConfig c;
  c.dim = require_field<std::size_t>(j, "dim", ctx);
  c.embedding_dim = require_field<std::size_t>(j, "embedding_dim", ctx);
  c.feature_dim = require_field<std::size_t>(j, "feature_dim", ctx);
  c.pyramid = PyramidConfig::by_name(require_field<std::string>(j, "preset", ctx));
  c.pyramid.context_width = require_field<std::size_t>(j, "context_width", ctx);
  c.igan_cells = require_field<std::size_t>(j, "igan_cells", ctx);
  c.feature_alignment = require_field<bool>(j, "feature_alignment", ctx);
  c.diag_value = require_field<double>(j, "diag_value", ctx);
  return c;
}

MomentAlignmentNet::MomentAlignmentNet(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.dim == 0 || config_.feature_dim == 0 || config_.embedding_dim == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  config_.pyramid.validate();
  lstm_ = LstmParams::init(config_.embedding_dim, config_.dim, rng);
  filter_ = FilterParams::init(config_.dim, rng);
  if (config_.feature_dim != config_.dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config_.feature_dim));
    std::vector<double> kernel(config_.feature_dim * config_.dim);
    for (double& v : kernel) v = rng.uniform(-bound, bound);
    projection_ = PyramidParams::Stage{
        Tensor::parameter({1, config_.feature_dim, config_.dim}, std::move(kernel)),
        Tensor::parameter({config_.dim}, std::vector<double>(config_.dim, 0.0))};
  }
  pyramid_ = PyramidParams::init(config_.pyramid, config_.dim, rng);
  for (std::size_t t = 0; t < config_.igan_cells; ++t) cells_.push_back(IganCell::init(config_.dim, rng));
}

ForwardPass MomentAlignmentNet::forward(const std::vector<int>& ids, const Tensor& clip_features,
                                        const EmbeddingTable& embeddings) const {
  if (clip_features.dim() != 2 || clip_features.cols() != config_.feature_dim) {
    throw DimensionError("clip features " + shape_string(clip_features.shape()) +
                         " do not have feature_dim=" + std::to_string(config_.feature_dim) + " columns");
  }
  ForwardPass pass;
  pass.sentence = lstm_forward(ids, lstm_, embeddings);
  pass.filter = make_dynamic_filters(pass.sentence, filter_);

  Tensor visual = clip_features;
  if (projection_) {
    visual = add_row_vector(conv1d(visual, projection_->kernel, 1, Padding::kValid), projection_->bias);
  }
  if (config_.feature_alignment) {
    pass.aligned = align_features(visual, pass.filter);
    visual = pass.aligned->features;
  }
  pass.moments = build_pyramid(visual, config_.pyramid, pyramid_);
  if (cells_.empty()) {
    pass.graph = IganState{Tensor::identity(pass.moments.nodes.rows(), config_.diag_value),
                           pass.moments.nodes, 0};
  } else {
    pass.graph = igan_stack_forward(pass.moments.nodes, cells_, config_.diag_value);
  }
  pass.scores = score_moments(pass.graph.nodes, pass.filter);
  return pass;
}

std::vector<NamedParameter> MomentAlignmentNet::parameters() const {
  std::vector<NamedParameter> out = {
      {"lstm.input_weights", lstm_.input_weights},
      {"lstm.recurrent_weights", lstm_.recurrent_weights},
      {"lstm.bias", lstm_.bias},
      {"filter.kernel", filter_.kernel},
      {"filter.bias", filter_.bias},
  };
  if (projection_) {
    out.push_back({"projection.kernel", projection_->kernel});
    out.push_back({"projection.bias", projection_->bias});
  }
  for (std::size_t k = 0; k < pyramid_.stages.size(); ++k) {
    const std::string prefix = "pyramid.stage" + std::to_string(k + 1);
    out.push_back({prefix + ".kernel", pyramid_.stages[k].kernel});
    out.push_back({prefix + ".bias", pyramid_.stages[k].bias});
  }
  for (std::size_t t = 0; t < cells_.size(); ++t) {
    const std::string prefix = "igan.cell" + std::to_string(t + 1);
    out.push_back({prefix + ".residual_weight", cells_[t].residual_weight});
    out.push_back({prefix + ".output_weight", cells_[t].output_weight});
  }
  return out;
}

}  // namespace man

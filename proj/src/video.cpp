#include "man/video.hpp"

#include <cmath>

#include "man/errors.hpp"
#include "man/io.hpp"

namespace man {

// ---- feature files ---------------------------------------------------------

std::filesystem::path feature_manifest_path(const std::filesystem::path& dir,
                                            const std::string& video_id) {
  return dir / (video_id + ".json");
}

void save_clip_features(const std::filesystem::path& dir, const ClipFeatures& clip) {
  const std::string data_file = clip.video_id + ".bin";
  json manifest = {
      {"video_id", clip.video_id},
      {"T_f", clip.features.rows()},
      {"dim", clip.features.cols()},
      {"clip_duration_seconds", clip.clip_duration_seconds},
      {"data_file", data_file},
  };
  write_file_atomic(dir / data_file, encode_f64le(clip.features.values()));
  write_file_atomic(feature_manifest_path(dir, clip.video_id), manifest.dump(2) + "\n");
}

ClipFeatures load_clip_features(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) {
    throw InputError("feature manifest not found: " + manifest_path.string());
  }
  const json manifest = read_json(manifest_path);
  const std::string ctx = manifest_path.string();
  ClipFeatures clip;
  clip.video_id = require_field<std::string>(manifest, "video_id", ctx);
  const auto frames = require_field<std::size_t>(manifest, "T_f", ctx);
  const auto dim = require_field<std::size_t>(manifest, "dim", ctx);
  clip.clip_duration_seconds = require_field<double>(manifest, "clip_duration_seconds", ctx);
  if (frames == 0 || dim == 0) throw InputError(ctx + ": T_f and dim must be positive");
  if (!(clip.clip_duration_seconds > 0.0)) throw InputError(ctx + ": clip_duration_seconds must be positive");
  const auto data_file = require_field<std::string>(manifest, "data_file", ctx);
  auto values = read_f64le(manifest_path.parent_path() / data_file, frames * dim);
  clip.features = Tensor::from({frames, dim}, std::move(values));
  return clip;
}

// ---- pyramid geometry ------------------------------------------------------

PyramidConfig PyramidConfig::charades() {
  PyramidConfig c;
  c.name = "charades";
  c.kind = PyramidKind::kHalving;
  c.clips = 256;
  c.pool_stride = 16;
  c.layer_cells = {16, 8, 4, 2, 1};
  return c;
}

PyramidConfig PyramidConfig::didemo() {
  PyramidConfig c;
  c.name = "didemo";
  c.kind = PyramidKind::kSpans;
  c.clips = 240;
  c.pool_stride = 40;
  c.layer_cells = {6, 5, 4, 3, 2, 1};
  return c;
}

PyramidConfig PyramidConfig::by_name(const std::string& name) {
  if (name == "charades") return charades();
  if (name == "didemo") return didemo();
  throw ConfigError("unknown preset '" + name + "' (expected charades or didemo)");
}

std::size_t PyramidConfig::candidate_count() const {
  std::size_t n = 0;
  for (std::size_t t : layer_cells) n += t;
  return n;
}

void PyramidConfig::validate() const {
  const std::string ctx = "pyramid '" + name + "': ";
  if (clips == 0 || pool_stride == 0) throw ConfigError(ctx + "T_f and pooling stride must be positive");
  if (clips % pool_stride != 0) throw ConfigError(ctx + "T_f is not a multiple of the pooling stride");
  if (layer_cells.empty()) throw ConfigError(ctx + "no layers");
  if (layer_cells.front() != base_cells()) {
    throw ConfigError(ctx + "first layer has " + std::to_string(layer_cells.front()) +
                      " cells but pooling yields " + std::to_string(base_cells()));
  }
  if (context_width == 0) throw ConfigError(ctx + "context width must be positive");
  for (std::size_t k = 1; k < layer_cells.size(); ++k) {
    const std::size_t prev = layer_cells[k - 1];
    const std::size_t want = kind == PyramidKind::kHalving ? (prev >= 2 ? (prev - 2) / 2 + 1 : 0)
                                                           : prev - 1;
    if (layer_cells[k] != want || want == 0) {
      throw ConfigError(ctx + "layer " + std::to_string(k + 1) + " has " +
                        std::to_string(layer_cells[k]) + " cells, stage rule gives " +
                        std::to_string(want));
    }
    if (kind == PyramidKind::kHalving && clips % layer_cells[k] != 0) {
      throw ConfigError(ctx + "layer " + std::to_string(k + 1) + " does not tile T_f evenly");
    }
  }
}

LayerExtent PyramidConfig::extent(std::size_t layer) const {
  if (layer == 0 || layer > layer_cells.size()) {
    throw ConfigError("layer " + std::to_string(layer) + " outside pyramid '" + name + "'");
  }
  if (kind == PyramidKind::kHalving) {
    const std::size_t span = clips / layer_cells[layer - 1];
    return {span, span};
  }
  return {pool_stride, layer * pool_stride};
}

std::vector<CandidateMoment> enumerate_moments(const PyramidConfig& config, double duration_seconds) {
  config.validate();
  if (!(duration_seconds > 0.0)) throw InputError("enumerate_moments: duration must be positive");
  std::vector<CandidateMoment> out;
  out.reserve(config.candidate_count());
  const double clips = static_cast<double>(config.clips);
  for (std::size_t k = 1; k <= config.layers(); ++k) {
    const LayerExtent e = config.extent(k);
    for (std::size_t j = 0; j < config.layer_cells[k - 1]; ++j) {
      const double first = static_cast<double>(j * e.stride_clips);
      const double last = static_cast<double>(j * e.stride_clips + e.length_clips);
      out.push_back({k, j, duration_seconds * first / clips, duration_seconds * last / clips});
    }
  }
  return out;
}

// ---- alignment -------------------------------------------------------------

AlignedFeatures align_features(const Tensor& clip_features, const DynamicFilter& filter) {
  if (clip_features.dim() != 2 || clip_features.cols() != filter.dim()) {
    throw DimensionError("align_features: clip features " + shape_string(clip_features.shape()) +
                         " do not have d=" + std::to_string(filter.dim()) + " columns");
  }
  AlignedFeatures out;
  out.response = matmul(clip_features, transpose(filter.words));
  out.attention = softmax(row_sums(out.response));
  out.features = scale_rows(clip_features, out.attention);
  return out;
}

// ---- pyramid ---------------------------------------------------------------

PyramidParams PyramidParams::init(const PyramidConfig& config, std::size_t dim, Rng& rng) {
  config.validate();
  PyramidParams p;
  for (std::size_t k = 1; k <= config.layers(); ++k) {
    std::size_t width = config.context_width;
    if (k > 1) width = config.kind == PyramidKind::kHalving ? 3 : 2;
    const double bound = 1.0 / std::sqrt(static_cast<double>(width * dim));
    std::vector<double> kernel(width * dim * dim);
    for (double& v : kernel) v = rng.uniform(-bound, bound);
    p.stages.push_back({Tensor::parameter({width, dim, dim}, std::move(kernel)),
                        Tensor::parameter({dim}, std::vector<double>(dim, 0.0))});
  }
  return p;
}

MomentFeatures build_pyramid(const Tensor& features, const PyramidConfig& config,
                             const PyramidParams& params) {
  config.validate();
  if (features.dim() != 2 || features.rows() != config.clips) {
    throw DimensionError("build_pyramid: features " + shape_string(features.shape()) +
                         " do not match T_f=" + std::to_string(config.clips) + " of preset '" +
                         config.name + "'");
  }
  if (params.stages.size() != config.layers()) {
    throw ConfigError("build_pyramid: " + std::to_string(params.stages.size()) +
                      " parameter stages for " + std::to_string(config.layers()) + " layers");
  }
  auto stage = [&](const Tensor& x, std::size_t k, Padding padding) {
    const auto& s = params.stages[k];
    return relu(add_row_vector(conv1d(x, s.kernel, 1, padding), s.bias));
  };

  std::vector<Tensor> layers;
  Tensor current = max_pool1d(features, config.pool_stride, config.pool_stride);
  current = stage(current, 0, Padding::kSame);
  layers.push_back(current);
  for (std::size_t k = 1; k < config.layers(); ++k) {
    if (config.kind == PyramidKind::kHalving) {
      current = max_pool1d(stage(current, k, Padding::kSame), 2, 2);
    } else {
      current = stage(current, k, Padding::kValid);
    }
    layers.push_back(current);
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].rows() != config.layer_cells[k]) {
      throw ConfigError("build_pyramid: layer " + std::to_string(k + 1) + " produced " +
                        std::to_string(layers[k].rows()) + " cells, expected " +
                        std::to_string(config.layer_cells[k]));
    }
  }
  return MomentFeatures{concat_rows(layers)};
}

}  // namespace man

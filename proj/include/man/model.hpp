#pragma once

#include <optional>
#include <string>
#include <vector>

#include "man/igan.hpp"
#include "man/io.hpp"
#include "man/language.hpp"
#include "man/rng.hpp"
#include "man/video.hpp"

namespace man {

struct ModelConfig {
  std::size_t dim = 512;
  std::size_t embedding_dim = kEmbeddingDim;
  // Column count of the clip features on disk. When it differs from `dim` a
  // learned width-1 convolution projects features to `dim` before alignment.
  std::size_t feature_dim = 512;
  PyramidConfig pyramid = PyramidConfig::didemo();
  std::size_t igan_cells = 3;
  // false: clip features enter the pyramid without language alignment.
  bool feature_alignment = true;
  double diag_value = 1.0;

  json to_json() const;
  static ModelConfig from_json(const json& j);
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ForwardPass {
  SentenceEncoding sentence;
  DynamicFilter filter;
  std::optional<AlignedFeatures> aligned;
  MomentFeatures moments;
  IganState graph;  // G_0 / X_0 when the model has no cells
  MatchingScores scores;
};

// Language encoder -> feature alignment -> multi-scale pyramid -> IGAN stack
// -> filter-based matching scores.
class MomentAlignmentNet {
 public:
  // Initializes parameters from `rng` in the order listed by parameters().
  MomentAlignmentNet(ModelConfig config, Rng& rng);

  ForwardPass forward(const std::vector<int>& ids, const Tensor& clip_features,
                      const EmbeddingTable& embeddings) const;

  // Fixed order: lstm.{input_weights, recurrent_weights, bias},
  // filter.{kernel, bias}, [projection.{kernel, bias}],
  // pyramid.stageK.{kernel, bias} for K = 1.., igan.cellT.{residual_weight,
  // output_weight} for T = 1...
  std::vector<NamedParameter> parameters() const;

  const ModelConfig& config() const { return config_; }
  const LstmParams& lstm() const { return lstm_; }
  const FilterParams& filter() const { return filter_; }
  const PyramidParams& pyramid() const { return pyramid_; }
  const std::vector<IganCell>& cells() const { return cells_; }

 private:
  ModelConfig config_;
  LstmParams lstm_;
  FilterParams filter_;
  std::optional<PyramidParams::Stage> projection_;
  PyramidParams pyramid_;
  std::vector<IganCell> cells_;
};

}  // namespace man

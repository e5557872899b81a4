#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "man/language.hpp"
#include "man/rng.hpp"
#include "man/tensor.hpp"

namespace man {

// Clip-level visual features f_v for one video, [T_f x dim].
struct ClipFeatures {
  std::string video_id;
  Tensor features;
  double clip_duration_seconds = 1.0;

  std::size_t clips() const { return features.rows(); }
  double duration_seconds() const { return clip_duration_seconds * static_cast<double>(clips()); }
};

// Feature files: "<dir>/<video_id>.json" manifest
//   {video_id, T_f, dim, clip_duration_seconds, data_file}
// and a raw binary file of T_f*dim little-endian float64 values, row-major.
// data_file is resolved relative to the manifest's directory.
void save_clip_features(const std::filesystem::path& dir, const ClipFeatures& clip);
ClipFeatures load_clip_features(const std::filesystem::path& manifest_path);
std::filesystem::path feature_manifest_path(const std::filesystem::path& dir, const std::string& video_id);

enum class PyramidKind {
  // Each stage after the first halves the cell count (same conv + stride-2 pool).
  kHalving,
  // Each stage after the first is a width-2 valid conv: T_k = T_{k-1} - 1 and
  // layer k cell j covers base cells [j, j + k).
  kSpans,
};

struct LayerExtent {
  std::size_t stride_clips;  // start of cell j = j * stride_clips
  std::size_t length_clips;
};

struct PyramidConfig {
  std::string name;
  PyramidKind kind = PyramidKind::kSpans;
  std::size_t clips = 0;        // T_f
  std::size_t pool_stride = 1;  // p
  std::vector<std::size_t> layer_cells;
  // Width of the same-padded convolution that forms layer 1 from the pooled map.
  std::size_t context_width = 3;

  static PyramidConfig charades();  // T_f=256, p=16, {16,8,4,2,1}
  static PyramidConfig didemo();    // T_f=240, p=40, {6,5,4,3,2,1}
  static PyramidConfig by_name(const std::string& name);

  std::size_t base_cells() const { return clips / pool_stride; }
  std::size_t layers() const { return layer_cells.size(); }
  std::size_t candidate_count() const;
  LayerExtent extent(std::size_t layer) const;  // 1-based layer index
  void validate() const;
};

struct CandidateMoment {
  std::size_t layer = 0;  // 1-based
  std::size_t cell = 0;   // 0-based within the layer
  double start_seconds = 0.0;
  double end_seconds = 0.0;
};

// Layer-major enumeration, matching the row order of MomentFeatures.
std::vector<CandidateMoment> enumerate_moments(const PyramidConfig& config, double duration_seconds);

struct AlignedFeatures {
  Tensor response;   // M, [T_f x L]
  Tensor attention;  // M_norm, [T_f]
  Tensor features;   // f_v', [T_f x d]
};

// M = f_v Gamma; M_norm = softmax over clips of the word-summed responses;
// clip t of f_v is rescaled by M_norm[t].
AlignedFeatures align_features(const Tensor& clip_features, const DynamicFilter& filter);

struct PyramidParams {
  struct Stage {
    Tensor kernel;  // [width x d x d]
    Tensor bias;    // [d]
  };
  std::vector<Stage> stages;  // one per layer

  static PyramidParams init(const PyramidConfig& config, std::size_t dim, Rng& rng);
};

// f_m, [N x d], rows in enumerate_moments order.
struct MomentFeatures {
  Tensor nodes;
};

// Max-pool by p, then one conv+relu stage per layer. Layer 1 uses a
// same-padded conv of width context_width; later layers follow `kind`.
MomentFeatures build_pyramid(const Tensor& features, const PyramidConfig& config,
                             const PyramidParams& params);

}  // namespace man

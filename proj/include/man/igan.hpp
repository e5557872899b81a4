#pragma once

#include <span>
#include <vector>

#include "man/io.hpp"
#include "man/language.hpp"
#include "man/rng.hpp"
#include "man/tensor.hpp"
#include "man/video.hpp"

namespace man {

// One graph convolution over a fixed adjacency: relu(G X W).
Tensor gcn_forward(const Tensor& adjacency, const Tensor& nodes, const Tensor& weight);

// Parameters of one adjustment cell. Cells in a stack never share weights.
struct IganCell {
  Tensor residual_weight;  // W_r, [d x d]
  Tensor output_weight;    // W_o, [d x d]

  static IganCell init(std::size_t dim, Rng& rng);
};

struct IganState {
  Tensor adjacency;  // G_t, [N x N]
  Tensor nodes;      // X_t, [N x d]
  std::size_t step = 0;
};

// One step of the recurrence:
//   R_t = rownorm(signed_sqrt(X_{t-1} W_r X_{t-1}^T))
//   G_t = tanh(G_{t-1} + R_t)
//   X_t = relu(G_t X_0 W_o)
// The node update reads the original moment features X_0.
IganState igan_cell_forward(const IganState& previous, const Tensor& initial_nodes,
                            const IganCell& cell);

// G_0 = diag_value * I, X_0 = moment features; applies the cells in order.
IganState igan_stack_forward(const Tensor& moment_features, std::span<const IganCell> cells,
                             double diag_value = 1.0);

struct MatchingScores {
  Tensor logits;         // [N]
  Tensor probabilities;  // [N], sigmoid(logits)
};

// logit_i = mean over words w of <X_T row i, Gamma column w>.
MatchingScores score_moments(const Tensor& nodes, const DynamicFilter& filter);

// {"moments": [{layer, cell, start_seconds, end_seconds}], "adjacency": [[...]]}
json graph_to_json(std::span<const CandidateMoment> moments, const Tensor& adjacency);

}  // namespace man

#include "man/igan.hpp"

#include <cmath>

#include "man/errors.hpp"

namespace man {

Tensor gcn_forward(const Tensor& adjacency, const Tensor& nodes, const Tensor& weight) {
  if (adjacency.dim() != 2 || adjacency.rows() != adjacency.cols() ||
      adjacency.rows() != nodes.rows()) {
    throw DimensionError("gcn_forward: adjacency " + shape_string(adjacency.shape()) +
                         " does not match nodes " + shape_string(nodes.shape()));
  }
  return relu(matmul(matmul(adjacency, nodes), weight));
}

IganCell IganCell::init(std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  auto draw = [&] {
    std::vector<double> v(dim * dim);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::parameter({dim, dim}, std::move(v));
  };
  IganCell cell;
  cell.residual_weight = draw();
  cell.output_weight = draw();
  return cell;
}

IganState igan_cell_forward(const IganState& previous, const Tensor& initial_nodes,
                            const IganCell& cell) {
  const Tensor& x = previous.nodes;
  const std::size_t n = initial_nodes.rows();
  if (x.rows() != n || previous.adjacency.rows() != n || previous.adjacency.cols() != n) {
    throw DimensionError("igan_cell_forward: state " + shape_string(previous.adjacency.shape()) +
                         "/" + shape_string(x.shape()) + " does not match " +
                         std::to_string(n) + " nodes");
  }
  const Tensor correlation = matmul(matmul(x, cell.residual_weight), transpose(x));
  const Tensor residual = l2_normalize_rows(signed_sqrt(correlation));
  IganState next;
  next.adjacency = tanh(add(previous.adjacency, residual));
  next.nodes = relu(matmul(matmul(next.adjacency, initial_nodes), cell.output_weight));
  next.step = previous.step + 1;
  return next;
}

IganState igan_stack_forward(const Tensor& moment_features, std::span<const IganCell> cells,
                             double diag_value) {
  if (cells.empty()) throw ConfigError("igan_stack_forward: at least one cell is required");
  IganState state{Tensor::identity(moment_features.rows(), diag_value), moment_features, 0};
  for (const IganCell& cell : cells) state = igan_cell_forward(state, moment_features, cell);
  return state;
}

MatchingScores score_moments(const Tensor& nodes, const DynamicFilter& filter) {
  if (nodes.dim() != 2 || nodes.cols() != filter.dim()) {
    throw DimensionError("score_moments: nodes " + shape_string(nodes.shape()) +
                         " incompatible with filters of d=" + std::to_string(filter.dim()));
  }
  const Tensor query = reshape(column_means(filter.words), {filter.dim(), 1});
  MatchingScores scores;
  scores.logits = reshape(matmul(nodes, query), {nodes.rows()});
  scores.probabilities = sigmoid(scores.logits);
  return scores;
}

json graph_to_json(std::span<const CandidateMoment> moments, const Tensor& adjacency) {
  if (adjacency.rows() != moments.size()) {
    throw DimensionError("graph_to_json: " + std::to_string(moments.size()) + " moments for adjacency " +
                         shape_string(adjacency.shape()));
  }
  json out;
  out["moments"] = json::array();
  for (const auto& m : moments) {
    out["moments"].push_back({{"layer", m.layer},
                              {"cell", m.cell},
                              {"start_seconds", m.start_seconds},
                              {"end_seconds", m.end_seconds}});
  }
  out["adjacency"] = json::array();
  for (std::size_t i = 0; i < adjacency.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < adjacency.cols(); ++j) row.push_back(adjacency.at(i, j));
    out["adjacency"].push_back(std::move(row));
  }
  return out;
}

}  // namespace man

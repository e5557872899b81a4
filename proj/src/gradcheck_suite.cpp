#include "man/gradcheck_suite.hpp"

#include <functional>
#include <vector>

#include "man/errors.hpp"
#include "man/igan.hpp"
#include "man/language.hpp"
#include "man/model.hpp"
#include "man/rng.hpp"
#include "man/trainer.hpp"
#include "man/video.hpp"

namespace man {

namespace {

constexpr std::size_t kClips = 4;
constexpr std::size_t kWords = 3;
constexpr std::size_t kDim = 8;
constexpr std::size_t kEmbed = 6;
constexpr std::size_t kMaxAttempts = 200;

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar probe <w, out> with w drawn once per instance.
struct Probe {
  Tensor weights;
  Tensor operator()(const Tensor& out) const { return sum(mul(reshape(out, weights.shape()), weights)); }
};

Probe probe_for(Rng& rng, std::size_t numel) { return Probe{random(rng, {numel})}; }

struct Instance {
  std::vector<Tensor> inputs;
  std::function<Tensor()> program;
};

using Builder = std::function<Instance(Rng&)>;

// Output shape is unknown until the program runs once, so the probe is
// created lazily and then reused by every evaluation.
Instance probed(Rng& rng, std::vector<Tensor> inputs, std::function<Tensor()> output) {
  auto probe = std::make_shared<std::optional<Probe>>();
  Rng probe_rng(rng.next_u64());
  return Instance{std::move(inputs), [probe, probe_rng, output]() mutable {
                    Tensor out = output();
                    if (!*probe) *probe = probe_for(probe_rng, out.numel());
                    return (**probe)(out);
                  }};
}

Instance unary(Rng& rng, Shape shape, std::function<Tensor(const Tensor&)> f, double lo = -1.0,
               double hi = 1.0) {
  Tensor x = random(rng, std::move(shape), lo, hi);
  return probed(rng, {x}, [x, f] { return f(x); });
}

Instance binary(Rng& rng, Shape a_shape, Shape b_shape, std::function<Tensor(const Tensor&, const Tensor&)> f) {
  Tensor a = random(rng, std::move(a_shape));
  Tensor b = random(rng, std::move(b_shape));
  return probed(rng, {a, b}, [a, b, f] { return f(a, b); });
}

Vocabulary micro_vocab() { return Vocabulary({"<unk>", "jump", "the", "second", "time"}); }
const std::vector<int> kIds = {1, 2, 3};

PyramidConfig spans_micro() {
  PyramidConfig c;
  c.name = "spans-micro";
  c.kind = PyramidKind::kSpans;
  c.clips = kClips;
  c.pool_stride = 2;
  c.layer_cells = {2, 1};
  return c;
}

PyramidConfig halving_micro() {
  PyramidConfig c;
  c.name = "halving-micro";
  c.kind = PyramidKind::kHalving;
  c.clips = kClips;
  c.pool_stride = 2;
  c.layer_cells = {2, 1};
  return c;
}

std::vector<Tensor> lstm_inputs(const LstmParams& p) { return {p.input_weights, p.recurrent_weights, p.bias}; }

Instance lstm_instance(Rng& rng) {
  auto table = std::make_shared<EmbeddingTable>(micro_vocab(), rng.next_u64(), kEmbed, 1.0);
  LstmParams p = LstmParams::init(kEmbed, kDim, rng);
  // Larger weights than the default init so every gate is exercised.
  for (Tensor t : lstm_inputs(p)) {
    for (double& v : t.mutable_values()) v *= 3.0;
  }
  return probed(rng, lstm_inputs(p), [p, table] { return lstm_forward(kIds, p, *table).states; });
}

Instance filter_instance(Rng& rng) {
  Tensor states = random(rng, {kWords, kDim});
  FilterParams f = FilterParams::init(kDim, rng);
  return probed(rng, {states, f.kernel, f.bias},
                [states, f] { return make_dynamic_filters(SentenceEncoding{states}, f).words; });
}

Instance align_instance(Rng& rng) {
  Tensor clips = random(rng, {kClips, kDim});
  Tensor words = random(rng, {kWords, kDim});
  return probed(rng, {clips, words}, [clips, words] { return align_features(clips, DynamicFilter{words}).features; });
}

Instance pyramid_instance(Rng& rng, const PyramidConfig& config) {
  Tensor clips = random(rng, {kClips, kDim});
  PyramidParams params = PyramidParams::init(config, kDim, rng);
  std::vector<Tensor> inputs = {clips};
  for (auto& s : params.stages) {
    // Mostly active relus; ties between dead units would pin the max-pool margin at 0.
    for (double& b : s.bias.mutable_values()) b = rng.uniform(0.5, 1.5);
    inputs.push_back(s.kernel);
    inputs.push_back(s.bias);
  }
  return probed(rng, inputs, [clips, params, config] { return build_pyramid(clips, config, params).nodes; });
}

Instance igan_cell_instance(Rng& rng) {
  const std::size_t n = 3;
  Tensor x0 = random(rng, {n, kDim});
  Tensor g0 = random(rng, {n, n});
  IganCell cell = IganCell::init(kDim, rng);
  return probed(rng, {x0, g0, cell.residual_weight, cell.output_weight}, [x0, g0, cell] {
    const IganState s = igan_cell_forward(IganState{g0, x0, 0}, x0, cell);
    return concat_rows(std::vector<Tensor>{reshape(s.adjacency, {s.adjacency.numel(), 1}),
                                           reshape(s.nodes, {s.nodes.numel(), 1})});
  });
}

Instance igan_stack_instance(Rng& rng) {
  const std::size_t n = 3;
  Tensor x0 = random(rng, {n, kDim}, -2.0, 2.0);
  std::vector<IganCell> cells;
  std::vector<Tensor> inputs = {x0};
  for (int t = 0; t < 3; ++t) {
    cells.push_back(IganCell::init(kDim, rng));
    inputs.push_back(cells.back().residual_weight);
    inputs.push_back(cells.back().output_weight);
  }
  return probed(rng, inputs, [x0, cells] { return igan_stack_forward(x0, cells).nodes; });
}

Instance score_instance(Rng& rng) {
  Tensor nodes = random(rng, {3, kDim});
  Tensor words = random(rng, {kWords, kDim});
  return probed(rng, {nodes, words}, [nodes, words] { return score_moments(nodes, DynamicFilter{words}).logits; });
}

Instance loss_instance(Rng& rng) {
  Tensor logits = random(rng, {5}, -3.0, 3.0);
  std::vector<double> s = {0.0, 1.0, 0.75, 0.0, 0.6};
  return Instance{{logits}, [logits, s] { return matching_loss(MatchingScores{logits, sigmoid(logits)}, {s}); }};
}

// The composed forward pass of a micro model and the matching loss against
// targets of a ground truth that overlaps several candidates.
Instance model_instance(Rng& rng, const PyramidConfig& pyramid, bool alignment) {
  ModelConfig config;
  config.dim = kDim;
  config.embedding_dim = kEmbed;
  config.feature_dim = kDim;
  config.pyramid = pyramid;
  config.igan_cells = 3;
  config.feature_alignment = alignment;
  auto model = std::make_shared<MomentAlignmentNet>(config, rng);
  // Embeddings of order one keep the gradients of the LSTM input weights
  // far above finite-difference roundoff.
  auto table = std::make_shared<EmbeddingTable>(micro_vocab(), rng.next_u64(), kEmbed, 1.0);
  for (auto& p : model->parameters()) {
    if (p.name.starts_with("pyramid") && p.name.ends_with("bias")) {
      Tensor t = p.tensor;
      for (double& v : t.mutable_values()) v = rng.uniform(0.5, 1.5);
    }
  }
  Tensor clips = random(rng, {kClips, kDim});
  const auto moments = enumerate_moments(pyramid, 4.0);
  const TargetAssignment targets = assign_targets(moments, {1.0, 3.0}, NegativeTargets::kIoU);
  std::vector<Tensor> inputs = {clips};
  for (const auto& p : model->parameters()) inputs.push_back(p.tensor);
  return Instance{inputs, [model, table, clips, targets] {
                    return matching_loss(model->forward(kIds, clips, *table).scores, targets);
                  }};
}

struct Component {
  std::string name;
  Builder build;
};

std::vector<Component> components() {
  using T = const Tensor&;
  return {
      {"matmul", [](Rng& r) { return binary(r, {3, 4}, {4, 2}, [](T a, T b) { return matmul(a, b); }); }},
      {"transpose", [](Rng& r) { return unary(r, {3, 2}, [](T x) { return transpose(x); }); }},
      {"reshape", [](Rng& r) { return unary(r, {3, 2}, [](T x) { return reshape(x, {2, 3}); }); }},
      {"add", [](Rng& r) { return binary(r, {2, 3}, {2, 3}, [](T a, T b) { return add(a, b); }); }},
      {"sub", [](Rng& r) { return binary(r, {2, 3}, {2, 3}, [](T a, T b) { return sub(a, b); }); }},
      {"mul", [](Rng& r) { return binary(r, {2, 3}, {2, 3}, [](T a, T b) { return mul(a, b); }); }},
      {"scale", [](Rng& r) { return unary(r, {2, 3}, [](T x) { return scale(x, -1.7); }); }},
      {"add_row_vector", [](Rng& r) { return binary(r, {3, 4}, {4}, [](T a, T b) { return add_row_vector(a, b); }); }},
      {"sum", [](Rng& r) { return unary(r, {2, 3}, [](T x) { return sum(x); }); }},
      {"mean", [](Rng& r) { return unary(r, {2, 3}, [](T x) { return mean(x); }); }},
      {"row_sums", [](Rng& r) { return unary(r, {3, 4}, [](T x) { return row_sums(x); }); }},
      {"column_means", [](Rng& r) { return unary(r, {3, 4}, [](T x) { return column_means(x); }); }},
      {"scale_rows", [](Rng& r) { return binary(r, {3, 4}, {3}, [](T a, T b) { return scale_rows(a, b); }); }},
      {"softmax", [](Rng& r) { return unary(r, {5}, [](T x) { return softmax(x); }, -2.0, 2.0); }},
      {"tanh", [](Rng& r) { return unary(r, {2, 4}, [](T x) { return tanh(x); }, -2.0, 2.0); }},
      {"sigmoid", [](Rng& r) { return unary(r, {2, 4}, [](T x) { return sigmoid(x); }, -3.0, 3.0); }},
      {"relu", [](Rng& r) { return unary(r, {2, 4}, [](T x) { return relu(x); }); }},
      {"signed_sqrt", [](Rng& r) { return unary(r, {2, 4}, [](T x) { return signed_sqrt(x); }); }},
      {"l2_normalize_rows", [](Rng& r) { return unary(r, {3, 4}, [](T x) { return l2_normalize_rows(x); }); }},
      {"conv1d_same",
       [](Rng& r) {
         return binary(r, {kClips, 3}, {3, 3, 2}, [](T x, T k) { return conv1d(x, k, 1, Padding::kSame); });
       }},
      {"conv1d_valid_stride2",
       [](Rng& r) {
         return binary(r, {5, 3}, {2, 3, 2}, [](T x, T k) { return conv1d(x, k, 2, Padding::kValid); });
       }},
      {"max_pool1d", [](Rng& r) { return unary(r, {6, 3}, [](T x) { return max_pool1d(x, 2, 2); }); }},
      {"concat_rows",
       [](Rng& r) {
         return binary(r, {2, 3}, {1, 3}, [](T a, T b) { return concat_rows(std::vector<Tensor>{a, b}); });
       }},
      {"slice_rows", [](Rng& r) { return unary(r, {4, 3}, [](T x) { return slice_rows(x, 1, 3); }); }},
      {"slice_cols", [](Rng& r) { return unary(r, {3, 4}, [](T x) { return slice_cols(x, 1, 3); }); }},
      {"sigmoid_cross_entropy",
       [](Rng& r) {
         Tensor z = random(r, {4}, -4.0, 4.0);
         std::vector<double> s = {0.0, 1.0, 0.3, 0.8};
         return Instance{{z}, [z, s] { return sigmoid_cross_entropy_sum(z, s); }};
       }},
      {"lstm", lstm_instance},
      {"dynamic_filter", filter_instance},
      {"feature_alignment", align_instance},
      {"pyramid_spans", [](Rng& r) { return pyramid_instance(r, spans_micro()); }},
      {"pyramid_halving", [](Rng& r) { return pyramid_instance(r, halving_micro()); }},
      {"gcn",
       [](Rng& r) {
         Tensor g = random(r, {3, 3});
         Tensor x = random(r, {3, kDim});
         Tensor w = random(r, {kDim, kDim});
         return probed(r, {g, x, w}, [g, x, w] { return gcn_forward(g, x, w); });
       }},
      {"igan_cell", igan_cell_instance},
      {"igan_stack", igan_stack_instance},
      {"matching_scores", score_instance},
      {"matching_loss", loss_instance},
      {"model_loss_spans", [](Rng& r) { return model_instance(r, spans_micro(), true); }},
      {"model_loss_halving", [](Rng& r) { return model_instance(r, halving_micro(), true); }},
      {"model_loss_no_alignment", [](Rng& r) { return model_instance(r, spans_micro(), false); }},
  };
}

}  // namespace

std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<ComponentCheck> out;
  for (const Component& c : components()) {
    ComponentCheck check;
    check.component = c.name;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw NumericError("gradient check of " + c.name + " found no draw clear of kinks");
      }
      Rng rng(Rng::derive(seed, c.name + "/" + std::to_string(attempt)));
      Instance instance = c.build(rng);
      check.result = finite_difference_check(instance.program, instance.inputs, kGradCheckStep);
      check.attempts = attempt + 1;
      if (check.result.kink_margin >= kGradCheckKinkMargin &&
          check.result.singular_margin >= kGradCheckSingularMargin) {
        break;
      }
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace man

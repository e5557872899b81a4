#pragma once

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// Operations record themselves on the thread's active Tape when at least one
// operand requires a gradient. Without an active tape (or without any
// gradient-requiring operand) they are plain forward computations.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace man {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool leaf = true;  // false for recorded op outputs
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n, double diag = 1.0);
  // Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const { return size(0); }
  std::size_t cols() const { return size(1); }

  std::span<const double> values() const;
  // In-place access for leaves (optimizer updates, finite differences).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad);
};

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad);

// Recorded primitive applications, swept once in reverse by backward().
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
              std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Smallest distance to a non-differentiable point (relu at 0, max-pool
  // ties) seen during recording. Gradient checks use it to reject inputs
  // sitting on a kink.
  double kink_margin() const { return kink_margin_; }
  void note_kink(double distance);
  // Smallest |v| fed to signed_sqrt, whose curvature grows like |v|^(-3/2).
  double singular_margin() const { return singular_margin_; }
  void note_singularity(double distance);

 private:
  std::vector<Node> nodes_;
  double kink_margin_ = 1e300;
  double singular_margin_ = 1e300;
  bool consumed_ = false;
};

Tape* active_tape();

// Installs a tape as the thread's active tape for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording (evaluation passes, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Reverse sweep on the active tape, seeding d(loss)/d(loss) = 1.
void backward(const Tensor& loss);

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m x n] + bias broadcast over rows; bias has n elements.
Tensor add_row_vector(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [m x n] -> [m], summing each row.
Tensor row_sums(const Tensor& a);
// [m x n] -> [n], averaging over rows.
Tensor column_means(const Tensor& a);
// Row r of x[m x n] multiplied by w[r], w has m elements.
Tensor scale_rows(const Tensor& x, const Tensor& w);

Tensor softmax(const Tensor& x);

enum class Activation { kTanh, kSigmoid, kRelu, kSignedSqrt };
Tensor elementwise(Activation f, const Tensor& x);
inline Tensor tanh(const Tensor& x) { return elementwise(Activation::kTanh, x); }
inline Tensor sigmoid(const Tensor& x) { return elementwise(Activation::kSigmoid, x); }
inline Tensor relu(const Tensor& x) { return elementwise(Activation::kRelu, x); }
inline Tensor signed_sqrt(const Tensor& x) { return elementwise(Activation::kSignedSqrt, x); }

// signed_sqrt derivative cap: |v| is floored here before 1/(2 sqrt|v|).
inline constexpr double kSignedSqrtFloor = 2.5e-13;
inline constexpr double kRowNormEpsilon = 1e-12;

// Each row divided by max(||row||_2, 1e-12).
Tensor l2_normalize_rows(const Tensor& x);

enum class Padding { kSame, kValid };
// x[T x c_in], kernels[w x c_in x c_out] -> [T' x c_out] (cross-correlation).
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, Padding padding);
// x[T x c] -> [T' x c], first maximum wins ties.
Tensor max_pool1d(const Tensor& x, std::size_t window, std::size_t stride);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

// Sum over i of -[s_i log sigmoid(z_i) + (1 - s_i) log(1 - sigmoid(z_i))],
// evaluated as max(z,0) - z s + log1p(exp(-|z|)).
Tensor sigmoid_cross_entropy_sum(const Tensor& logits, std::span<const double> targets);

}  // namespace man

#include "man/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "man/errors.hpp"

namespace man {

namespace {

thread_local Tape* g_active_tape = nullptr;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

std::vector<double>& grad_of(detail::TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.values.size(), 0.0);
  return impl.grad;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Builds an op output and, when tracking, records its backward rule.
Tensor finish(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
              Tape::BackwardFn fn) {
  const bool track = tracking(inputs);
  Tensor out = make_tensor(std::move(shape), std::move(values), track);
  if (track) {
    std::vector<ImplPtr> in;
    in.reserve(inputs.size());
    for (const Tensor* t : inputs) in.push_back(t->impl());
    out.impl()->leaf = false;
    g_active_tape->record(std::move(in), out.impl(), std::move(fn));
  }
  return out;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

bool wants_grad(const ImplPtr& impl) { return impl->requires_grad; }

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ----------------------------------------------------------------

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (std::size_t s : shape) {
    if (s == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), false);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values), false);
}

Tensor Tensor::scalar(double value) { return make_tensor({1}, {value}, false); }

Tensor Tensor::identity(std::size_t n, double diag) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = diag;
  return make_tensor({n, n}, std::move(v), false);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values), true);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const { return values()[i * cols() + j]; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return make_tensor(shape(), impl_->values, false); }

// ---- Tape ------------------------------------------------------------------

void Tape::record(std::vector<ImplPtr> inputs, ImplPtr output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording on a tape that was already swept");
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::note_kink(double distance) { kink_margin_ = std::min(kink_margin_, distance); }
void Tape::note_singularity(double distance) { singular_margin_ = std::min(singular_margin_, distance); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward: tape already swept");
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the active tape");
  const ImplPtr& target = loss.impl();
  const bool recorded = std::any_of(nodes_.begin(), nodes_.end(),
                                    [&](const Node& n) { return n.output == target; });
  if (!recorded && !target->leaf) throw ContractError("backward: loss is not on the active tape");
  grad_of(*target)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  consumed_ = true;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  if (g_active_tape == nullptr) throw ContractError("backward: no active tape");
  g_active_tape->backward(loss);
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish({m, n}, std::move(out), {&a, &b}, [ia, ib, m, k, n](std::span<const double> g) {
    const double* A = ia->values.data();
    const double* B = ib->values.data();
    if (wants_grad(ia)) {
      auto& ga = grad_of(*ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (wants_grad(ib)) {
      auto& gb = grad_of(*ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  ImplPtr ia = a.impl();
  return finish({n, m}, std::move(out), {&a}, [ia, m, n](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  ImplPtr ia = a.impl();
  std::vector<double> out(a.values().begin(), a.values().end());
  return finish(std::move(shape), std::move(out), {&a}, [ia](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---- elementwise arithmetic ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [ia, ib](std::span<const double> g) {
    for (const auto& in : {ia, ib}) {
      if (!wants_grad(in)) continue;
      auto& gi = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [ia, ib](std::span<const double> g) {
    if (wants_grad(ia)) {
      auto& ga = grad_of(*ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(ib)) {
      auto& gb = grad_of(*ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [ia, ib](std::span<const double> g) {
    if (wants_grad(ia)) {
      auto& ga = grad_of(*ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ib->values[i];
    }
    if (wants_grad(ib)) {
      auto& gb = grad_of(*ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ia->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  ImplPtr ia = a.impl();
  return finish(a.shape(), std::move(out), {&a}, [ia, factor](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_row_vector");
  require_defined(bias, "add_row_vector");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row_vector: bias " + shape_string(bias.shape()) +
                         " does not match columns of " + shape_string(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto b = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  ImplPtr ia = a.impl(), ib = bias.impl();
  return finish({m, n}, std::move(out), {&a, &bias}, [ia, ib, m, n](std::span<const double> g) {
    if (wants_grad(ia)) {
      auto& ga = grad_of(*ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(ib)) {
      auto& gb = grad_of(*ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const auto v = a.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  ImplPtr ia = a.impl();
  return finish({1}, {s}, {&a}, [ia](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (double& x : ga) x += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor row_sums(const Tensor& a) {
  require_matrix(a, "row_sums");
  const std::size_t m = a.rows(), n = a.cols();
  const auto v = a.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += v[i * n + j];
  ImplPtr ia = a.impl();
  return finish({m}, std::move(out), {&a}, [ia, m, n](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
  });
}

Tensor column_means(const Tensor& a) {
  require_matrix(a, "column_means");
  const std::size_t m = a.rows(), n = a.cols();
  const auto v = a.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& x : out) x *= inv;
  ImplPtr ia = a.impl();
  return finish({n}, std::move(out), {&a}, [ia, m, n, inv](std::span<const double> g) {
    auto& ga = grad_of(*ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  require_matrix(x, "scale_rows");
  require_defined(w, "scale_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (w.numel() != m) {
    throw DimensionError("scale_rows: weights " + shape_string(w.shape()) + " for matrix " +
                         shape_string(x.shape()));
  }
  const auto xv = x.values(), wv = w.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * wv[i];
  ImplPtr ix = x.impl(), iw = w.impl();
  return finish({m, n}, std::move(out), {&x, &w}, [ix, iw, m, n](std::span<const double> g) {
    if (wants_grad(ix)) {
      auto& gx = grad_of(*ix);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * iw->values[i];
    }
    if (wants_grad(iw)) {
      auto& gw = grad_of(*iw);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * ix->values[i * n + j];
        gw[i] += acc;
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  if (x.dim() != 1) throw DimensionError("softmax: expected a vector, got " + shape_string(x.shape()));
  const auto v = x.values();
  const double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - hi);
    total += out[i];
  }
  for (double& o : out) o /= total;
  ImplPtr ix = x.impl();
  std::vector<double> y = out;
  return finish(x.shape(), std::move(out), {&x}, [ix, y = std::move(y)](std::span<const double> g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    auto& gx = grad_of(*ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
  });
}

// ---- nonlinearities --------------------------------------------------------

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor elementwise(Activation f, const Tensor& x) {
  require_defined(x, "elementwise");
  const auto v = x.values();
  std::vector<double> out(v.size());
  std::vector<double> deriv(v.size());
  double margin = 1e300;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = v[i];
    switch (f) {
      case Activation::kTanh:
        out[i] = std::tanh(a);
        deriv[i] = 1.0 - out[i] * out[i];
        break;
      case Activation::kSigmoid:
        out[i] = stable_sigmoid(a);
        deriv[i] = out[i] * (1.0 - out[i]);
        break;
      case Activation::kRelu:
        out[i] = a > 0.0 ? a : 0.0;
        deriv[i] = a > 0.0 ? 1.0 : 0.0;
        margin = std::min(margin, std::abs(a));
        break;
      case Activation::kSignedSqrt: {
        const double mag = std::abs(a);
        out[i] = a > 0.0 ? std::sqrt(mag) : (a < 0.0 ? -std::sqrt(mag) : 0.0);
        deriv[i] = 0.5 / std::sqrt(std::max(mag, kSignedSqrtFloor));
        margin = std::min(margin, mag);
        break;
      }
    }
  }

  ImplPtr ix = x.impl();
  Tensor out_t = finish(x.shape(), std::move(out), {&x},
                        [ix, d = std::move(deriv)](std::span<const double> g) {
                          auto& gx = grad_of(*ix);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d[i];
                        });
  if (out_t.requires_grad() && f == Activation::kRelu) g_active_tape->note_kink(margin);
  if (out_t.requires_grad() && f == Activation::kSignedSqrt) g_active_tape->note_singularity(margin);
  return out_t;
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const auto v = x.values();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += v[i * n + j] * v[i * n + j];
    norms[i] = std::sqrt(sq);
    const double denom = std::max(norms[i], kRowNormEpsilon);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i * n + j] / denom;
  }
  ImplPtr ix = x.impl();
  std::vector<double> y = out;
  return finish({m, n}, std::move(out), {&x},
                [ix, m, n, norms = std::move(norms), y = std::move(y)](std::span<const double> g) {
                  auto& gx = grad_of(*ix);
                  for (std::size_t i = 0; i < m; ++i) {
                    if (norms[i] > kRowNormEpsilon) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        gx[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / norms[i];
                    } else {
                      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] / kRowNormEpsilon;
                    }
                  }
                });
}

// ---- temporal convolution and pooling ------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, Padding padding) {
  require_matrix(x, "conv1d");
  require_defined(kernels, "conv1d");
  if (kernels.dim() != 3) {
    throw DimensionError("conv1d: kernels must be [width x c_in x c_out], got " +
                         shape_string(kernels.shape()));
  }
  if (stride == 0) throw DimensionError("conv1d: stride must be positive");
  const std::size_t T = x.rows(), cin = x.cols();
  const std::size_t w = kernels.size(0), kin = kernels.size(1), cout = kernels.size(2);
  if (kin != cin) {
    throw DimensionError("conv1d: input " + shape_string(x.shape()) + " has " + std::to_string(cin) +
                         " channels, kernels " + shape_string(kernels.shape()) + " expect " +
                         std::to_string(kin));
  }
  const std::size_t pad_total = padding == Padding::kSame ? w - 1 : 0;
  const std::size_t left = pad_total / 2;
  if (w > T + pad_total) {
    throw DimensionError("conv1d: kernel width " + std::to_string(w) +
                         " exceeds padded input length " + std::to_string(T + pad_total));
  }
  const std::size_t Tout = (T + pad_total - w) / stride + 1;
  const double* X = x.values().data();
  const double* K = kernels.values().data();
  std::vector<double> out(Tout * cout, 0.0);
  for (std::size_t t = 0; t < Tout; ++t) {
    double* orow = out.data() + t * cout;
    for (std::size_t o = 0; o < w; ++o) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + o) -
                                 static_cast<std::ptrdiff_t>(left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xv = X[static_cast<std::size_t>(src) * cin + ci];
        if (xv == 0.0) continue;
        const double* krow = K + (o * cin + ci) * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * krow[co];
      }
    }
  }
  ImplPtr ix = x.impl(), ik = kernels.impl();
  return finish({Tout, cout}, std::move(out), {&x, &kernels},
                [ix, ik, T, cin, cout, w, stride, left, Tout](std::span<const double> g) {
                  const double* X = ix->values.data();
                  const double* K = ik->values.data();
                  std::vector<double>* gx = wants_grad(ix) ? &grad_of(*ix) : nullptr;
                  std::vector<double>* gk = wants_grad(ik) ? &grad_of(*ik) : nullptr;
                  for (std::size_t t = 0; t < Tout; ++t) {
                    const double* grow = g.data() + t * cout;
                    for (std::size_t o = 0; o < w; ++o) {
                      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + o) -
                                                 static_cast<std::ptrdiff_t>(left);
                      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                      const std::size_t s = static_cast<std::size_t>(src);
                      for (std::size_t ci = 0; ci < cin; ++ci) {
                        const std::size_t kbase = (o * cin + ci) * cout;
                        if (gx) {
                          double acc = 0.0;
                          for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * K[kbase + co];
                          (*gx)[s * cin + ci] += acc;
                        }
                        if (gk) {
                          const double xv = X[s * cin + ci];
                          for (std::size_t co = 0; co < cout; ++co) (*gk)[kbase + co] += xv * grow[co];
                        }
                      }
                    }
                  }
                });
}

Tensor max_pool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_matrix(x, "max_pool1d");
  if (window == 0 || stride == 0) throw DimensionError("max_pool1d: window and stride must be positive");
  const std::size_t T = x.rows(), c = x.cols();
  if (window > T) {
    throw DimensionError("max_pool1d: window " + std::to_string(window) + " exceeds length " +
                         std::to_string(T));
  }
  const std::size_t Tout = (T - window) / stride + 1;
  const auto v = x.values();
  std::vector<double> out(Tout * c);
  std::vector<std::size_t> argmax(Tout * c);
  double margin = 1e300;
  for (std::size_t t = 0; t < Tout; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = t * stride;
      double top = v[best * c + ch];
      double second = -std::numeric_limits<double>::infinity();
      for (std::size_t s = t * stride + 1; s < t * stride + window; ++s) {
        const double val = v[s * c + ch];
        if (val > top) {
          second = top;
          top = val;
          best = s;
        } else if (val > second) {
          second = val;
        }
      }
      out[t * c + ch] = top;
      argmax[t * c + ch] = best;
      if (window > 1) margin = std::min(margin, top - second);
    }
  }
  ImplPtr ix = x.impl();
  Tensor result = finish({Tout, c}, std::move(out), {&x},
                         [ix, c, idx = std::move(argmax)](std::span<const double> g) {
                           auto& gx = grad_of(*ix);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[idx[i] * c + i % c] += g[i];
                         });
  if (result.requires_grad()) g_active_tape->note_kink(margin);
  return result;
}

// ---- structural ------------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().dim() == 2 ? parts.front().cols() : 0;
  std::size_t m = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    m += p.rows();
    track = track || p.requires_grad();
  }
  track = track && g_active_tape != nullptr;
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<ImplPtr> inputs;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    inputs.push_back(p.impl());
  }
  Tensor result = make_tensor({m, n}, std::move(out), track);
  if (track) {
    result.impl()->leaf = false;
    auto captured = inputs;
    g_active_tape->record(std::move(inputs), result.impl(), [captured](std::span<const double> g) {
      std::size_t offset = 0;
      for (const auto& in : captured) {
        const std::size_t len = in->values.size();
        if (wants_grad(in)) {
          auto& gi = grad_of(*in);
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[offset + i];
        }
        offset += len;
      }
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t n = x.cols();
  const auto v = x.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          v.begin() + static_cast<std::ptrdiff_t>(end * n));
  ImplPtr ix = x.impl();
  return finish({end - begin, n}, std::move(out), {&x}, [ix, begin, n](std::span<const double> g) {
    auto& gx = grad_of(*ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  if (begin >= end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  const auto v = x.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = v[i * n + begin + j];
  ImplPtr ix = x.impl();
  return finish({m, w}, std::move(out), {&x}, [ix, m, n, w, begin](std::span<const double> g) {
    auto& gx = grad_of(*ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
  });
}

// ---- loss ------------------------------------------------------------------

Tensor sigmoid_cross_entropy_sum(const Tensor& logits, std::span<const double> targets) {
  require_defined(logits, "sigmoid_cross_entropy_sum");
  if (logits.numel() != targets.size()) {
    throw DimensionError("sigmoid_cross_entropy_sum: " + std::to_string(logits.numel()) +
                         " logits vs " + std::to_string(targets.size()) + " targets");
  }
  const auto z = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  ImplPtr iz = logits.impl();
  std::vector<double> s(targets.begin(), targets.end());
  return finish({1}, {total}, {&logits}, [iz, s = std::move(s)](std::span<const double> g) {
    auto& gz = grad_of(*iz);
    for (std::size_t i = 0; i < s.size(); ++i) gz[i] += g[0] * (stable_sigmoid(iz->values[i]) - s[i]);
  });
}

}  // namespace man

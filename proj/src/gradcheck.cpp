#include "man/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "man/errors.hpp"

namespace man {

GradCheckResult finite_difference_check(const std::function<Tensor()>& program,
                                        std::span<Tensor> inputs, double h) {
  std::vector<bool> flags;
  for (Tensor& t : inputs) {
    flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  GradCheckResult result;
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = program();
    if (loss.numel() != 1) throw ContractError("finite_difference_check: program must be scalar");
    if (loss.requires_grad()) tape.backward(loss);
    result.kink_margin = tape.kink_margin();
    result.singular_margin = tape.singular_margin();
  }
  for (Tensor& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = program().item();
      values[i] = saved - h;
      const double down = program().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic[k][i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      const double rel = std::abs(exact - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst = std::to_string(k) + "#" + std::to_string(i);
        result.worst_analytic = exact;
        result.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    inputs[k].set_requires_grad(flags[k]);
  }
  return result;
}

GradCheckResult finite_difference_check(const std::function<Tensor(const Tensor&)>& program,
                                        Tensor x, double h) {
  Tensor inputs[] = {x};
  return finite_difference_check([&] { return program(x); }, inputs, h);
}

}  // namespace man

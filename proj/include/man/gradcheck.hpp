#pragma once

#include <functional>
#include <span>
#include <string>

#include "man/tensor.hpp"

namespace man {

struct GradCheckResult {
  // max over coordinates of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Margins of the recorded forward pass (see Tape).
  double kink_margin = 1e300;
  double singular_margin = 1e300;
  // "input#coordinate" of the worst coordinate, for diagnostics.
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() gradients of a deterministic scalar program against
// central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate
// of every tensor in `inputs`. Inputs are made gradient-requiring for the
// duration of the check and their values are restored afterwards.
GradCheckResult finite_difference_check(const std::function<Tensor()>& program,
                                        std::span<Tensor> inputs, double h = 1e-4);

GradCheckResult finite_difference_check(const std::function<Tensor(const Tensor&)>& program,
                                        Tensor x, double h = 1e-4);

}  // namespace man

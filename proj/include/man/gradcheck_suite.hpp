#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "man/gradcheck.hpp"

namespace man {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-4;
// Draws whose forward pass comes closer than this to a relu or max-pool kink
// are rejected and redrawn.
inline constexpr double kGradCheckKinkMargin = 1e-2;
// Likewise for signed_sqrt inputs near 0, where central differences lose
// accuracy long before the kink itself.
inline constexpr double kGradCheckSingularMargin = 0.03;

struct ComponentCheck {
  std::string component;
  GradCheckResult result;
  std::size_t attempts = 0;  // draws needed to clear the kink margin

  bool passed() const { return result.max_relative_error <= kGradCheckTolerance; }
};

// Finite-difference checks of every differentiable primitive, every model
// block, and the full matching loss on micro-instances (T_f = 4, L = 3,
// d = 8, two tiny pyramids of N = 3). Each component projects its output onto fixed
// random weights to obtain a scalar.
std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace man

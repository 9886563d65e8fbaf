#pragma once

// Finite-difference verification of backpropagation over a fixed suite of
// small networks covering every layer type and activation.

#include <cstdint>
#include <string>
#include <vector>

#include "pallor/nn.hpp"

namespace pallor::nn {

inline constexpr double kGradientCheckStep = 1e-4;
inline constexpr double kGradientCheckTolerance = 1e-5;

struct GradientCase {
  std::string name;
  NetworkSpec spec;
};

/// Dense, Conv2d (stride 1 and 2, with and without padding), Upsample2x and
/// Flatten, each combined with relu, sigmoid and linear, plus mixed stacks.
std::vector<GradientCase> gradient_cases(std::uint64_t seed);

struct GradientCaseResult {
  std::string name;
  double max_relative_error = 0.0;
};

/// Runs gradient_check on every case with inputs and targets drawn from `seed`.
std::vector<GradientCaseResult> run_gradient_suite(std::uint64_t seed, double step = kGradientCheckStep);

}  // namespace pallor::nn

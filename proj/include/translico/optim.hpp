#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "translico/tensor.hpp"

namespace translico {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

// One Adam update with bias correction, reading each parameter's grad buffer
// (a parameter without a grad buffer counts as a zero gradient). The step
// counter is incremented before the bias correction. Throws ShapeMismatch if
// the moment buffers do not match the parameters.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& config);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients of f (after zeroing and one backward pass)
// with central differences (f(x+h) - f(x-h)) / 2h over every element of every
// parameter. Relative error uses max(|a|, |n|, 1e-8) as denominator.
GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& f,
                                  std::span<Tensor<double>> params, double h);

}  // namespace translico

#include "translico/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "translico/errors.hpp"

namespace translico {

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& config) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("Adam state has " + std::to_string(state.m.size()) + " buffers for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ShapeMismatch("Adam moment buffer " + std::to_string(i) + " does not match its parameter");
    }
  }

  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      values[j] = static_cast<T>(static_cast<double>(values[j]) - config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&, const AdamConfig&);

GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& f,
                                  std::span<Tensor<double>> params, double h) {
  for (auto& p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) analytic.emplace_back(p.grad().begin(), p.grad().end());
    else analytic.emplace_back(p.numel(), 0.0);
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_values();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double saved = values[e];
      double plus, minus;
      {
        NoGradGuard no_grad;
        values[e] = saved + h;
        plus = f().item();
        values[e] = saved - h;
        minus = f().item();
      }
      values[e] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[pi][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        result.param_index = pi;
        result.element = e;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace translico

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hg/error.hpp"
#include "hg/tensor.hpp"

namespace hg {

/// Central-difference check of a scalar-valued differentiable map against
/// its tape gradient. Returns the worst relative error over every coordinate
/// of every input, with denominator max(|analytic|, |numeric|, 1e-12).
template <typename T>
double grad_check(
    const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& fn,
    const std::vector<Tensor<T>>& inputs, double step) {
  if (!(step > 0.0) || step > 1e-2) {
    throw ContractError("grad_check: step " + std::to_string(step) +
                        " outside (0, 1e-2]");
  }

  // Analytic pass: clone inputs as grad-tracked leaves and run backward.
  std::vector<Tensor<T>> tracked;
  tracked.reserve(inputs.size());
  for (const auto& t : inputs) {
    Tensor<T> c = t.clone();
    c.set_requires_grad(true);
    c.zero_grad();
    tracked.push_back(c);
  }
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> y = fn(tracked);
    if (y.numel() != 1) {
      throw ContractError("grad_check: fn output " + shape_str(y.shape) +
                          " is not scalar");
    }
    if (!std::isfinite(static_cast<double>(y.item()))) {
      throw EvalError("grad_check: fn output is not finite");
    }
    backward(y);
    for (auto& t : tracked) analytic.push_back(*t.grad);
  }

  auto eval_at = [&](std::vector<Tensor<T>>& pts) -> double {
    Tensor<T> y = fn(pts);
    const double v = static_cast<double>(y.item());
    if (!std::isfinite(v)) {
      throw EvalError("grad_check: fn output is not finite");
    }
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor<T>> probe;
      probe.reserve(inputs.size());
      for (const auto& t : inputs) probe.push_back(t.clone());
      const T orig = (*probe[i].data)[j];

      (*probe[i].data)[j] = orig + static_cast<T>(step);
      const double up = eval_at(probe);
      (*probe[i].data)[j] = orig - static_cast<T>(step);
      const double down = eval_at(probe);
      (*probe[i].data)[j] = orig;

      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(analytic[i][j]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace hg

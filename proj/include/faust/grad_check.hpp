#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "faust/tensor.hpp"

namespace faust {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  /// Set when either side produced a NaN; (tensor, coordinate).
  std::optional<std::pair<std::size_t, std::size_t>> nan_at;

  bool ok(double tolerance) const { return !nan_at && max_relative_error < tolerance; }
};

/// Compares reverse-mode gradients of a scalar function of `params` against
/// central differences, coordinate by coordinate:
///   |analytic - numeric| / max(1, |numeric|).
/// `loss_fn` must rebuild the loss from the current parameter values on each
/// call. Parameter values are restored before returning.
template <typename T>
GradCheckResult grad_check_params(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                                  double step = 1e-6) {
  for (auto& p : params) p.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<T>> analytic;
  for (auto& p : params) {
    analytic.push_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end()) : std::vector<T>(p.size(), T{0}));
    p.zero_grad();
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = original + static_cast<T>(step);
      const double up = static_cast<double>(loss_fn().item());
      values[i] = original - static_cast<T>(step);
      const double down = static_cast<double>(loss_fn().item());
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(analytic[t][i]);
      if (std::isnan(numeric) || std::isnan(a)) {
        if (!result.nan_at) result.nan_at = std::make_pair(t, i);
        continue;
      }
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
      }
    }
  }
  return result;
}

/// Single-input form: checks d f(x) / d x at x.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                           double step = 1e-6) {
  Tensor<T> leaf = x.clone();
  leaf.set_requires_grad(true);
  return grad_check_params<T>([&] { return f(leaf); }, {leaf}, step);
}

}  // namespace faust

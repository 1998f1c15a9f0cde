// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "shrink/ops.hpp"

namespace shrink {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Compares tape gradients of `f` against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps), elementwise over every entry of every
/// parameter. Relative error uses max(|a|, |b|, floor) as the denominator;
/// raise `floor` when some true gradients are exactly zero.
///
/// `corrupt`, when set, perturbs the tape gradient before comparison; it
/// exists to show the detector fires.
inline GradCheckResult
grad_check(const std::function<Tensor<double>()> &f, std::vector<Tensor<double>> params, double eps = 1e-5,
           const std::function<void(std::vector<std::vector<double>> &)> &corrupt = {}, double floor = 1e-8) {
  for (auto &p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  auto &tape = Tape<double>::current();
  tape.reset();
  {
    const Tensor<double> loss = f();
    backward(loss);
  }
  tape.reset();
  std::vector<std::vector<double>> analytic;
  for (auto &p : params)
    analytic.push_back(p.grad().values());
  if (corrupt)
    corrupt(analytic);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto &values = params[pi].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

} // namespace shrink

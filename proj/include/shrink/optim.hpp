// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/model.hpp"

namespace shrink {

/// Linear warmup from 0 to `peak` over `warmup` steps, then exponential decay
/// by `gamma` per step.
inline double lr_at(std::uint64_t step, double peak, std::uint64_t warmup, double gamma) {
  if (step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::pow(gamma, static_cast<double>(step - warmup));
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

template <class T> class AdamW {
public:
  AdamW(NamedTensors<T> &params, AdamWOptions opt = {}) : params_(&params), opt_(opt) {
    for (const auto &[name, t] : params) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  std::uint64_t step_count() const { return step_; }
  const AdamWOptions &options() const { return opt_; }
  const std::vector<double> &first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double> &second_moment(std::size_t i) const { return v_.at(i); }

  /// One update with learning rate `lr`. Parameters without a gradient are
  /// treated as having a zero gradient (they still decay).
  void step(double lr) {
    auto &params = *params_;
    if (params.size() != m_.size())
      throw UsageError("optimizer was built for a different parameter list");
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - lr * opt_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto &t = params[i].second;
      if (t.numel() != m_[i].size())
        throw ShapeError("parameter " + params[i].first + " changed size under the optimizer");
      auto &p = t.values();
      const bool has = t.has_grad();
      const std::vector<T> *g = has ? &t.impl()->grad : nullptr;
      auto &m = m_[i];
      auto &v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = has ? static_cast<double>((*g)[j]) : 0.0;
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
        const double mhat = m[j] / bc1, vhat = v[j] / bc2;
        double x = static_cast<double>(p[j]) * decay;
        x -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
        p[j] = static_cast<T>(x);
      }
    }
  }

private:
  NamedTensors<T> *params_;
  AdamWOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

/// Global L2 norm of all gradients.
template <class T> double grad_norm(const NamedTensors<T> &params) {
  double s = 0.0;
  for (const auto &[name, t] : params)
    if (t.has_grad())
      for (const T g : t.impl()->grad)
        s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most `max_norm`; a
/// non-positive bound disables clipping. Returns the norm before clipping.
template <class T> double clip_grad_norm(NamedTensors<T> &params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto &[name, t] : params)
      if (t.has_grad())
        for (T &g : t.impl()->grad)
          g *= f;
  }
  return norm;
}

} // namespace shrink

// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Test helpers and independent reference implementations used as oracles.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shrink/ops.hpp"
#include "shrink/rng.hpp"

namespace shrink::testing {

template <class T = double> Tensor<T> random_tensor(Shape shape, Rng &rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto &v : t.values())
    v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string &name) {
  const auto p = std::filesystem::temp_directory_path() / ("shrink_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// -log P(target) by summing the probability of every frame-label path whose
/// collapse (merge repeats, then drop blank 0) equals the target.
/// `log_probs` is row-major [frames, vocab].
inline double ctc_enumerate(const std::vector<double> &log_probs, std::size_t frames, std::size_t vocab,
                            const std::vector<int> &target) {
  std::vector<int> path(frames, 0);
  double total = 0.0;
  for (;;) {
    std::vector<int> collapsed;
    int prev = -1;
    for (const int s : path) {
      if (s != prev && s != 0)
        collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < frames; ++t)
        lp += log_probs[t * vocab + static_cast<std::size_t>(path[t])];
      total += std::exp(lp);
    }
    std::size_t k = 0;
    while (k < frames && ++path[k] == static_cast<int>(vocab))
      path[k++] = 0;
    if (k == frames)
      break;
  }
  return -std::log(total);
}

/// Memoized top-down Levenshtein recursion.
template <class Tok> std::size_t edit_distance_recursive(const std::vector<Tok> &a, const std::vector<Tok> &b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size())
      return b.size() - j;
    if (j == b.size())
      return a.size() - i;
    const auto key = std::make_pair(i, j);
    if (const auto it = memo.find(key); it != memo.end())
      return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    return memo[key] = best;
  };
  return go(0, 0);
}

} // namespace shrink::testing

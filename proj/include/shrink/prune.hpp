// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/model.hpp"

namespace shrink {

struct PrunedTensor {
  std::string name;
  std::size_t size = 0;
  bool eligible = false;
  std::size_t pruned = 0;
};

struct PruneReport {
  double fraction = 0.0;
  bool exclude_conv = false;
  std::size_t n_eligible = 0;
  std::size_t n_pruned = 0;
  std::vector<PrunedTensor> tensors;
};

/// Convolution parameters: the conformer convolution module and the
/// frontend's depthwise kernels.
inline bool is_conv_parameter(const std::string &name) {
  return name.find(".conv.") != std::string::npos || name.find(".dw.") != std::string::npos;
}

/// Weight matrices and kernels; biases and layer-norm scales are exempt.
inline bool is_prunable(const std::string &name, bool exclude_conv) {
  const std::string suffix = ".weight";
  const bool weight = name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  return weight && !(exclude_conv && is_conv_parameter(name));
}

/// One-shot global unstructured magnitude pruning: exactly
/// floor(fraction * n_eligible) entries with the smallest |w| are zeroed.
/// Ties are broken by parameter order, then element index.
template <class T> PruneReport magnitude_prune(Model<T> &model, double fraction, bool exclude_conv) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ConfigError("prune fraction must be in [0, 1), got " + std::to_string(fraction));
  PruneReport report;
  report.fraction = fraction;
  report.exclude_conv = exclude_conv;

  struct Entry {
    T magnitude;
    std::size_t tensor;
    std::size_t index;
  };
  std::vector<Entry> entries;
  auto &params = model.parameters();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto &[name, t] = params[pi];
    const bool eligible = is_prunable(name, exclude_conv);
    report.tensors.push_back({name, t.numel(), eligible, 0});
    if (!eligible)
      continue;
    for (std::size_t i = 0; i < t.numel(); ++i)
      entries.push_back({std::abs(t[i]), pi, i});
  }
  report.n_eligible = entries.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(entries.size())));
  if (k == 0)
    return report;
  auto less = [](const Entry &a, const Entry &b) {
    if (a.magnitude != b.magnitude)
      return a.magnitude < b.magnitude;
    if (a.tensor != b.tensor)
      return a.tensor < b.tensor;
    return a.index < b.index;
  };
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k - 1), entries.end(), less);
  for (std::size_t j = 0; j < k; ++j) {
    const auto &e = entries[j];
    params[e.tensor].second[e.index] = T(0);
    ++report.tensors[e.tensor].pruned;
  }
  report.n_pruned = k;
  return report;
}

} // namespace shrink

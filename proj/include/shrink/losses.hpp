// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/model.hpp"
#include "shrink/ops.hpp"

namespace shrink {

namespace detail {

inline double log_add(double a, double b) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (a == ninf)
    return b;
  if (b == ninf)
    return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Frames needed to emit `target`: one per label plus one blank between
/// each pair of equal neighbours.
inline std::size_t ctc_min_frames(const std::vector<int> &target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1])
      ++n;
  return n;
}

} // namespace detail

/// Per-item CTC negative log-likelihood. `log_probs` is [B, T, V]
/// log-softmax output with blank at index 0. The forward variables are
/// computed in log space; the backward pass is the reverse-mode adjoint of
/// that same recursion, so the gradient is exact for the computed loss.
template <class T>
Tensor<T> ctc_loss(const Tensor<T> &log_probs, const std::vector<std::size_t> &input_lengths,
                   const std::vector<std::vector<int>> &targets) {
  if (log_probs.rank() != 3)
    throw ShapeError("ctc_loss expects [B, T, V] log-probabilities, got " + shape_str(log_probs.shape()));
  const std::size_t B = log_probs.dim(0), Tmax = log_probs.dim(1), V = log_probs.dim(2);
  if (input_lengths.size() != B || targets.size() != B)
    throw ShapeError("ctc_loss: batch of " + std::to_string(B) + " but " + std::to_string(input_lengths.size()) +
                     " lengths and " + std::to_string(targets.size()) + " targets");
  constexpr double ninf = -std::numeric_limits<double>::infinity();

  struct Lattice {
    std::vector<int> ext;
    std::vector<double> alpha; // [frames, S]
    double log_likelihood = 0.0;
  };
  auto lattices = std::make_shared<std::vector<Lattice>>(B);
  Tensor<T> out(Shape{B});
  const T *lp = log_probs.values().data();
  for (std::size_t b = 0; b < B; ++b) {
    const auto &tgt = targets[b];
    const std::size_t frames = input_lengths[b];
    if (frames == 0 || frames > Tmax)
      throw ShapeError("ctc_loss: input length " + std::to_string(frames) + " outside [1, " + std::to_string(Tmax) + "]");
    for (const int id : tgt)
      if (id <= 0 || static_cast<std::size_t>(id) >= V)
        throw DataError("ctc_loss: target id " + std::to_string(id) + " is blank or outside the vocabulary");
    if (detail::ctc_min_frames(tgt) > frames)
      throw DataError("ctc_loss: target of length " + std::to_string(tgt.size()) + " cannot be aligned to " +
                      std::to_string(frames) + " frames (loss is infinite)");
    auto &lat = (*lattices)[b];
    const std::size_t S = 2 * tgt.size() + 1;
    lat.ext.assign(S, 0);
    for (std::size_t i = 0; i < tgt.size(); ++i)
      lat.ext[2 * i + 1] = tgt[i];
    lat.alpha.assign(frames * S, ninf);
    const T *row0 = lp + b * Tmax * V;
    lat.alpha[0] = row0[0];
    if (S > 1)
      lat.alpha[1] = row0[lat.ext[1]];
    for (std::size_t t = 1; t < frames; ++t) {
      const T *row = lp + (b * Tmax + t) * V;
      const double *prev = &lat.alpha[(t - 1) * S];
      double *cur = &lat.alpha[t * S];
      for (std::size_t s = 0; s < S; ++s) {
        double a = prev[s];
        if (s >= 1)
          a = detail::log_add(a, prev[s - 1]);
        if (s >= 2 && lat.ext[s] != 0 && lat.ext[s] != lat.ext[s - 2])
          a = detail::log_add(a, prev[s - 2]);
        cur[s] = a == ninf ? ninf : a + row[lat.ext[s]];
      }
    }
    const double *last = &lat.alpha[(frames - 1) * S];
    lat.log_likelihood = S > 1 ? detail::log_add(last[S - 1], last[S - 2]) : last[0];
    out[b] = static_cast<T>(-lat.log_likelihood);
  }

  auto LP = log_probs.impl();
  return detail::finish(std::move(out), "ctc_loss", detail::tracks<T>({&log_probs}),
                        [LP, lattices, input_lengths, Tmax, V](TensorImpl<T> &self) {
                          if (!LP->requires_grad)
                            return;
                          auto &glp = LP->grad_buffer();
                          const T *lp = LP->data.data();
                          for (std::size_t b = 0; b < lattices->size(); ++b) {
                            const auto &lat = (*lattices)[b];
                            const double g = self.grad[b];
                            if (g == 0.0)
                              continue;
                            const std::size_t S = lat.ext.size(), frames = input_lengths[b];
                            std::vector<double> abar(frames * S, 0.0);
                            const double *last = &lat.alpha[(frames - 1) * S];
                            abar[(frames - 1) * S + S - 1] = -g * std::exp(last[S - 1] - lat.log_likelihood);
                            if (S > 1)
                              abar[(frames - 1) * S + S - 2] = -g * std::exp(last[S - 2] - lat.log_likelihood);
                            for (std::size_t t = frames; t-- > 0;) {
                              const T *row = lp + (b * Tmax + t) * V;
                              T *grow = glp.data() + (b * Tmax + t) * V;
                              for (std::size_t s = 0; s < S; ++s) {
                                const double ab = abar[t * S + s];
                                const double al = lat.alpha[t * S + s];
                                if (ab == 0.0 || al == -std::numeric_limits<double>::infinity())
                                  continue;
                                grow[lat.ext[s]] += static_cast<T>(ab);
                                if (t == 0)
                                  continue;
                                const double pre = al - row[lat.ext[s]];
                                const double *prev = &lat.alpha[(t - 1) * S];
                                double *pbar = &abar[(t - 1) * S];
                                pbar[s] += ab * std::exp(prev[s] - pre);
                                if (s >= 1)
                                  pbar[s - 1] += ab * std::exp(prev[s - 1] - pre);
                                if (s >= 2 && lat.ext[s] != 0 && lat.ext[s] != lat.ext[s - 2])
                                  pbar[s - 2] += ab * std::exp(prev[s - 2] - pre);
                              }
                            }
                          }
                        });
}

/// Per-frame argmax, collapse adjacent repeats, drop blanks. Accepts logits
/// or log-probabilities ([B, T, V]).
template <class T>
std::vector<std::vector<int>> ctc_greedy_decode(const Tensor<T> &scores, const std::vector<std::size_t> &lengths) {
  if (scores.rank() != 3)
    throw ShapeError("ctc_greedy_decode expects [B, T, V], got " + shape_str(scores.shape()));
  const std::size_t B = scores.dim(0), Tmax = scores.dim(1), V = scores.dim(2);
  std::vector<std::vector<int>> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    int prev = -1;
    for (std::size_t t = 0; t < std::min(lengths.at(b), Tmax); ++t) {
      const T *row = scores.values().data() + (b * Tmax + t) * V;
      const int best = static_cast<int>(std::max_element(row, row + V) - row);
      if (best != prev && best != 0)
        out[b].push_back(best);
      prev = best;
    }
  }
  return out;
}

/// softmax(z / temperature) over the last axis.
template <class T> Tensor<T> tempered_softmax(const Tensor<T> &z, T temperature) {
  if (!(temperature > T(0)))
    throw ConfigError("softmax temperature must be positive");
  return softmax(scale(z, T(1) / temperature), -1);
}

template <class T> Tensor<T> l2_normalize_rows(const Tensor<T> &x) {
  return div(x, sqrt(add_scalar(sum(square(x), 1, true), T(1e-12))));
}

/// Symmetric cross-entropy over the cosine-similarity matrix of two [B, d]
/// embedding sets; row i of each set is the positive pair of the other's
/// row i.
template <class T> Tensor<T> clip_loss(const Tensor<T> &e_ref, const Tensor<T> &e_lw, T temperature) {
  if (!(temperature > T(0)))
    throw ConfigError("CLIP temperature must be positive");
  if (e_ref.rank() != 2 || e_ref.shape() != e_lw.shape() || e_ref.dim(0) == 0)
    throw ShapeError("clip_loss expects two equal [B, d] inputs, got " + shape_str(e_ref.shape()) + " and " +
                     shape_str(e_lw.shape()));
  const std::size_t B = e_ref.dim(0);
  const Tensor<T> sim = scale(matmul(l2_normalize_rows(e_ref), transpose(l2_normalize_rows(e_lw))), T(1) / temperature);
  Tensor<T> eye(Shape{B, B});
  for (std::size_t i = 0; i < B; ++i)
    eye[i * B + i] = T(1);
  const Tensor<T> rows = sum(mul(log_softmax(sim, 1), eye));
  const Tensor<T> cols = sum(mul(log_softmax(sim, 0), eye));
  return scale(add(rows, cols), T(-0.5) / static_cast<T>(B));
}

namespace detail {
template <class T> Tensor<T> masked_mean(const Tensor<T> &elementwise, const Tensor<T> *mask) {
  if (!mask)
    return mean(elementwise);
  double valid = 0.0;
  for (const T m : mask->values())
    valid += static_cast<double>(m);
  const double per_frame = static_cast<double>(elementwise.numel()) / static_cast<double>(mask->numel());
  if (valid == 0.0)
    throw DataError("loss mask selects no positions");
  return scale(sum(mul(elementwise, *mask)), static_cast<T>(1.0 / (valid * per_frame)));
}

template <class T> void check_pair(const Tensor<T> &a, const Tensor<T> &b, const char *what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
} // namespace detail

/// Mean squared difference over valid positions. `mask` is [B, T, 1] (or
/// any shape broadcasting to the inputs) with 1 on valid frames.
template <class T> Tensor<T> mse_loss(const Tensor<T> &b_ref, const Tensor<T> &b_lw, const Tensor<T> *mask = nullptr) {
  detail::check_pair(b_ref, b_lw, "mse_loss");
  return detail::masked_mean(square(sub(b_lw, b_ref)), mask);
}

template <class T> Tensor<T> mae_loss(const Tensor<T> &b_ref, const Tensor<T> &b_lw, const Tensor<T> *mask = nullptr) {
  detail::check_pair(b_ref, b_lw, "mae_loss");
  return detail::masked_mean(abs(sub(b_lw, b_ref)), mask);
}

enum class EncrlMode { clip, mae, mse, clip_mae, clip_mse };

inline EncrlMode parse_encrl_mode(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
  if (s == "clip")
    return EncrlMode::clip;
  if (s == "mae")
    return EncrlMode::mae;
  if (s == "mse")
    return EncrlMode::mse;
  if (s == "clip+mae")
    return EncrlMode::clip_mae;
  if (s == "clip+mse")
    return EncrlMode::clip_mse;
  throw ConfigError("unknown EncRL loss mode \"" + s + "\" (expected clip, mae, mse, clip+mae or clip+mse)");
}

inline std::string to_string(EncrlMode m) {
  switch (m) {
  case EncrlMode::clip:
    return "clip";
  case EncrlMode::mae:
    return "mae";
  case EncrlMode::mse:
    return "mse";
  case EncrlMode::clip_mae:
    return "clip+mae";
  case EncrlMode::clip_mse:
    return "clip+mse";
  }
  return "?";
}

inline bool uses_clip(EncrlMode m) { return m == EncrlMode::clip || m == EncrlMode::clip_mae || m == EncrlMode::clip_mse; }
inline bool uses_mse(EncrlMode m) { return m == EncrlMode::mse || m == EncrlMode::clip_mse; }
inline bool uses_mae(EncrlMode m) { return m == EncrlMode::mae || m == EncrlMode::clip_mae; }

struct EncrlWeights {
  double clip = 1.0;
  double mse = 1.0;
  double mae = 1.0;
};

template <class T> struct EncrlLoss {
  Tensor<T> total;
  std::map<std::string, double> components; // weighted contributions; they sum to total
};

/// Representation-alignment objective between a frozen reference and a
/// lightweight model: CLIP on time-pooled encoder features, MSE and/or MAE on
/// frame-wise classifier outputs.
template <class T>
EncrlLoss<T> encrl_loss(const EncoderOutput<T> &e_ref, const EncoderOutput<T> &e_lw, const Tensor<T> &b_ref,
                        const Tensor<T> &b_lw, EncrlMode mode, const EncrlWeights &w = {}, T temperature = T(0.07)) {
  if (e_ref.lengths != e_lw.lengths)
    throw ShapeError("encrl_loss: reference and lightweight models disagree on valid frame counts");
  EncrlLoss<T> out;
  std::vector<Tensor<T>> terms;
  if (uses_clip(mode)) {
    auto t = scale(clip_loss(masked_mean_pool(e_ref), masked_mean_pool(e_lw), temperature), static_cast<T>(w.clip));
    out.components["clip"] = static_cast<double>(t.item());
    terms.push_back(t);
  }
  if (uses_mse(mode)) {
    auto t = scale(mse_loss(b_ref, b_lw, &e_lw.mask), static_cast<T>(w.mse));
    out.components["mse"] = static_cast<double>(t.item());
    terms.push_back(t);
  }
  if (uses_mae(mode)) {
    auto t = scale(mae_loss(b_ref, b_lw, &e_lw.mask), static_cast<T>(w.mae));
    out.components["mae"] = static_cast<double>(t.item());
    terms.push_back(t);
  }
  out.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i)
    out.total = add(out.total, terms[i]);
  return out;
}

} // namespace shrink

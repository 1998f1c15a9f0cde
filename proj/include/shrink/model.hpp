// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Conformer-lite encoder: a strided depthwise-separable subsampling frontend,
// a stack of conformer blocks and a linear projection classifier head.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "shrink/dataset.hpp"
#include "shrink/error.hpp"
#include "shrink/ops.hpp"
#include "shrink/rng.hpp"

namespace shrink {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t ff_dim = 64;
  std::size_t n_heads = 4;
  std::size_t conv_kernel = 7;
  std::size_t subsample = 2; // 1, 2, 4 or 8; each factor of two is one strided stage
  std::size_t vocab_size = 9;
  std::size_t n_mels = 80;
  double dropout = 0.0;

  void validate() const {
    auto fail = [](const std::string &m) { throw ConfigError("model config: " + m); };
    if (n_layers < 1)
      fail("n_layers must be >= 1");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (ff_dim == 0)
      fail("ff_dim must be positive");
    if (conv_kernel % 2 == 0)
      fail("conv_kernel must be odd, got " + std::to_string(conv_kernel));
    if (subsample != 1 && subsample != 2 && subsample != 4 && subsample != 8)
      fail("subsample must be 1, 2, 4 or 8");
    if (vocab_size < 2)
      fail("vocab_size must be >= 2");
    if (n_mels == 0)
      fail("n_mels must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      fail("dropout must be in [0, 1)");
  }

  std::size_t frontend_stages() const {
    std::size_t n = 0;
    for (std::size_t s = subsample; s > 1; s /= 2)
      ++n;
    return std::max<std::size_t>(n, 1);
  }

  std::size_t output_length(std::size_t frames) const {
    for (std::size_t i = 0; i < frontend_stages(); ++i)
      frames = (frames + stride() - 1) / stride();
    return frames;
  }

  std::size_t stride() const { return subsample > 1 ? 2 : 1; }

  /// 12-layer reference size used for the published parameter budget:
  /// width 256, four heads, 31-tap convolutions, 256 BPE units plus blank.
  static ModelConfig paper_reference() {
    ModelConfig c;
    c.n_layers = 12;
    c.d_model = 256;
    c.ff_dim = 1024;
    c.n_heads = 4;
    c.conv_kernel = 31;
    c.subsample = 4;
    c.vocab_size = 257;
    c.n_mels = 80;
    c.dropout = 0.1;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"n_layers", n_layers}, {"d_model", d_model},       {"ff_dim", ff_dim},
            {"n_heads", n_heads},   {"conv_kernel", conv_kernel}, {"subsample", subsample},
            {"vocab_size", vocab_size}, {"n_mels", n_mels},     {"dropout", dropout}};
  }

  static ModelConfig from_json(const nlohmann::json &j) {
    ModelConfig c;
    try {
      c.n_layers = j.at("n_layers").get<std::size_t>();
      c.d_model = j.at("d_model").get<std::size_t>();
      c.ff_dim = j.at("ff_dim").get<std::size_t>();
      c.n_heads = j.at("n_heads").get<std::size_t>();
      c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
      c.subsample = j.at("subsample").get<std::size_t>();
      c.vocab_size = j.at("vocab_size").get<std::size_t>();
      c.n_mels = j.at("n_mels").get<std::size_t>();
      c.dropout = j.at("dropout").get<double>();
    } catch (const nlohmann::json::exception &e) {
      throw FormatError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig &) const = default;
};

template <class T> using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T> struct Linear {
  Tensor<T> weight; // [in, out]
  Tensor<T> bias;   // [out]
  Tensor<T> operator()(const Tensor<T> &x) const { return linear(x, weight, bias); }
};

template <class T> struct LayerNorm {
  Tensor<T> gamma, beta;
  Tensor<T> operator()(const Tensor<T> &x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
};

template <class T> struct FeedForward {
  LayerNorm<T> norm;
  Linear<T> up, down;
};

template <class T> struct SelfAttention {
  LayerNorm<T> norm;
  Linear<T> qkv, out;
};

template <class T> struct ConvModule {
  LayerNorm<T> norm;
  Linear<T> pw1; // d -> 2d, gated by GLU
  Tensor<T> dw_kernel, dw_bias;
  LayerNorm<T> dw_norm;
  Linear<T> pw2;
};

template <class T> struct ConformerBlock {
  FeedForward<T> ff1;
  SelfAttention<T> mhsa;
  ConvModule<T> conv;
  FeedForward<T> ff2;
  LayerNorm<T> norm;
};

template <class T> struct FrontendStage {
  Tensor<T> dw_kernel; // [in, 3]
  Linear<T> pw;        // in -> d_model
};

template <class T> struct EncoderOutput {
  Tensor<T> features;               // [B, T', d_model], zero at padded frames
  std::vector<std::size_t> lengths; // valid frames per item
  Tensor<T> mask;                   // [B, T', 1], 1 on valid frames
};

/// 1 on valid frames, 0 on padding; shape [B, frames, 1].
template <class T> Tensor<T> length_mask(const std::vector<std::size_t> &lengths, std::size_t frames) {
  Tensor<T> m(Shape{lengths.size(), frames, 1});
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < std::min(lengths[b], frames); ++t)
      m[b * frames + t] = T(1);
  return m;
}

template <class T> Tensor<T> sinusoidal_positions(std::size_t frames, std::size_t d) {
  Tensor<T> pe(Shape{frames, d});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[t * d + i] = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < d)
        pe[t * d + i + 1] = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  return pe;
}

template <class T> class Model {
public:
  explicit Model(const ModelConfig &config, std::uint64_t seed = 0) : Model(config, Rng(seed)) {}

  Model(const ModelConfig &config, Rng init) : config_(config), dropout_rng_(0) {
    config_.validate();
    Builder b{*this, init};
    const std::size_t d = config_.d_model;
    std::size_t in = config_.n_mels;
    for (std::size_t s = 0; s < config_.frontend_stages(); ++s) {
      const std::string p = "frontend.stages." + std::to_string(s) + ".";
      FrontendStage<T> st;
      st.dw_kernel = b.uniform(p + "dw.weight", Shape{in, 3}, 3);
      st.pw = b.linear(p + "pw", in, d);
      frontend_.push_back(std::move(st));
      in = d;
    }
    for (std::size_t i = 0; i < config_.n_layers; ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      ConformerBlock<T> blk;
      blk.ff1 = b.feed_forward(p + "ff1", d, config_.ff_dim);
      blk.mhsa.norm = b.layer_norm(p + "mhsa.norm", d);
      blk.mhsa.qkv = b.linear(p + "mhsa.qkv", d, 3 * d);
      blk.mhsa.out = b.linear(p + "mhsa.out", d, d);
      blk.conv.norm = b.layer_norm(p + "conv.norm", d);
      blk.conv.pw1 = b.linear(p + "conv.pw1", d, 2 * d);
      blk.conv.dw_kernel = b.uniform(p + "conv.dw.weight", Shape{d, config_.conv_kernel}, config_.conv_kernel);
      blk.conv.dw_bias = b.uniform(p + "conv.dw.bias", Shape{d}, config_.conv_kernel);
      blk.conv.dw_norm = b.layer_norm(p + "conv.dw_norm", d);
      blk.conv.pw2 = b.linear(p + "conv.pw2", d, d);
      blk.ff2 = b.feed_forward(p + "ff2", d, config_.ff_dim);
      blk.norm = b.layer_norm(p + "norm", d);
      blocks_.push_back(std::move(blk));
    }
    classifier_ = b.linear("classifier", d, config_.vocab_size);
  }

  Model(const Model &) = delete;
  Model &operator=(const Model &) = delete;
  Model(Model &&) noexcept = default;
  Model &operator=(Model &&) noexcept = default;

  /// Independent deep copy.
  Model clone() const {
    Model m(config_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i)
      m.params_[i].second.values() = params_[i].second.values();
    m.training_ = training_;
    return m;
  }

  const ModelConfig &config() const { return config_; }
  NamedTensors<T> &parameters() { return params_; }
  const NamedTensors<T> &parameters() const { return params_; }

  Tensor<T> &parameter(const std::string &name) {
    for (auto &[n, t] : params_)
      if (n == name)
        return t;
    throw ConfigError("no parameter named " + name);
  }

  void train(bool on = true) { training_ = on; }
  void eval() { training_ = false; }
  bool is_training() const { return training_; }
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  void set_requires_grad(bool on) {
    for (auto &p : params_)
      p.second.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto &p : params_)
      p.second.zero_grad();
  }

  EncoderOutput<T> forward_encoder(const Batch &batch) {
    const auto &src = batch.features.values();
    Tensor<T> x(batch.features.shape());
    std::copy(src.begin(), src.end(), x.values().begin());
    return forward_encoder(x, batch.feature_lengths);
  }

  /// features [B, T, n_mels] zero-padded beyond `lengths`.
  EncoderOutput<T> forward_encoder(const Tensor<T> &features, const std::vector<std::size_t> &lengths) {
    if (features.rank() != 3 || features.dim(2) != config_.n_mels)
      throw ShapeError("encoder expects [B, T, " + std::to_string(config_.n_mels) + "] features, got " +
                       shape_str(features.shape()));
    if (lengths.size() != features.dim(0))
      throw ShapeError("encoder got " + std::to_string(lengths.size()) + " lengths for batch of " +
                       std::to_string(features.dim(0)));
    std::vector<std::size_t> lens = lengths;
    for (auto &l : lens)
      if (l == 0 || l > features.dim(1))
        throw ShapeError("feature length " + std::to_string(l) + " outside [1, " + std::to_string(features.dim(1)) + "]");

    Tensor<T> x = features;
    Tensor<T> mask;
    for (const auto &st : frontend_) {
      x = depthwise_conv1d(x, st.dw_kernel, config_.stride());
      x = swish(st.pw(x));
      for (auto &l : lens)
        l = (l + config_.stride() - 1) / config_.stride();
      mask = length_mask<T>(lens, x.dim(1));
      x = mul(x, mask);
    }
    const std::size_t frames = x.dim(1);
    x = add(x, sinusoidal_positions<T>(frames, config_.d_model));
    x = dropout(x, config_.dropout, dropout_rng_, training_);
    x = mul(x, mask);

    const Tensor<T> key_pad = key_padding(lens, frames);
    for (const auto &blk : blocks_)
      x = block_forward(blk, x, mask, key_pad);
    return {x, lens, mask};
  }

  /// Raw per-frame logits [B, T', vocab].
  Tensor<T> forward_classifier(const Tensor<T> &e) const { return classifier_(e); }

  const Linear<T> &classifier() const { return classifier_; }

private:
  struct Builder {
    Model &m;
    Rng &rng;

    Tensor<T> uniform(const std::string &name, Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor<T> t(std::move(shape));
      for (auto &v : t.values())
        v = static_cast<T>(rng.uniform(-bound, bound));
      t.set_requires_grad(true);
      m.params_.emplace_back(name, t);
      return t;
    }
    Tensor<T> constant(const std::string &name, Shape shape, T value) {
      Tensor<T> t(std::move(shape), value);
      t.set_requires_grad(true);
      m.params_.emplace_back(name, t);
      return t;
    }
    Linear<T> linear(const std::string &p, std::size_t in, std::size_t out) {
      Linear<T> l;
      l.weight = uniform(p + ".weight", Shape{in, out}, in);
      l.bias = uniform(p + ".bias", Shape{out}, in);
      return l;
    }
    LayerNorm<T> layer_norm(const std::string &p, std::size_t d) {
      return {constant(p + ".gamma", Shape{d}, T(1)), constant(p + ".beta", Shape{d}, T(0))};
    }
    FeedForward<T> feed_forward(const std::string &p, std::size_t d, std::size_t ff) {
      FeedForward<T> f;
      f.norm = layer_norm(p + ".norm", d);
      f.up = linear(p + ".up", d, ff);
      f.down = linear(p + ".down", ff, d);
      return f;
    }
  };

  // [B * heads, 1, frames], 1 where the key frame is padding.
  Tensor<T> key_padding(const std::vector<std::size_t> &lens, std::size_t frames) const {
    const std::size_t H = config_.n_heads;
    Tensor<T> m(Shape{lens.size() * H, 1, frames});
    for (std::size_t b = 0; b < lens.size(); ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t t = lens[b]; t < frames; ++t)
          m[(b * H + h) * frames + t] = T(1);
    return m;
  }

  Tensor<T> feed_forward(const FeedForward<T> &f, const Tensor<T> &x) {
    Tensor<T> h = swish(f.up(f.norm(x)));
    h = dropout(h, config_.dropout, dropout_rng_, training_);
    h = f.down(h);
    return dropout(h, config_.dropout, dropout_rng_, training_);
  }

  Tensor<T> attention(const SelfAttention<T> &a, const Tensor<T> &x, const Tensor<T> &key_pad) {
    const std::size_t B = x.dim(0), F = x.dim(1), d = config_.d_model, H = config_.n_heads, dh = d / H;
    Tensor<T> qkv = a.qkv(a.norm(x));
    qkv = permute(reshape(qkv, Shape{B, F, 3, H, dh}), {2, 0, 3, 1, 4}); // [3, B, H, F, dh]
    auto head = [&](std::size_t i) { return reshape(slice(qkv, 0, i, 1), Shape{B * H, F, dh}); };
    const Tensor<T> q = head(0), k = head(1), v = head(2);
    Tensor<T> scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(dh)));
    scores = masked_fill(scores, key_pad, T(-1e9));
    Tensor<T> att = dropout(softmax(scores, -1), config_.dropout, dropout_rng_, training_);
    Tensor<T> ctx = matmul(att, v); // [B*H, F, dh]
    ctx = reshape(permute(reshape(ctx, Shape{B, H, F, dh}), {0, 2, 1, 3}), Shape{B, F, d});
    return dropout(a.out(ctx), config_.dropout, dropout_rng_, training_);
  }

  Tensor<T> convolution(const ConvModule<T> &c, const Tensor<T> &x, const Tensor<T> &mask) {
    Tensor<T> h = glu(c.pw1(c.norm(x)));
    h = mul(h, mask);
    h = add(depthwise_conv1d(h, c.dw_kernel), c.dw_bias);
    h = swish(c.dw_norm(h));
    return dropout(c.pw2(h), config_.dropout, dropout_rng_, training_);
  }

  Tensor<T> block_forward(const ConformerBlock<T> &blk, Tensor<T> x, const Tensor<T> &mask, const Tensor<T> &key_pad) {
    x = add(x, scale(feed_forward(blk.ff1, x), T(0.5)));
    x = add(x, attention(blk.mhsa, x, key_pad));
    x = add(x, convolution(blk.conv, x, mask));
    x = add(x, scale(feed_forward(blk.ff2, x), T(0.5)));
    return mul(blk.norm(x), mask);
  }

  ModelConfig config_;
  NamedTensors<T> params_;
  std::vector<FrontendStage<T>> frontend_;
  std::vector<ConformerBlock<T>> blocks_;
  Linear<T> classifier_;
  bool training_ = false;
  Rng dropout_rng_;
};

template <class T> std::size_t count_params(const Model<T> &model) {
  std::size_t n = 0;
  for (const auto &p : model.parameters())
    n += p.second.numel();
  return n;
}

/// Parameter count as a pure function of the configuration.
inline std::size_t count_params(const ModelConfig &c) {
  const std::size_t d = c.d_model;
  auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
  std::size_t n = 0;
  std::size_t in = c.n_mels;
  for (std::size_t s = 0; s < c.frontend_stages(); ++s) {
    n += in * 3 + lin(in, d);
    in = d;
  }
  const std::size_t ff = 2 * d + lin(d, c.ff_dim) + lin(c.ff_dim, d);
  const std::size_t mhsa = 2 * d + lin(d, 3 * d) + lin(d, d);
  const std::size_t conv = 2 * d + lin(d, 2 * d) + d * c.conv_kernel + d + 2 * d + lin(d, d);
  n += c.n_layers * (2 * ff + mhsa + conv + 2 * d);
  n += lin(d, c.vocab_size);
  return n;
}

/// Masked mean over time: [B, T', d] -> [B, d].
template <class T> Tensor<T> masked_mean_pool(const EncoderOutput<T> &enc) {
  const std::size_t B = enc.features.dim(0);
  Tensor<T> counts(Shape{B, 1});
  for (std::size_t b = 0; b < B; ++b)
    counts[b] = static_cast<T>(enc.lengths[b]);
  return div(sum(mul(enc.features, enc.mask), 1), counts);
}

} // namespace shrink

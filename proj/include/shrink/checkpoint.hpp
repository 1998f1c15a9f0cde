// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Checkpoint file layout (integers little-endian):
//   "SHCK" | u32 version | u64 blob length | JSON blob (config, vocab, meta)
//   | u64 parameter count | { u32 name length | name | SHTN tensor }*

#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shrink/error.hpp"
#include "shrink/model.hpp"
#include "shrink/serialize.hpp"
#include "shrink/vocab.hpp"

namespace shrink {

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointMeta {
  std::string phase;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <class T> struct Checkpoint {
  std::uint32_t version = checkpoint_version;
  ModelConfig config;
  Vocabulary vocab;
  CheckpointMeta meta;
  NamedTensors<T> params;

  const Tensor<T> *find(const std::string &name) const {
    for (const auto &[n, t] : params)
      if (n == name)
        return &t;
    return nullptr;
  }
};

template <class T>
std::string encode_checkpoint(const Model<T> &model, const Vocabulary &vocab, const CheckpointMeta &meta) {
  if (vocab.size() != model.config().vocab_size)
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " symbols but model expects " +
                      std::to_string(model.config().vocab_size));
  nlohmann::json blob;
  blob["config"] = model.config().to_json();
  blob["vocab"] = std::vector<std::string>(vocab.symbols().begin() + 1, vocab.symbols().end());
  blob["meta"] = {{"phase", meta.phase}, {"epoch", meta.epoch}, {"seed", meta.seed}, {"extra", meta.extra}};
  const std::string text = blob.dump();
  std::ostringstream os;
  os.write("SHCK", 4);
  io::put_u32(os, checkpoint_version);
  io::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  io::put_u64(os, model.parameters().size());
  for (const auto &[name, t] : model.parameters()) {
    io::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  return os.str();
}

template <class T>
void save_checkpoint(const Model<T> &model, const Vocabulary &vocab, const CheckpointMeta &meta,
                     const std::filesystem::path &path) {
  io::atomic_write(path, encode_checkpoint(model, vocab, meta));
}

template <class T> Checkpoint<T> decode_checkpoint(const std::string &bytes) {
  std::istringstream is(bytes);
  char magic[4];
  io::get_bytes(is, magic, 4, "checkpoint magic");
  if (std::string(magic, 4) != "SHCK")
    throw FormatError("not a checkpoint (bad magic)");
  Checkpoint<T> ck;
  ck.version = io::get_u32(is, "checkpoint version");
  if (ck.version != checkpoint_version)
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version));
  const auto blob_len = io::get_u64(is, "config blob length");
  if (blob_len > bytes.size())
    throw FormatError("truncated input while reading config blob");
  std::string text(blob_len, '\0');
  io::get_bytes(is, text.data(), blob_len, "config blob");
  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(text);
    ck.config = ModelConfig::from_json(blob.at("config"));
    ck.vocab = Vocabulary(blob.at("vocab").get<std::vector<std::string>>());
    const auto &m = blob.at("meta");
    ck.meta.phase = m.at("phase").get<std::string>();
    ck.meta.epoch = m.at("epoch").get<std::size_t>();
    ck.meta.seed = m.at("seed").get<std::uint64_t>();
    ck.meta.extra = m.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const auto count = io::get_u64(is, "parameter count");
  if (count > bytes.size())
    throw FormatError("implausible parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = io::get_u32(is, "parameter name length");
    if (len > 4096)
      throw FormatError("implausible parameter name length");
    std::string name(len, '\0');
    io::get_bytes(is, name.data(), len, "parameter name");
    ck.params.emplace_back(std::move(name), read_tensor<T>(is));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("trailing bytes after checkpoint parameters");
  return ck;
}

template <class T> Checkpoint<T> load_checkpoint(const std::filesystem::path &path) {
  try {
    return decode_checkpoint<T>(io::read_file(path));
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Copies every checkpoint tensor into the model, which must have exactly the
/// same parameter names and shapes.
template <class T> void load_parameters(Model<T> &model, const Checkpoint<T> &ck) {
  auto &params = model.parameters();
  if (ck.params.size() != params.size()) {
    for (const auto &[name, t] : params)
      if (!ck.find(name))
        throw ConfigError("checkpoint has no parameter " + name);
    throw ConfigError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (const auto &[name, t] : params) {
    const auto *src = ck.find(name);
    if (!src)
      throw ConfigError("checkpoint has no parameter " + name);
    if (src->shape() != t.shape())
      throw ConfigError("parameter " + name + " has shape " + shape_str(src->shape()) + " in checkpoint but " +
                        shape_str(t.shape()) + " in model");
  }
  for (auto &[name, t] : params)
    t.values() = ck.find(name)->values();
}

template <class T> Model<T> model_from_checkpoint(const Checkpoint<T> &ck) {
  Model<T> m(ck.config, 0);
  load_parameters(m, ck);
  return m;
}

/// Snapshot of a live model as an in-memory checkpoint.
template <class T> Checkpoint<T> snapshot(const Model<T> &model, const Vocabulary &vocab, CheckpointMeta meta = {}) {
  Checkpoint<T> ck;
  ck.config = model.config();
  ck.vocab = vocab;
  ck.meta = std::move(meta);
  for (const auto &[name, t] : model.parameters())
    ck.params.emplace_back(name, t.clone());
  return ck;
}

struct SliceReport {
  std::vector<std::size_t> layer_indices;
  bool frontend_copied = false;
  bool classifier_copied = false;
};

/// Block i of `target` receives a bit-exact copy of block layer_indices[i] of
/// the source. Frontend and classifier are copied when every shape matches
/// and otherwise keep their fresh initialization.
template <class T>
SliceReport init_from_slice(Model<T> &target, const Checkpoint<T> &source, const std::vector<std::size_t> &layer_indices) {
  const auto &tc = target.config();
  const auto &sc = source.config;
  if (layer_indices.size() != tc.n_layers)
    throw ConfigError("slice names " + std::to_string(layer_indices.size()) + " layers but target has " +
                      std::to_string(tc.n_layers));
  if (tc.d_model != sc.d_model || tc.ff_dim != sc.ff_dim || tc.n_heads != sc.n_heads || tc.conv_kernel != sc.conv_kernel)
    throw ConfigError("slice source and target differ in block dimensions");
  for (const auto i : layer_indices)
    if (i >= sc.n_layers)
      throw ConfigError("slice layer index " + std::to_string(i) + " out of range for " + std::to_string(sc.n_layers) +
                        "-layer source");

  auto group_matches = [&](const std::string &prefix) {
    bool any = false;
    for (const auto &[name, t] : target.parameters()) {
      if (name.rfind(prefix, 0) != 0)
        continue;
      any = true;
      const auto *src = source.find(name);
      if (!src || src->shape() != t.shape())
        return false;
    }
    return any;
  };
  SliceReport report;
  report.layer_indices = layer_indices;
  report.frontend_copied = group_matches("frontend.");
  report.classifier_copied = group_matches("classifier.");

  for (auto &[name, t] : target.parameters()) {
    std::string src_name;
    if (name.rfind("blocks.", 0) == 0) {
      const auto dot = name.find('.', 7);
      const auto idx = static_cast<std::size_t>(std::stoul(name.substr(7, dot - 7)));
      src_name = "blocks." + std::to_string(layer_indices[idx]) + name.substr(dot);
    } else if ((name.rfind("frontend.", 0) == 0 && report.frontend_copied) ||
               (name.rfind("classifier.", 0) == 0 && report.classifier_copied)) {
      src_name = name;
    } else {
      continue;
    }
    const auto *src = source.find(src_name);
    if (!src || src->shape() != t.shape())
      throw ConfigError("slice source lacks a compatible " + src_name);
    t.values() = src->values();
  }
  return report;
}

/// "first", "last" or a comma-separated index list, resolved for n target
/// layers out of a source with `source_layers`.
inline std::vector<std::size_t> resolve_slice(const std::string &spec, std::size_t n, std::size_t source_layers) {
  std::vector<std::size_t> out;
  if (spec == "first" || spec.empty()) {
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(i);
  } else if (spec == "last") {
    if (n > source_layers)
      throw ConfigError("cannot take the last " + std::to_string(n) + " of " + std::to_string(source_layers) + " layers");
    for (std::size_t i = source_layers - n; i < source_layers; ++i)
      out.push_back(i);
  } else {
    std::istringstream is(spec);
    std::string item;
    while (std::getline(is, item, ','))
      try {
        out.push_back(static_cast<std::size_t>(std::stoul(item)));
      } catch (const std::exception &) {
        throw ConfigError("bad slice index \"" + item + "\"");
      }
  }
  return out;
}

} // namespace shrink

// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "shrink/audio.hpp"
#include "shrink/error.hpp"
#include "shrink/rng.hpp"
#include "shrink/serialize.hpp"
#include "shrink/vocab.hpp"

namespace shrink {

struct ManifestEntry {
  std::string source; // audio (.wav) or feature file, relative to the manifest
  std::string transcript;
};

/// Tab-separated `<path>\t<transcript>` lines, UTF-8.
inline std::vector<ManifestEntry> parse_manifest(const std::string &text) {
  std::vector<ManifestEntry> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("manifest line " + std::to_string(lineno) + " has no tab separator");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path &path) {
  return parse_manifest(io::read_file(path));
}

inline std::string format_manifest(const std::vector<ManifestEntry> &entries) {
  std::string out;
  for (const auto &e : entries)
    out += e.source + "\t" + e.transcript + "\n";
  return out;
}

struct Utterance {
  std::string source;
  std::string transcript;
  FeatureSequence features;
  std::vector<int> tokens;
};

/// Loads a feature file (SHTN, [frames, mels]) or computes log-mels from a WAV.
inline FeatureSequence load_features(const std::filesystem::path &path, const MelOptions &mel = {}) {
  if (path.extension() == ".wav")
    return mel_spectrogram(load_wav(path), mel);
  auto t = load_tensor<float>(path);
  if (t.rank() != 2)
    throw FormatError(path.string() + ": feature tensor must be rank 2, got " + shape_str(t.shape()));
  return FeatureSequence{std::move(t)};
}

inline std::vector<Utterance> load_dataset(const std::filesystem::path &manifest, const Vocabulary &vocab,
                                           const MelOptions &mel = {}) {
  const auto entries = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto &e : entries) {
    std::filesystem::path p = e.source;
    if (p.is_relative())
      p = base / p;
    Utterance u{e.source, e.transcript, load_features(p, mel), vocab.tokenize(e.transcript)};
    if (u.features.n_frames() == 0)
      throw DataError(e.source + ": no feature frames");
    out.push_back(std::move(u));
  }
  return out;
}

struct SynthOptions {
  std::size_t n_items = 200;
  std::size_t test_items = 0;
  std::size_t vocab_size = 9; // including blank
  std::uint64_t seed = 0;
  std::size_t n_mels = 80;
  double noise = 0.1;
  std::size_t min_tokens = 3, max_tokens = 12;
  std::size_t min_repeat = 4, max_repeat = 8;
};

struct SynthResult {
  std::filesystem::path manifest;
  std::filesystem::path test_manifest; // empty when test_items == 0
  std::filesystem::path vocab;
};

inline std::string synth_alphabet(std::size_t vocab_size) {
  static const std::string letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  if (vocab_size < 2)
    throw ConfigError("synthetic vocab_size must be at least 2 (blank plus one token)");
  if (vocab_size - 1 > letters.size())
    throw ConfigError("synthetic vocab_size is limited to " + std::to_string(letters.size() + 1));
  return letters.substr(0, vocab_size - 1);
}

/// Writes a learnable toy corpus: every token owns a fixed random frame
/// template; an utterance is its token string with each template held for
/// 4-8 frames, plus Gaussian noise. Adjacent tokens always differ (when the
/// alphabet allows) so token boundaries are visible in the frames.
inline SynthResult synth_dataset(const SynthOptions &opt, const std::filesystem::path &out_dir) {
  const std::string alphabet = synth_alphabet(opt.vocab_size);
  const std::size_t n_tokens = alphabet.size();
  Rng rng(opt.seed);
  std::vector<std::vector<float>> templates(n_tokens, std::vector<float>(opt.n_mels));
  for (auto &t : templates)
    for (auto &v : t)
      v = static_cast<float>(rng.normal());

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "feats", ec);
  if (ec)
    throw IoError("cannot create " + (out_dir / "feats").string() + ": " + ec.message());

  auto make_split = [&](std::size_t count, const std::string &prefix) {
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < count; ++i) {
      const auto len = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(opt.min_tokens), static_cast<std::int64_t>(opt.max_tokens)));
      std::vector<std::size_t> toks;
      for (std::size_t k = 0; k < len; ++k) {
        std::size_t t;
        if (toks.empty() || n_tokens == 1) {
          t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_tokens) - 1));
        } else {
          t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_tokens) - 2));
          if (t >= toks.back())
            ++t;
        }
        toks.push_back(t);
      }
      std::vector<float> frames;
      std::string transcript;
      for (const auto t : toks) {
        transcript += alphabet[t];
        const auto rep = rng.uniform_int(static_cast<std::int64_t>(opt.min_repeat), static_cast<std::int64_t>(opt.max_repeat));
        for (std::int64_t r = 0; r < rep; ++r)
          for (std::size_t m = 0; m < opt.n_mels; ++m)
            frames.push_back(templates[t][m] + static_cast<float>(opt.noise * rng.normal()));
      }
      std::ostringstream name;
      name << "feats/" << prefix << std::setw(6) << std::setfill('0') << i << ".shtn";
      const std::size_t n_frames = frames.size() / opt.n_mels;
      save_tensor(out_dir / name.str(), Tensor<float>(Shape{n_frames, opt.n_mels}, std::move(frames)));
      entries.push_back({name.str(), transcript});
    }
    return entries;
  };

  SynthResult res;
  res.vocab = out_dir / "vocab.txt";
  Vocabulary::from_alphabet(alphabet).save(res.vocab);
  res.manifest = out_dir / "manifest.tsv";
  io::atomic_write(res.manifest, format_manifest(make_split(opt.n_items, "")));
  if (opt.test_items > 0) {
    res.test_manifest = out_dir / "test.tsv";
    io::atomic_write(res.test_manifest, format_manifest(make_split(opt.test_items, "test_")));
  }
  return res;
}

/// Zero-padded mini-batch. Features are [B, T_max, mels]; targets are
/// [B, L_max] token ids padded with 0.
struct Batch {
  Tensor<float> features;
  std::vector<std::size_t> feature_lengths;
  std::vector<int> targets;
  std::size_t max_target_length = 0;
  std::vector<std::size_t> target_lengths;
  std::vector<std::size_t> items; // indices into the source dataset

  std::size_t size() const { return feature_lengths.size(); }

  std::vector<int> target(std::size_t b) const {
    const auto first = targets.begin() + static_cast<std::ptrdiff_t>(b * max_target_length);
    return {first, first + static_cast<std::ptrdiff_t>(target_lengths[b])};
  }
};

inline Batch collate(const std::vector<Utterance> &data, const std::vector<std::size_t> &indices) {
  if (indices.empty())
    throw DataError("cannot collate an empty batch");
  Batch b;
  std::size_t t_max = 0, l_max = 0;
  const std::size_t n_mels = data[indices[0]].features.n_mels();
  for (const auto i : indices) {
    const auto &u = data[i];
    if (u.features.n_mels() != n_mels)
      throw ShapeError("utterance " + u.source + " has " + std::to_string(u.features.n_mels()) + " mel channels, expected " +
                       std::to_string(n_mels));
    t_max = std::max(t_max, u.features.n_frames());
    l_max = std::max(l_max, u.tokens.size());
  }
  b.features = Tensor<float>(Shape{indices.size(), t_max, n_mels});
  b.targets.assign(indices.size() * l_max, 0);
  b.max_target_length = l_max;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto &u = data[indices[k]];
    std::copy(u.features.frames.values().begin(), u.features.frames.values().end(),
              b.features.values().begin() + static_cast<std::ptrdiff_t>(k * t_max * n_mels));
    std::copy(u.tokens.begin(), u.tokens.end(), b.targets.begin() + static_cast<std::ptrdiff_t>(k * l_max));
    b.feature_lengths.push_back(u.features.n_frames());
    b.target_lengths.push_back(u.tokens.size());
    b.items.push_back(indices[k]);
  }
  return b;
}

/// Splits the dataset into batches; the final partial batch is kept. With an
/// rng the order is shuffled; with sort_by_length, items of similar length
/// share batches and the batch order is shuffled instead.
inline std::vector<Batch> make_batches(const std::vector<Utterance> &data, std::size_t batch_size,
                                       bool sort_by_length, Rng *rng) {
  if (data.empty())
    throw DataError("cannot batch an empty dataset");
  if (batch_size == 0)
    throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle = [&](auto &v) {
    if (!rng)
      return;
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(rng->uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  };
  shuffle(order);
  if (sort_by_length)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return data[a].features.n_frames() < data[b].features.n_frames();
    });
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  if (sort_by_length)
    shuffle(groups);
  std::vector<Batch> out;
  out.reserve(groups.size());
  for (const auto &g : groups)
    out.push_back(collate(data, g));
  return out;
}

/// SpecAugment each item's valid region in place.
inline void augment_batch(Batch &batch, const SpecAugmentOptions &opt, Rng &rng) {
  const std::size_t t_max = batch.features.dim(1), n_mels = batch.features.dim(2);
  for (std::size_t b = 0; b < batch.size(); ++b)
    spec_augment_inplace(batch.features.values().data() + b * t_max * n_mels, batch.feature_lengths[b], n_mels, opt, rng);
}

} // namespace shrink

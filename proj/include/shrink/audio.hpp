// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/rng.hpp"
#include "shrink/serialize.hpp"
#include "shrink/tensor.hpp"

namespace shrink {

struct AudioClip {
  std::vector<float> samples; // mono, [-1, 1]
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Log-mel frames, shape [n_frames, n_mels].
struct FeatureSequence {
  Tensor<float> frames{Shape{0, 80}};

  std::size_t n_frames() const { return frames.dim(0); }
  std::size_t n_mels() const { return frames.dim(1); }
};

/// Parses a 16-bit PCM mono RIFF/WAVE file. Samples are scaled by 1/32768.
inline AudioClip parse_wav(const std::string &bytes) {
  std::istringstream is(bytes);
  char tag[4];
  io::get_bytes(is, tag, 4, "RIFF header");
  if (std::memcmp(tag, "RIFF", 4) != 0)
    throw FormatError("not a RIFF file");
  io::get_u32(is, "RIFF size");
  io::get_bytes(is, tag, 4, "WAVE tag");
  if (std::memcmp(tag, "WAVE", 4) != 0)
    throw FormatError("RIFF file is not WAVE");

  bool have_fmt = false;
  AudioClip clip;
  for (;;) {
    io::get_bytes(is, tag, 4, "chunk id");
    const std::uint32_t size = io::get_u32(is, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16)
        throw FormatError("fmt chunk too small");
      const auto format = io::get_u16(is, "fmt");
      const auto channels = io::get_u16(is, "fmt");
      const std::uint32_t rate = io::get_u32(is, "fmt");
      io::get_u32(is, "fmt"); // byte rate
      io::get_u16(is, "fmt"); // block align
      const auto bits = io::get_u16(is, "fmt");
      if (format != 1)
        throw FormatError("WAV is not PCM (format " + std::to_string(format) + ")");
      if (channels != 1)
        throw FormatError("WAV has " + std::to_string(channels) + " channels, expected mono");
      if (bits != 16)
        throw FormatError("WAV has " + std::to_string(bits) + " bits per sample, expected 16");
      if (rate == 0)
        throw FormatError("WAV sample rate is zero");
      clip.sample_rate = static_cast<int>(rate);
      std::string skip(size - 16 + (size & 1), '\0');
      io::get_bytes(is, skip.data(), skip.size(), "fmt padding");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt)
        throw FormatError("WAV data chunk precedes fmt chunk");
      if (size % 2 != 0)
        throw FormatError("WAV data chunk has odd byte count");
      std::string payload(size, '\0');
      io::get_bytes(is, payload.data(), size, "WAV samples");
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto lo = static_cast<std::uint8_t>(payload[2 * i]);
        const auto hi = static_cast<std::uint8_t>(payload[2 * i + 1]);
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      break;
    } else {
      std::string skip(size + (size & 1), '\0');
      io::get_bytes(is, skip.data(), skip.size(), "WAV chunk");
    }
  }
  if (clip.samples.empty())
    throw FormatError("WAV file has no samples");
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path &path) {
  try {
    return parse_wav(io::read_file(path));
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string encode_wav(const AudioClip &clip) {
  std::ostringstream os;
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  io::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  io::put_u32(os, 16);
  io::put_u8(os, 1);
  io::put_u8(os, 0);
  io::put_u8(os, 1);
  io::put_u8(os, 0);
  io::put_u32(os, static_cast<std::uint32_t>(clip.sample_rate));
  io::put_u32(os, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  io::put_u8(os, 2);
  io::put_u8(os, 0);
  io::put_u8(os, 16);
  io::put_u8(os, 0);
  os.write("data", 4);
  io::put_u32(os, data_bytes);
  for (const float s : clip.samples) {
    const long q = std::lround(std::clamp(s, -1.0f, 1.0f) * 32768.0f);
    const auto v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
    const auto u = static_cast<std::uint16_t>(v);
    io::put_u8(os, static_cast<std::uint8_t>(u & 0xff));
    io::put_u8(os, static_cast<std::uint8_t>(u >> 8));
  }
  return os.str();
}

inline void save_wav(const std::filesystem::path &path, const AudioClip &clip) {
  io::atomic_write(path, encode_wav(clip));
}

struct MelOptions {
  std::size_t n_mels = 80;
  double win_ms = 20.0;
  double hop_ms = 10.0;
  double log_floor = 1e-10;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-scale filterbank spanning 0 Hz to Nyquist. Returns
/// weights [n_mels][n_bins] and the n_mels + 2 band edges in Hz (channel m
/// rises from edges[m], peaks at edges[m+1], falls to edges[m+2]).
struct MelFilterbank {
  std::vector<std::vector<double>> weights;
  std::vector<double> edges_hz;
};

inline MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  MelFilterbank fb;
  fb.edges_hz.resize(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i)
    fb.edges_hz[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  fb.weights.assign(n_mels, std::vector<double>(n_bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = fb.edges_hz[m], c = fb.edges_hz[m + 1], hi = fb.edges_hz[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f >= lo && f <= c && c > lo)
        w = (f - lo) / (c - lo);
      else if (f > c && f <= hi && hi > c)
        w = (hi - f) / (hi - c);
      fb.weights[m][k] = w;
    }
  }
  return fb;
}

inline std::size_t mel_frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  return n_samples < win ? 0 : (n_samples - win) / hop + 1;
}

/// Hann-windowed power spectrum through a real DFT, HTK mel filterbank,
/// natural log with a floor. No centering: frame f covers samples
/// [f*hop, f*hop + win).
inline FeatureSequence mel_spectrogram(const AudioClip &clip, const MelOptions &opt = {}) {
  const auto win = static_cast<std::size_t>(std::lround(clip.sample_rate * opt.win_ms / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(clip.sample_rate * opt.hop_ms / 1000.0));
  if (win == 0 || hop == 0)
    throw ConfigError("mel window and hop must be at least one sample");
  if (clip.samples.size() < win)
    throw DataError("audio clip has " + std::to_string(clip.samples.size()) +
                    " samples, shorter than one window of " + std::to_string(win));
  const std::size_t n_frames = mel_frame_count(clip.samples.size(), win, hop);
  const std::size_t n_fft = win;
  const std::size_t n_bins = n_fft / 2 + 1;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  std::vector<double> cos_t(n_bins * n_fft), sin_t(n_bins * n_fft);
  for (std::size_t k = 0; k < n_bins; ++k)
    for (std::size_t i = 0; i < n_fft; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>((k * i) % n_fft) / static_cast<double>(n_fft);
      cos_t[k * n_fft + i] = std::cos(a);
      sin_t[k * n_fft + i] = std::sin(a);
    }
  const auto fb = mel_filterbank(opt.n_mels, n_fft, clip.sample_rate);

  FeatureSequence out{Tensor<float>(Shape{n_frames, opt.n_mels})};
  std::vector<double> frame(n_fft), power(n_bins);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t i = 0; i < n_fft; ++i)
      frame[i] = clip.samples[f * hop + i] * window[i];
    for (std::size_t k = 0; k < n_bins; ++k) {
      double re = 0.0, im = 0.0;
      const double *ct = &cos_t[k * n_fft];
      const double *st = &sin_t[k * n_fft];
      for (std::size_t i = 0; i < n_fft; ++i) {
        re += frame[i] * ct[i];
        im -= frame[i] * st[i];
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < opt.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k)
        e += fb.weights[m][k] * power[k];
      out.frames[f * opt.n_mels + m] = static_cast<float>(std::log(std::max(e, opt.log_floor)));
    }
  }
  return out;
}

struct SpecAugmentOptions {
  std::size_t f_mask = 27;
  std::size_t t_mask = 80;
  std::size_t n_freq_masks = 1;
  std::size_t n_time_masks = 1;
};

/// Zeroes n_freq_masks bands of width U[0, f_mask] and n_time_masks bands of
/// width U[0, min(t_mask, frames)] in a row-major [frames, mels] block.
inline void spec_augment_inplace(float *frames, std::size_t n_frames, std::size_t n_mels,
                                 const SpecAugmentOptions &opt, Rng &rng) {
  for (std::size_t i = 0; i < opt.n_freq_masks; ++i) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(std::min(opt.f_mask, n_mels))));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_mels - width)));
    for (std::size_t t = 0; t < n_frames; ++t)
      std::fill_n(frames + t * n_mels + start, width, 0.0f);
  }
  for (std::size_t i = 0; i < opt.n_time_masks; ++i) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(std::min(opt.t_mask, n_frames))));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_frames - width)));
    std::fill_n(frames + start * n_mels, width * n_mels, 0.0f);
  }
}

inline FeatureSequence spec_augment(const FeatureSequence &features, const SpecAugmentOptions &opt, Rng &rng) {
  FeatureSequence out{features.frames.clone()};
  spec_augment_inplace(out.frames.values().data(), out.n_frames(), out.n_mels(), opt, rng);
  return out;
}

} // namespace shrink

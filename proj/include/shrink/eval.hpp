// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shrink/dataset.hpp"
#include "shrink/error.hpp"
#include "shrink/losses.hpp"
#include "shrink/model.hpp"
#include "shrink/vocab.hpp"

namespace shrink {

struct EditCounts {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
};

/// Levenshtein distance with unit costs. The S/I/D split comes from a
/// backtrace that prefers the diagonal, then deletion, then insertion.
template <class Tok> EditCounts edit_distance(const std::vector<Tok> &ref, const std::vector<Tok> &hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t & { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i)
    at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j)
    at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});

  EditCounts c;
  c.distance = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const std::size_t cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + cost) {
        c.substitutions += cost;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

enum class WerUnit { word, token };

inline std::vector<std::string> split_units(const std::string &text, WerUnit unit) {
  std::vector<std::string> out;
  if (unit == WerUnit::token) {
    for (auto &c : utf8_chars(text))
      if (c != " " && c != "\t")
        out.push_back(std::move(c));
    return out;
  }
  std::istringstream is(text);
  std::string w;
  while (is >> w)
    out.push_back(w);
  return out;
}

struct UtteranceScore {
  std::size_t index = 0;
  std::string source;
  std::string reference;
  std::string hypothesis;
  std::size_t errors = 0;
  std::size_t ref_units = 0;
};

struct EvalReport {
  double wer = 0.0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_units = 0;
  std::size_t utterances = 0;
  WerUnit unit = WerUnit::word;
  std::size_t n_params = 0;
  std::vector<std::pair<std::string, std::string>> info; // config echo and notes, in insertion order
  std::vector<UtteranceScore> worst;

  std::size_t errors() const { return substitutions + insertions + deletions; }

  std::string summary() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", wer);
    std::string s = std::string("wer=") + buf + " S=" + std::to_string(substitutions) +
                    " I=" + std::to_string(insertions) + " D=" + std::to_string(deletions) +
                    " N=" + std::to_string(ref_units) + " utts=" + std::to_string(utterances) +
                    " unit=" + (unit == WerUnit::word ? "word" : "token") + " params=" + std::to_string(n_params);
    for (const auto &[k, v] : info)
      s += " " + k + "=" + v;
    return s;
  }

  /// key=value lines followed by a `worst:` section of tab-separated rows.
  std::string serialize() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", wer);
    std::ostringstream os;
    os << "wer=" << buf << "\n"
       << "substitutions=" << substitutions << "\n"
       << "insertions=" << insertions << "\n"
       << "deletions=" << deletions << "\n"
       << "ref_units=" << ref_units << "\n"
       << "utterances=" << utterances << "\n"
       << "unit=" << (unit == WerUnit::word ? "word" : "token") << "\n"
       << "params=" << n_params << "\n";
    for (const auto &[k, v] : info)
      os << k << "=" << v << "\n";
    os << "worst:\n";
    for (const auto &w : worst)
      os << w.source << "\terrors=" << w.errors << "/" << w.ref_units << "\tref=" << w.reference
         << "\thyp=" << w.hypothesis << "\n";
    return os.str();
  }
};

/// Pooled WER over (reference, hypothesis) pairs: total edits divided by
/// total reference units.
inline EvalReport corpus_wer(const std::vector<std::pair<std::string, std::string>> &pairs,
                             WerUnit unit = WerUnit::word, std::size_t worst_k = 5,
                             const std::vector<std::string> &sources = {}) {
  if (pairs.empty())
    throw UsageError("corpus_wer needs at least one utterance");
  EvalReport r;
  r.unit = unit;
  r.utterances = pairs.size();
  std::vector<UtteranceScore> scores;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto ref = split_units(pairs[i].first, unit);
    const auto hyp = split_units(pairs[i].second, unit);
    const auto c = edit_distance(ref, hyp);
    r.substitutions += c.substitutions;
    r.insertions += c.insertions;
    r.deletions += c.deletions;
    r.ref_units += ref.size();
    scores.push_back({i, i < sources.size() ? sources[i] : std::to_string(i), pairs[i].first, pairs[i].second,
                      c.distance, ref.size()});
  }
  const std::size_t errors = r.errors();
  if (r.ref_units > 0)
    r.wer = static_cast<double>(errors) / static_cast<double>(r.ref_units);
  else
    r.wer = errors > 0 ? 1.0 : 0.0;
  std::stable_sort(scores.begin(), scores.end(),
                   [](const UtteranceScore &a, const UtteranceScore &b) { return a.errors > b.errors; });
  for (std::size_t i = 0; i < std::min(worst_k, scores.size()); ++i)
    if (scores[i].errors > 0)
      r.worst.push_back(scores[i]);
  return r;
}

/// Synthetic vocabularies have no word separator; every token is then a word.
inline WerUnit wer_unit_for(const Vocabulary &vocab) { return vocab.contains(" ") ? WerUnit::word : WerUnit::token; }

/// Greedy transcripts for a dataset, in dataset order. Runs in eval mode
/// without recording gradients and restores the previous mode.
template <class T>
std::vector<std::string> transcribe(Model<T> &model, const std::vector<Utterance> &data, const Vocabulary &vocab,
                                    std::size_t batch_size = 16) {
  if (vocab.size() != model.config().vocab_size)
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " symbols but the model emits " +
                      std::to_string(model.config().vocab_size));
  const bool was_training = model.is_training();
  model.eval();
  NoGradGuard no_grad;
  std::vector<std::string> out;
  out.reserve(data.size());
  for (const auto &batch : make_batches(data, batch_size, false, nullptr)) {
    const auto enc = model.forward_encoder(batch);
    const auto logits = model.forward_classifier(enc.features);
    for (const auto &ids : ctc_greedy_decode(logits, enc.lengths))
      out.push_back(vocab.detokenize(ids));
  }
  model.train(was_training);
  return out;
}

template <class T>
EvalReport evaluate(Model<T> &model, const std::vector<Utterance> &data, const Vocabulary &vocab,
                    std::size_t worst_k = 5) {
  const auto hyps = transcribe(model, data, vocab);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> sources;
  for (std::size_t i = 0; i < data.size(); ++i) {
    pairs.emplace_back(data[i].transcript, hyps[i]);
    sources.push_back(data[i].source);
  }
  auto report = corpus_wer(pairs, wer_unit_for(vocab), worst_k, sources);
  report.n_params = count_params(model);
  const auto config = model.config().to_json();
  for (const auto &[k, v] : config.items())
    report.info.emplace_back("config." + k, v.dump());
  return report;
}

} // namespace shrink

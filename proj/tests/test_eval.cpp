// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "shrink/eval.hpp"
#include "shrink/train.hpp"
#include "support.hpp"

using namespace shrink;

namespace {

std::vector<char> chars(const std::string &s) { return {s.begin(), s.end()}; }

std::vector<std::vector<int>> all_strings(std::size_t max_len, int alphabet) {
  std::vector<std::vector<int>> out{{}};
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].size() < max_len)
      for (int a = 0; a < alphabet; ++a) {
        auto s = out[i];
        s.push_back(a);
        out.push_back(s);
      }
  return out;
}

const TrainData &corpus() {
  static const TrainData d = [] {
    const auto dir = shrink::testing::temp_dir("eval_corpus");
    SynthOptions so;
    so.n_items = 24;
    so.test_items = 40;
    so.seed = 8;
    const auto r = synth_dataset(so, dir);
    return load_train_data(r.manifest.string(), r.test_manifest.string());
  }();
  return d;
}

} // namespace

TEST(EditDistance, ClassicExample) {
  const auto c = edit_distance(chars("kitten"), chars("sitting"));
  EXPECT_EQ(c.distance, 3u);
  EXPECT_EQ(c.substitutions, 2u);
  EXPECT_EQ(c.insertions, 1u);
  EXPECT_EQ(c.deletions, 0u);
}

TEST(EditDistance, MatchesRecursiveOracleOnShortStrings) {
  // Sampled pairs here; the acceptance run covers every pair exhaustively.
  const auto strings = all_strings(4, 3);
  Rng rng(2);
  for (int i = 0; i < 3000; ++i) {
    const auto &a = strings[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(strings.size()) - 1))];
    const auto &b = strings[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(strings.size()) - 1))];
    const auto c = edit_distance(a, b);
    ASSERT_EQ(c.distance, shrink::testing::edit_distance_recursive(a, b));
    ASSERT_EQ(c.substitutions + c.insertions + c.deletions, c.distance);
    ASSERT_EQ(c.distance, edit_distance(b, a).distance);
  }
}

TEST(EditDistance, TriangleInequality) {
  Rng rng(3);
  const auto strings = all_strings(5, 3);
  auto pick = [&]() -> const std::vector<int> & {
    return strings[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(strings.size()) - 1))];
  };
  for (int i = 0; i < 2000; ++i) {
    const auto &a = pick(), &b = pick(), &c = pick();
    ASSERT_LE(edit_distance(a, c).distance, edit_distance(a, b).distance + edit_distance(b, c).distance);
  }
}

TEST(CorpusWer, PooledOverReferenceWords) {
  const auto one = corpus_wer({{"the cat sat down", "the cat sit down"}});
  EXPECT_DOUBLE_EQ(one.wer, 0.25);
  EXPECT_EQ(one.substitutions, 1u);
  // One error in a 1-word reference plus a perfect 4-word one: pooled 1/5, not
  // the per-utterance mean 1/2.
  const auto pooled = corpus_wer({{"yes", "no"}, {"a b c d", "a b c d"}});
  EXPECT_DOUBLE_EQ(pooled.wer, 0.2);
  EXPECT_EQ(pooled.ref_units, 5u);
  EXPECT_THROW(corpus_wer({}), UsageError);
}

TEST(CorpusWer, OrderInvariantAndReportsWorst) {
  std::vector<std::pair<std::string, std::string>> pairs{{"a b", "a"}, {"c d e", "x d e f"}, {"f", "f"}};
  const auto a = corpus_wer(pairs);
  std::reverse(pairs.begin(), pairs.end());
  const auto b = corpus_wer(pairs);
  EXPECT_DOUBLE_EQ(a.wer, b.wer);
  EXPECT_DOUBLE_EQ(a.wer, 3.0 / 6.0);
  ASSERT_EQ(a.worst.size(), 2u);
  EXPECT_EQ(a.worst[0].reference, "c d e");
  EXPECT_EQ(a.insertions, 1u);
  EXPECT_EQ(a.deletions, 1u);
}

TEST(CorpusWer, TokenUnitsIgnoreSpaces) {
  const auto r = corpus_wer({{"abc", "abd"}}, WerUnit::token);
  EXPECT_NEAR(r.wer, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(split_units("a bc", WerUnit::token), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(wer_unit_for(Vocabulary::from_alphabet("ab")), WerUnit::token);
  EXPECT_EQ(wer_unit_for(Vocabulary::from_alphabet("a b")), WerUnit::word);
}

TEST(Evaluate, RandomModelIsNearChance) {
  Model<Real> m(detail::sized_config(TrainConfig{}, corpus().vocab), 77);
  const auto r = evaluate(m, corpus().eval, corpus().vocab);
  EXPECT_GT(r.wer, 0.8);
  EXPECT_EQ(r.utterances, corpus().eval.size());
}

TEST(Evaluate, OverfitModelScoresZeroOnItsTrainingItems) {
  TrainData two = corpus();
  two.train.resize(2);
  two.eval.clear();
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 2;
  cfg.peak_lr = 3e-3;
  cfg.warmup_steps = 20;
  auto r = train_reference(cfg, two);
  EXPECT_EQ(evaluate(r.model, two.train, two.vocab).wer, 0.0);
}

TEST(Evaluate, IsIdempotentAndEchoesModel) {
  Model<Real> m(detail::sized_config(TrainConfig{}, corpus().vocab), 5);
  m.train();
  const auto a = evaluate(m, corpus().eval, corpus().vocab);
  const auto b = evaluate(m, corpus().eval, corpus().vocab);
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_TRUE(m.is_training()); // mode restored
  EXPECT_EQ(a.n_params, count_params(m));
  const auto has = [&](const std::string &k) {
    return std::any_of(a.info.begin(), a.info.end(), [&](const auto &kv) { return kv.first == k; });
  };
  EXPECT_TRUE(has("config.n_layers"));
  EXPECT_TRUE(has("config.d_model"));
  EXPECT_NE(a.summary().find("params="), std::string::npos);
  EXPECT_EQ(a.summary().find('\n'), std::string::npos);
  EXPECT_THROW(evaluate(m, corpus().eval, Vocabulary::from_alphabet("ab")), ConfigError);
}

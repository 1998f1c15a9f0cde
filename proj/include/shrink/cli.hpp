// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Command-line driver. Every subcommand resolves its settings as
// defaults < --config file < flags (named flags, then --set overrides),
// writes the effective settings to <out>/<phase>/config.txt and only then
// starts work. Failures exit with status 2.

#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shrink/checkpoint.hpp"
#include "shrink/config.hpp"
#include "shrink/dataset.hpp"
#include "shrink/eval.hpp"
#include "shrink/prune.hpp"
#include "shrink/train.hpp"

namespace shrink {

/// Published Table-style WERs (%) of the five EncRL loss variants, shown next
/// to toy results for orientation only.
inline const std::vector<std::pair<EncrlMode, double>> &published_loss_wers() {
  static const std::vector<std::pair<EncrlMode, double>> rows = {{EncrlMode::clip, 9.06},
                                                                 {EncrlMode::mae, 6.40},
                                                                 {EncrlMode::mse, 6.36},
                                                                 {EncrlMode::clip_mae, 6.42},
                                                                 {EncrlMode::clip_mse, 6.27}};
  return rows;
}

inline std::string mode_label(EncrlMode m) {
  switch (m) {
  case EncrlMode::clip:
    return "CLIP";
  case EncrlMode::mae:
    return "MAE";
  case EncrlMode::mse:
    return "MSE";
  case EncrlMode::clip_mae:
    return "CLIP+MAE";
  case EncrlMode::clip_mse:
    return "CLIP+MSE";
  }
  return "?";
}

/// Loads a manifest for scoring with a checkpoint's vocabulary. A vocab.txt
/// beside the manifest must agree with it.
inline std::vector<Utterance> load_for_checkpoint(const std::filesystem::path &manifest, const Vocabulary &vocab) {
  const auto side = manifest.parent_path() / "vocab.txt";
  if (std::filesystem::exists(side) && !(Vocabulary::load(side) == vocab))
    throw ConfigError(side.string() + " does not match the checkpoint vocabulary");
  return load_dataset(manifest, vocab);
}

namespace detail {

struct CliContext {
  std::ostream &out;
  std::ostream &err;
  ConfigMap settings;
  std::filesystem::path out_root;

  std::filesystem::path phase_dir(const std::string &phase) const { return out_root / phase; }

  std::string get(const std::string &key) const { return settings.get(key, ""); }

  std::string require(const std::string &key, const std::string &flag) const {
    const auto v = settings.get(key, "");
    if (v.empty())
      throw ConfigError("missing required setting \"" + key + "\" (" + flag + ")");
    return v;
  }

  void echo(const std::string &phase, const ConfigMap &effective) const {
    const auto dir = phase_dir(phase);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
      throw IoError("cannot create " + dir.string() + ": " + ec.message());
    io::atomic_write(dir / "config.txt", effective.serialize());
  }
};

inline const std::vector<std::string> &cli_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = TrainConfig::keys();
    for (const char *extra : {"items", "test_items", "vocab_size", "noise", "checkpoint", "manifest", "fraction",
                              "exclude_conv", "wav", "features"})
      k.emplace_back(extra);
    return k;
  }();
  return keys;
}

inline TrainConfig train_config(const CliContext &ctx, const std::string &phase) {
  ConfigMap m = ctx.settings;
  m.set("phase", phase);
  return TrainConfig::from_map(m);
}

/// Effective settings: every train key with its resolved value, plus any
/// extra keys the user gave.
inline ConfigMap effective(const CliContext &ctx, const TrainConfig &cfg) {
  ConfigMap e = ctx.settings;
  e.merge(cfg.to_map());
  return e;
}

inline TrainOutputs outputs(const CliContext &ctx, const std::string &phase) {
  TrainOutputs o;
  o.dir = ctx.phase_dir(phase);
  std::ostream *err = &ctx.err;
  o.progress = [err](const std::string &line) {
    if (line.rfind("kind=epoch", 0) == 0 || line.rfind("kind=warning", 0) == 0)
      *err << line << "\n";
  };
  return o;
}

/// Re-reads the phase artifacts so a zero exit status means they load.
inline void verify_artifacts(const std::filesystem::path &dir) {
  (void)load_checkpoint<Real>(dir / "best.ckpt");
  (void)load_checkpoint<Real>(dir / "final.ckpt");
  (void)io::read_file(dir / "run.log");
}

inline void print_result(const CliContext &ctx, const std::string &phase, const TrainResult &r) {
  ctx.out << "phase=" << phase << " epochs=" << r.epochs << " best_epoch=" << r.best_epoch
          << " best_metric=" << RunLog::num(r.best_metric) << " dir=" << ctx.phase_dir(phase).string() << "\n";
}

inline int cmd_synth(CliContext &ctx) {
  SynthOptions so;
  so.n_items = ctx.settings.get_uint("items", so.n_items);
  so.test_items = ctx.settings.get_uint("test_items", so.test_items);
  so.vocab_size = ctx.settings.get_uint("vocab_size", so.vocab_size);
  so.seed = ctx.settings.get_uint("seed", so.seed);
  so.n_mels = ctx.settings.get_uint("n_mels", so.n_mels);
  so.noise = ctx.settings.get_double("noise", so.noise);
  if (so.n_items == 0)
    throw ConfigError("items must be positive");
  ConfigMap e = ctx.settings;
  e.set("items", std::to_string(so.n_items));
  e.set("test_items", std::to_string(so.test_items));
  e.set("vocab_size", std::to_string(so.vocab_size));
  e.set("seed", std::to_string(so.seed));
  e.set("n_mels", std::to_string(so.n_mels));
  e.set("noise", RunLog::num(so.noise));
  ctx.echo("synth", e);
  const auto res = synth_dataset(so, ctx.phase_dir("synth"));
  ctx.out << res.manifest.string() << "\n";
  if (!res.test_manifest.empty())
    ctx.out << res.test_manifest.string() << "\n";
  return 0;
}

inline int cmd_train_reference(CliContext &ctx) {
  const auto cfg = train_config(ctx, "reference");
  ctx.echo("reference", effective(ctx, cfg));
  const auto data = load_train_data(ctx.require("train", "--train"), cfg.eval_manifest);
  const auto r = train_reference(cfg, data, outputs(ctx, "reference"));
  verify_artifacts(ctx.phase_dir("reference"));
  print_result(ctx, "reference", r);
  return 0;
}

inline TrainResult run_encrl(const CliContext &ctx, const TrainConfig &cfg, const std::string &phase_dir) {
  const auto ref_ck = load_checkpoint<Real>(ctx.require("reference", "--reference"));
  const auto reference = model_from_checkpoint(ref_ck);
  const auto data = load_train_data(ctx.require("train", "--train"), cfg.eval_manifest, ref_ck.vocab);
  std::optional<Checkpoint<Real>> init;
  if (!cfg.init.empty())
    init = load_checkpoint<Real>(cfg.init);
  auto r = train_encrl(cfg, reference, data, init ? &*init : nullptr, outputs(ctx, phase_dir));
  verify_artifacts(ctx.phase_dir(phase_dir));
  return r;
}

inline int cmd_encrl(CliContext &ctx) {
  const auto cfg = train_config(ctx, "encrl");
  ctx.echo("encrl", effective(ctx, cfg));
  print_result(ctx, "encrl", run_encrl(ctx, cfg, "encrl"));
  return 0;
}

inline TrainResult run_finetune(const CliContext &ctx, const TrainConfig &cfg, const std::string &init_path,
                                const std::string &phase_dir) {
  const auto source = load_checkpoint<Real>(init_path);
  const auto data = load_train_data(ctx.require("train", "--train"), cfg.eval_manifest, source.vocab);
  auto r = finetune(cfg, source, data, outputs(ctx, phase_dir));
  verify_artifacts(ctx.phase_dir(phase_dir));
  return r;
}

inline int cmd_finetune(CliContext &ctx) {
  const auto cfg = train_config(ctx, "finetune");
  ctx.echo("finetune", effective(ctx, cfg));
  print_result(ctx, "finetune", run_finetune(ctx, cfg, ctx.require("init", "--init"), "finetune"));
  return 0;
}

inline int cmd_evaluate(CliContext &ctx) {
  ctx.echo("evaluate", ctx.settings);
  const auto ck = load_checkpoint<Real>(ctx.require("checkpoint", "--checkpoint"));
  auto model = model_from_checkpoint(ck);
  const auto data = load_for_checkpoint(ctx.require("manifest", "--manifest"), ck.vocab);
  auto report = evaluate(model, data, ck.vocab);
  report.info.emplace_back("checkpoint", ctx.get("checkpoint"));
  for (const char *key : {"prune_fraction", "exclude_conv"})
    if (ck.meta.extra.contains(key))
      report.info.emplace_back(key, ck.meta.extra.at(key).dump());
  io::atomic_write(ctx.phase_dir("evaluate") / "report.txt", report.serialize());
  ctx.out << report.summary() << "\n";
  return 0;
}

inline int cmd_prune(CliContext &ctx) {
  const double fraction = ctx.settings.get_double("fraction", 0.05);
  const bool exclude_conv = ctx.settings.get_bool("exclude_conv", false);
  ConfigMap e = ctx.settings;
  e.set("fraction", RunLog::num(fraction));
  e.set("exclude_conv", exclude_conv ? "true" : "false");
  ctx.echo("prune", e);
  auto ck = load_checkpoint<Real>(ctx.require("checkpoint", "--checkpoint"));
  auto model = model_from_checkpoint(ck);
  const auto pr = magnitude_prune(model, fraction, exclude_conv);
  const auto dir = ctx.phase_dir("prune");
  nlohmann::json extra = ck.meta.extra;
  extra["prune_fraction"] = fraction;
  extra["exclude_conv"] = exclude_conv;
  save_checkpoint(model, ck.vocab, CheckpointMeta{ck.meta.phase, ck.meta.epoch, ck.meta.seed, extra},
                  dir / "pruned.ckpt");
  (void)load_checkpoint<Real>(dir / "pruned.ckpt");
  EvalReport report;
  const std::string manifest = ctx.get("manifest");
  if (!manifest.empty())
    report = evaluate(model, load_for_checkpoint(manifest, ck.vocab), ck.vocab);
  else
    report.n_params = count_params(model);
  report.info.emplace_back("prune_fraction", RunLog::num(fraction));
  report.info.emplace_back("exclude_conv", exclude_conv ? "true" : "false");
  report.info.emplace_back("n_eligible", std::to_string(pr.n_eligible));
  report.info.emplace_back("n_pruned", std::to_string(pr.n_pruned));
  io::atomic_write(dir / "report.txt", report.serialize());
  if (manifest.empty())
    ctx.out << "prune_fraction=" << RunLog::num(fraction) << " exclude_conv=" << (exclude_conv ? "true" : "false")
            << " n_eligible=" << pr.n_eligible << " n_pruned=" << pr.n_pruned << "\n";
  else
    ctx.out << report.summary() << "\n";
  return 0;
}

inline int cmd_decode(CliContext &ctx) {
  ctx.echo("decode", ctx.settings);
  const auto ck = load_checkpoint<Real>(ctx.require("checkpoint", "--checkpoint"));
  auto model = model_from_checkpoint(ck);
  std::string input = ctx.get("wav");
  if (input.empty())
    input = ctx.get("features");
  if (input.empty())
    throw ConfigError("decode needs --wav or --features");
  Utterance u{input, "", load_features(input), {}};
  if (u.features.n_frames() == 0)
    throw DataError(input + ": no feature frames");
  const auto text = transcribe(model, std::vector<Utterance>{u}, ck.vocab);
  ctx.out << text.at(0) << "\n";
  return 0;
}

inline int cmd_ablate_losses(CliContext &ctx) {
  const auto base = train_config(ctx, "encrl");
  ctx.echo("ablate-losses", effective(ctx, base));
  ctx.require("eval", "--eval");
  std::vector<std::pair<EncrlMode, double>> results;
  for (const auto &[mode, paper] : published_loss_wers()) {
    // Identical seeds for every mode; only the loss differs.
    TrainConfig enc = base;
    enc.loss_mode = mode;
    const std::string sub = "ablate-losses/" + to_string(mode);
    ctx.err << "mode=" << to_string(mode) << "\n";
    (void)run_encrl(ctx, enc, sub + "/encrl");
    ConfigMap fm = ctx.settings;
    fm.set("phase", "finetune");
    fm.set("loss", to_string(mode));
    fm.set("init", (ctx.phase_dir(sub + "/encrl") / "best.ckpt").string());
    const auto ft_cfg = TrainConfig::from_map(fm);
    const auto ft = run_finetune(ctx, ft_cfg, ft_cfg.init, sub + "/finetune");
    auto best = model_from_checkpoint(ft.best);
    const auto data = load_for_checkpoint(base.eval_manifest, ft.best.vocab);
    results.emplace_back(mode, evaluate(best, data, ft.best.vocab).wer);
  }
  std::string table = "Loss       WER(toy,%)  WER(%, paper, not reproduced)\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %10.2f  %10.2f\n", mode_label(results[i].first).c_str(),
                  100.0 * results[i].second, published_loss_wers()[i].second);
    table += line;
  }
  io::atomic_write(ctx.phase_dir("ablate-losses") / "table.txt", table);
  ctx.out << table;
  return 0;
}

} // namespace detail

/// Runs one CLI invocation; returns the process exit status.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  CLI::App app{"Two-phase compression toolkit for CTC speech encoders"};
  app.require_subcommand(1);
  std::string config_file;
  std::string out_dir = "runs";
  std::vector<std::string> overrides;
  ConfigMap flags;

  struct Sub {
    const char *name;
    const char *help;
    std::function<int(detail::CliContext &)> run;
  };
  const std::vector<Sub> subs = {
      {"synth", "Write a synthetic feature corpus", detail::cmd_synth},
      {"train-reference", "Train the reference model with CTC", detail::cmd_train_reference},
      {"encrl", "Encoder representation learning against a frozen reference", detail::cmd_encrl},
      {"finetune", "CTC finetuning from an EncRL (or any) checkpoint", detail::cmd_finetune},
      {"evaluate", "Score a checkpoint on a manifest", detail::cmd_evaluate},
      {"prune", "Global magnitude pruning of a checkpoint", detail::cmd_prune},
      {"decode", "Transcribe one WAV or feature file", detail::cmd_decode},
      {"ablate-losses", "EncRL + finetune once per loss variant", detail::cmd_ablate_losses},
  };

  // Named flags that map onto settings keys.
  struct Flag {
    const char *flag;
    const char *key;
    const char *help;
  };
  const std::vector<Flag> value_flags = {
      {"--seed", "seed", "Run seed"},
      {"--train", "train", "Training manifest"},
      {"--eval", "eval", "Evaluation manifest"},
      {"--manifest", "manifest", "Manifest to score"},
      {"--reference", "reference", "Frozen reference checkpoint"},
      {"--init", "init", "Checkpoint to initialize from"},
      {"--checkpoint", "checkpoint", "Model checkpoint"},
      {"--layers", "layers", "Encoder depth"},
      {"--slice", "slice", "Source layers: first, last or i,j,k"},
      {"--loss", "loss", "EncRL loss: clip, mae, mse, clip+mae, clip+mse"},
      {"--z", "z", "Reference epoch budget"},
      {"--epochs", "epochs", "Explicit epoch count"},
      {"--lr", "lr", "Peak learning rate"},
      {"--batch-size", "batch_size", "Batch size"},
      {"--items", "items", "Synthetic training items"},
      {"--test-items", "test_items", "Synthetic test items"},
      {"--vocab-size", "vocab_size", "Synthetic vocabulary size including blank"},
      {"--fraction", "fraction", "Fraction of eligible weights to prune"},
      {"--wav", "wav", "WAV file to decode"},
      {"--features", "features", "Feature file to decode"},
  };
  const std::vector<Flag> bool_flags = {
      {"--exclude-conv", "exclude_conv", "Leave convolution parameters unpruned"},
      {"--fresh-head", "fresh_head", "Do not reuse the source classifier"},
      {"--augment", "augment", "Enable SpecAugment"},
  };

  for (const auto &s : subs) {
    auto *sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", config_file, "key=value settings file");
    sc->add_option("--out", out_dir, "Output root directory")->capture_default_str();
    sc->add_option("--set", overrides, "Override a setting (key=value); repeatable");
    for (const auto &f : value_flags) {
      const std::string key = f.key;
      sc->add_option_function<std::string>(f.flag, [&flags, key](const std::string &v) { flags.set(key, v); }, f.help);
    }
    for (const auto &f : bool_flags) {
      const std::string key = f.key;
      sc->add_flag_function(f.flag, [&flags, key](std::int64_t) { flags.set(key, "true"); }, f.help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    detail::CliContext ctx{out, err, {}, out_dir};
    if (!config_file.empty())
      ctx.settings = ConfigMap::load(config_file);
    ctx.settings.merge(flags);
    for (const auto &o : overrides)
      ctx.settings.set_assignment(o);
    ctx.settings.require_known(detail::cli_keys());
    for (const auto &s : subs)
      if (app.got_subcommand(s.name))
        return s.run(ctx);
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

} // namespace shrink

// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// The three training phases: CTC training of a reference model, encoder
// representation learning (EncRL) of a shallower model against the frozen
// reference, and CTC finetuning of an EncRL encoder.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shrink/checkpoint.hpp"
#include "shrink/config.hpp"
#include "shrink/dataset.hpp"
#include "shrink/eval.hpp"
#include "shrink/losses.hpp"
#include "shrink/model.hpp"
#include "shrink/optim.hpp"
#include "shrink/rng.hpp"

namespace shrink {

using Real = float;

/// floor(num / den + 1/2) for non-negative integers.
inline std::size_t round_half_up(std::size_t num, std::size_t den) { return (2 * num + den) / (2 * den); }

inline std::size_t encrl_epochs(std::size_t z) { return round_half_up(2 * z, 3); }
inline std::size_t finetune_epochs(std::size_t z) { return round_half_up(z, 3); }

/// Epoch accounting for one reference plus `w` lightweight depths.
struct BudgetPlan {
  std::size_t z = 0, w = 0;
  std::size_t reference = 0;
  std::size_t encrl = 0;
  std::size_t finetune_each = 0;
  std::size_t finetune_total = 0;
  std::size_t scratch_total = 0; // every depth trained from scratch for z epochs
};

inline BudgetPlan plan_budget(std::size_t z, std::size_t w) {
  BudgetPlan p;
  p.z = z;
  p.w = w;
  p.reference = z;
  p.encrl = encrl_epochs(z);
  p.finetune_each = finetune_epochs(z);
  p.finetune_total = w * p.finetune_each;
  p.scratch_total = w * z;
  return p;
}

struct TrainConfig {
  std::string phase = "reference"; // reference | encrl | finetune
  ModelConfig model;                // vocab_size is taken from the data
  std::size_t z = 30;
  std::size_t epochs = 0; // 0: derive from z and phase
  std::size_t batch_size = 16;
  double peak_lr = 3e-4;
  std::uint64_t warmup_steps = 100;
  double gamma = 0.99995;
  double weight_decay = 1e-6;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  EncrlMode loss_mode = EncrlMode::clip_mse;
  EncrlWeights weights;
  double tau = 0.07;
  bool augment = false;
  SpecAugmentOptions augment_opts;
  bool sort_by_length = true;
  std::string slice = "first";
  bool fresh_head = false;
  std::size_t log_every = 1;

  std::string train_manifest;
  std::string eval_manifest;
  std::string reference; // checkpoint of the frozen reference (encrl)
  std::string init;      // checkpoint to initialize from (finetune; optional for encrl)

  std::size_t epoch_budget() const {
    if (epochs > 0)
      return epochs;
    if (phase == "encrl")
      return encrl_epochs(z);
    if (phase == "finetune")
      return finetune_epochs(z);
    return z;
  }

  std::string budget_rule() const {
    if (epochs > 0)
      return "explicit";
    if (phase == "encrl")
      return "round_half_up(2z/3)";
    if (phase == "finetune")
      return "round_half_up(z/3)";
    return "z";
  }

  void validate() const {
    if (phase != "reference" && phase != "encrl" && phase != "finetune")
      throw ConfigError("phase must be reference, encrl or finetune, got \"" + phase + "\"");
    if (epoch_budget() < 1)
      throw ConfigError("epoch budget for phase " + phase + " with z=" + std::to_string(z) + " is zero");
    if (batch_size < 1)
      throw ConfigError("batch_size must be positive");
    if (!(peak_lr > 0.0))
      throw ConfigError("lr must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw ConfigError("gamma must be in (0, 1]");
    if (weight_decay < 0.0)
      throw ConfigError("weight_decay must be non-negative");
    if (!(tau > 0.0))
      throw ConfigError("tau must be positive");
    if (log_every < 1)
      throw ConfigError("log_every must be positive");
  }

  static const std::vector<std::string> &keys() {
    static const std::vector<std::string> k = {
        "phase",   "layers",  "d_model",     "ff_dim",   "heads",     "conv_kernel", "subsample",  "dropout",
        "n_mels",  "z",       "epochs",      "batch_size", "lr",      "warmup",      "gamma",      "weight_decay",
        "grad_clip", "seed",  "loss",        "tau",      "w_clip",    "w_mse",       "w_mae",      "augment",
        "freq_mask", "time_mask", "sort_by_length", "slice", "fresh_head", "log_every", "train", "eval",
        "reference", "init"};
    return k;
  }

  static TrainConfig from_map(const ConfigMap &m) {
    TrainConfig c;
    c.phase = m.get("phase", c.phase);
    c.model.n_layers = m.get_uint("layers", c.model.n_layers);
    c.model.d_model = m.get_uint("d_model", c.model.d_model);
    c.model.ff_dim = m.get_uint("ff_dim", c.model.ff_dim);
    c.model.n_heads = m.get_uint("heads", c.model.n_heads);
    c.model.conv_kernel = m.get_uint("conv_kernel", c.model.conv_kernel);
    c.model.subsample = m.get_uint("subsample", c.model.subsample);
    c.model.dropout = m.get_double("dropout", c.model.dropout);
    c.model.n_mels = m.get_uint("n_mels", c.model.n_mels);
    c.z = m.get_uint("z", c.z);
    c.epochs = m.get_uint("epochs", c.epochs);
    c.batch_size = m.get_uint("batch_size", c.batch_size);
    c.peak_lr = m.get_double("lr", c.peak_lr);
    c.warmup_steps = m.get_uint("warmup", c.warmup_steps);
    c.gamma = m.get_double("gamma", c.gamma);
    c.weight_decay = m.get_double("weight_decay", c.weight_decay);
    c.grad_clip = m.get_double("grad_clip", c.grad_clip);
    c.seed = m.get_uint("seed", c.seed);
    c.loss_mode = parse_encrl_mode(m.get("loss", to_string(c.loss_mode)));
    c.tau = m.get_double("tau", c.tau);
    c.weights.clip = m.get_double("w_clip", c.weights.clip);
    c.weights.mse = m.get_double("w_mse", c.weights.mse);
    c.weights.mae = m.get_double("w_mae", c.weights.mae);
    c.augment = m.get_bool("augment", c.augment);
    c.augment_opts.f_mask = m.get_uint("freq_mask", c.augment_opts.f_mask);
    c.augment_opts.t_mask = m.get_uint("time_mask", c.augment_opts.t_mask);
    c.sort_by_length = m.get_bool("sort_by_length", c.sort_by_length);
    c.slice = m.get("slice", c.slice);
    c.fresh_head = m.get_bool("fresh_head", c.fresh_head);
    c.log_every = m.get_uint("log_every", c.log_every);
    c.train_manifest = m.get("train", c.train_manifest);
    c.eval_manifest = m.get("eval", c.eval_manifest);
    c.reference = m.get("reference", c.reference);
    c.init = m.get("init", c.init);
    c.validate();
    return c;
  }

  ConfigMap to_map() const {
    ConfigMap m;
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", v);
      return std::string(buf);
    };
    m.set("phase", phase);
    m.set("layers", std::to_string(model.n_layers));
    m.set("d_model", std::to_string(model.d_model));
    m.set("ff_dim", std::to_string(model.ff_dim));
    m.set("heads", std::to_string(model.n_heads));
    m.set("conv_kernel", std::to_string(model.conv_kernel));
    m.set("subsample", std::to_string(model.subsample));
    m.set("dropout", num(model.dropout));
    m.set("n_mels", std::to_string(model.n_mels));
    m.set("z", std::to_string(z));
    m.set("epochs", std::to_string(epochs));
    m.set("batch_size", std::to_string(batch_size));
    m.set("lr", num(peak_lr));
    m.set("warmup", std::to_string(warmup_steps));
    m.set("gamma", num(gamma));
    m.set("weight_decay", num(weight_decay));
    m.set("grad_clip", num(grad_clip));
    m.set("seed", std::to_string(seed));
    m.set("loss", to_string(loss_mode));
    m.set("tau", num(tau));
    m.set("w_clip", num(weights.clip));
    m.set("w_mse", num(weights.mse));
    m.set("w_mae", num(weights.mae));
    m.set("augment", augment ? "true" : "false");
    m.set("freq_mask", std::to_string(augment_opts.f_mask));
    m.set("time_mask", std::to_string(augment_opts.t_mask));
    m.set("sort_by_length", sort_by_length ? "true" : "false");
    m.set("slice", slice);
    m.set("fresh_head", fresh_head ? "true" : "false");
    m.set("log_every", std::to_string(log_every));
    m.set("train", train_manifest);
    m.set("eval", eval_manifest);
    m.set("reference", reference);
    m.set("init", init);
    return m;
  }
};

/// Append-only record list; each record is one line of space-separated
/// key=value pairs. Contains no timings, so equal runs give equal logs.
class RunLog {
public:
  using Fields = std::vector<std::pair<std::string, std::string>>;

  static std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }

  void record(const std::string &kind, const Fields &fields) {
    std::string line = "kind=" + kind;
    for (const auto &[k, v] : fields) {
      line += " " + k + "=";
      for (const char ch : v)
        line += (ch == ' ' || ch == '\n' || ch == '\t') ? '_' : ch;
    }
    lines_.push_back(std::move(line));
    if (sink_)
      sink_(lines_.back());
  }

  const std::vector<std::string> &lines() const { return lines_; }

  std::vector<std::string> lines_of(const std::string &kind) const {
    std::vector<std::string> out;
    const std::string prefix = "kind=" + kind + " ";
    for (const auto &l : lines_)
      if (l.rfind(prefix, 0) == 0 || l == "kind=" + kind)
        out.push_back(l);
    return out;
  }

  /// Value of `key` in a record line, or empty.
  static std::string field(const std::string &line, const std::string &key) {
    const std::string needle = key + "=";
    std::size_t pos = 0;
    while ((pos = line.find(needle, pos)) != std::string::npos) {
      if (pos == 0 || line[pos - 1] == ' ') {
        const auto start = pos + needle.size();
        return line.substr(start, line.find(' ', start) - start);
      }
      ++pos;
    }
    return "";
  }

  std::string text() const {
    std::string out;
    for (const auto &l : lines_)
      out += l + "\n";
    return out;
  }

  void save(const std::filesystem::path &path) const { io::atomic_write(path, text()); }

  /// Called with every new line (progress output).
  void set_sink(std::function<void(const std::string &)> sink) { sink_ = std::move(sink); }

private:
  std::vector<std::string> lines_;
  std::function<void(const std::string &)> sink_;
};

struct TrainData {
  Vocabulary vocab;
  std::vector<Utterance> train;
  std::vector<Utterance> eval; // may be empty
};

/// Loads manifests. The vocabulary comes from `vocab_override` when set, else
/// from vocab.txt beside the training manifest, else from its transcripts.
inline TrainData load_train_data(const std::string &train_manifest, const std::string &eval_manifest,
                                 const std::optional<Vocabulary> &vocab_override = std::nullopt) {
  if (train_manifest.empty())
    throw ConfigError("no training manifest given (key \"train\")");
  TrainData d;
  const std::filesystem::path tm = train_manifest;
  if (vocab_override) {
    d.vocab = *vocab_override;
  } else if (std::filesystem::exists(tm.parent_path() / "vocab.txt")) {
    d.vocab = Vocabulary::load(tm.parent_path() / "vocab.txt");
  } else {
    std::vector<std::string> texts;
    for (const auto &e : read_manifest(tm))
      texts.push_back(e.transcript);
    d.vocab = Vocabulary::from_transcripts(texts);
  }
  d.train = load_dataset(tm, d.vocab);
  if (!eval_manifest.empty())
    d.eval = load_dataset(eval_manifest, d.vocab);
  return d;
}

struct TrainResult {
  explicit TrainResult(Model<Real> m) : model(std::move(m)) {}

  Model<Real> model; // state after the last epoch
  Checkpoint<Real> best;
  RunLog log;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  std::vector<double> epoch_loss;
  std::vector<double> epoch_wer; // empty without eval data
};

/// Where a phase writes best.ckpt, final.ckpt and run.log; empty disables.
struct TrainOutputs {
  std::filesystem::path dir;
  std::function<void(const std::string &)> progress;
};

namespace detail {

inline Tensor<Real> ctc_batch_loss(const Batch &batch, const EncoderOutput<Real> &enc, const Tensor<Real> &logits) {
  std::vector<std::vector<int>> targets;
  for (std::size_t b = 0; b < batch.size(); ++b)
    targets.push_back(batch.target(b));
  return mean(ctc_loss(log_softmax(logits, -1), enc.lengths, targets));
}

inline void check_feasible(const std::vector<Utterance> &data, const ModelConfig &mc, const std::string &what) {
  for (const auto &u : data) {
    const auto frames = mc.output_length(u.features.n_frames());
    if (ctc_min_frames(u.tokens) > frames)
      throw DataError(what + " item " + u.source + ": " + std::to_string(u.tokens.size()) + " tokens need more than " +
                      std::to_string(frames) + " encoder frames");
    if (u.features.n_mels() != mc.n_mels)
      throw DataError(what + " item " + u.source + " has " + std::to_string(u.features.n_mels()) +
                      " mel channels, model expects " + std::to_string(mc.n_mels));
  }
}

/// Shared epoch loop. `step_loss` runs the forward pass for one batch and
/// returns the scalar loss plus extra per-step log fields.
class Trainer {
public:
  using StepFn = std::function<std::pair<Tensor<Real>, RunLog::Fields>(const Batch &)>;

  Trainer(const TrainConfig &cfg, Model<Real> &model, RunLog &log)
      : cfg_(cfg), model_(model), log_(log), streams_(set_global_seed(cfg.seed)),
        opt_(model.parameters(), AdamWOptions{0.9, 0.999, 1e-8, cfg.weight_decay}) {
    model_.seed_dropout(streams_.dropout.next_u64());
  }

  SeedStreams &streams() { return streams_; }

  /// Runs one epoch and returns the mean training loss.
  double epoch(std::size_t epoch_index, const std::vector<Utterance> &data, const StepFn &step_loss) {
    auto batches = make_batches(data, cfg_.batch_size, cfg_.sort_by_length, &streams_.data);
    auto &tape = Tape<Real>::current();
    double total = 0.0;
    for (auto &batch : batches) {
      if (cfg_.augment)
        augment_batch(batch, cfg_.augment_opts, streams_.augment);
      model_.train();
      tape.reset();
      model_.zero_grad();
      auto [loss, fields] = step_loss(batch);
      const double value = static_cast<double>(loss.item());
      backward(loss);
      tape.reset();
      const double norm = clip_grad_norm(model_.parameters(), cfg_.grad_clip);
      const double lr = lr_at(opt_.step_count() + 1, cfg_.peak_lr, cfg_.warmup_steps, cfg_.gamma);
      opt_.step(lr);
      total += value;
      if (opt_.step_count() % cfg_.log_every == 0) {
        RunLog::Fields f = {{"phase", cfg_.phase},
                            {"epoch", std::to_string(epoch_index)},
                            {"step", std::to_string(opt_.step_count())},
                            {"lr", RunLog::num(lr)},
                            {"loss.total", RunLog::num(value)}};
        f.insert(f.end(), fields.begin(), fields.end());
        f.emplace_back("grad_norm", RunLog::num(norm));
        log_.record("step", f);
      }
    }
    model_.zero_grad();
    model_.eval();
    return total / static_cast<double>(batches.size());
  }

private:
  const TrainConfig &cfg_;
  Model<Real> &model_;
  RunLog &log_;
  SeedStreams streams_;
  AdamW<Real> opt_;
};

inline void log_header(RunLog &log, const TrainConfig &cfg, const Model<Real> &model) {
  RunLog::Fields f;
  const ConfigMap echo = cfg.to_map();
  for (const auto &[k, v] : echo.values())
    f.emplace_back(k, v);
  log.record("config", f);
  log.record("budget", {{"phase", cfg.phase},
                        {"z", std::to_string(cfg.z)},
                        {"epochs", std::to_string(cfg.epoch_budget())},
                        {"rule", cfg.budget_rule()}});
  log.record("model", {{"layers", std::to_string(model.config().n_layers)},
                       {"params", std::to_string(count_params(model))},
                       {"vocab_size", std::to_string(model.config().vocab_size)}});
}

/// Epoch bookkeeping shared by the CTC phases: evaluates, logs and keeps the
/// best checkpoint (lowest WER, or lowest train loss without eval data).
inline void finish_ctc_epoch(TrainResult &r, const TrainConfig &cfg, const TrainData &data, std::size_t epoch,
                             double train_loss) {
  r.epoch_loss.push_back(train_loss);
  RunLog::Fields f = {{"phase", cfg.phase}, {"epoch", std::to_string(epoch)}, {"train_loss", RunLog::num(train_loss)}};
  double metric = train_loss;
  if (!data.eval.empty()) {
    const auto report = evaluate(r.model, data.eval, data.vocab);
    r.epoch_wer.push_back(report.wer);
    metric = report.wer;
    f.emplace_back("wer", RunLog::num(report.wer));
  }
  r.log.record("epoch", f);
  if (metric < r.best_metric) {
    r.best_metric = metric;
    r.best_epoch = epoch;
    r.best = snapshot(r.model, data.vocab, CheckpointMeta{cfg.phase, epoch, cfg.seed, {}});
  }
}

inline void write_outputs(TrainResult &r, const TrainConfig &cfg, const TrainData &data, const TrainOutputs &out) {
  r.log.record("done", {{"phase", cfg.phase},
                        {"epochs", std::to_string(r.epochs)},
                        {"best_epoch", std::to_string(r.best_epoch)},
                        {"best_metric", RunLog::num(r.best_metric)}});
  if (out.dir.empty())
    return;
  std::error_code ec;
  std::filesystem::create_directories(out.dir, ec);
  if (ec)
    throw IoError("cannot create " + out.dir.string() + ": " + ec.message());
  nlohmann::json extra = {{"z", cfg.z},
                          {"epochs", r.epochs},
                          {"budget_rule", cfg.budget_rule()},
                          {"best_epoch", r.best_epoch},
                          {"best_metric", r.best_metric}};
  if (cfg.phase == "encrl")
    extra["loss"] = to_string(cfg.loss_mode);
  r.best.meta.extra = extra;
  save_checkpoint(r.model, data.vocab, CheckpointMeta{cfg.phase, r.epochs, cfg.seed, extra}, out.dir / "final.ckpt");
  auto best_model = model_from_checkpoint(r.best);
  save_checkpoint(best_model, data.vocab, r.best.meta, out.dir / "best.ckpt");
  r.log.save(out.dir / "run.log");
}

inline ModelConfig sized_config(const TrainConfig &cfg, const Vocabulary &vocab) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

inline void run_ctc_phase(TrainResult &r, const TrainConfig &cfg, const TrainData &data, Trainer &trainer,
                          const TrainOutputs &out) {
  const std::size_t epochs = cfg.epoch_budget();
  for (std::size_t e = 1; e <= epochs; ++e) {
    const double loss = trainer.epoch(e, data.train, [&](const Batch &batch) {
      const auto enc = r.model.forward_encoder(batch);
      const auto logits = r.model.forward_classifier(enc.features);
      auto l = ctc_batch_loss(batch, enc, logits);
      return std::make_pair(l, RunLog::Fields{{"loss.ctc", RunLog::num(l.item())}});
    });
    r.epochs = e;
    finish_ctc_epoch(r, cfg, data, e, loss);
  }
  write_outputs(r, cfg, data, out);
}

} // namespace detail

/// CTC training of an N-layer model from random initialization for z epochs.
inline TrainResult train_reference(const TrainConfig &cfg, const TrainData &data, const TrainOutputs &out = {}) {
  cfg.validate();
  const ModelConfig mc = detail::sized_config(cfg, data.vocab);
  detail::check_feasible(data.train, mc, "training");
  TrainResult r(Model<Real>(mc, set_global_seed(cfg.seed).init));
  r.log.set_sink(out.progress);
  detail::log_header(r.log, cfg, r.model);
  detail::Trainer trainer(cfg, r.model, r.log);
  detail::run_ctc_phase(r, cfg, data, trainer, out);
  return r;
}

/// EncRL: trains an M-layer encoder and classifier to match the frozen
/// reference's pooled encoder features and frame logits. The lightweight
/// model starts from random weights, or from `init` through the slice spec.
inline TrainResult train_encrl(const TrainConfig &cfg, const Model<Real> &reference, const TrainData &data,
                               const Checkpoint<Real> *init = nullptr, const TrainOutputs &out = {}) {
  cfg.validate();
  const ModelConfig mc = detail::sized_config(cfg, data.vocab);
  const ModelConfig &rc = reference.config();
  if (rc.vocab_size != mc.vocab_size)
    throw ConfigError("reference emits " + std::to_string(rc.vocab_size) + " symbols but the data vocabulary has " +
                      std::to_string(mc.vocab_size));
  if (rc.d_model != mc.d_model || rc.subsample != mc.subsample || rc.n_mels != mc.n_mels)
    throw ConfigError("lightweight model must share d_model, subsample and n_mels with the reference");

  TrainResult r(Model<Real>(mc, set_global_seed(cfg.seed).init));
  r.log.set_sink(out.progress);
  detail::log_header(r.log, cfg, r.model);
  if (2 * mc.n_layers > rc.n_layers)
    r.log.record("warning", {{"message", "lightweight depth " + std::to_string(mc.n_layers) +
                                             " exceeds half the reference depth " + std::to_string(rc.n_layers)}});
  if (init) {
    const auto rep = init_from_slice(r.model, *init, resolve_slice(cfg.slice, mc.n_layers, init->config.n_layers));
    r.log.record("init", {{"slice", cfg.slice}, {"frontend", rep.frontend_copied ? "copied" : "fresh"},
                          {"classifier", rep.classifier_copied ? "copied" : "fresh"}});
  }

  // The reference runs on its own copy with gradients off; it is never
  // handed to the optimizer.
  Model<Real> ref = reference.clone();
  ref.set_requires_grad(false);
  ref.eval();

  detail::Trainer trainer(cfg, r.model, r.log);
  const std::size_t epochs = cfg.epoch_budget();
  for (std::size_t e = 1; e <= epochs; ++e) {
    const double loss = trainer.epoch(e, data.train, [&](const Batch &batch) {
      EncoderOutput<Real> e_ref;
      Tensor<Real> b_ref;
      {
        NoGradGuard no_grad;
        e_ref = ref.forward_encoder(batch);
        b_ref = ref.forward_classifier(e_ref.features);
      }
      const auto e_lw = r.model.forward_encoder(batch);
      const auto b_lw = r.model.forward_classifier(e_lw.features);
      auto l = encrl_loss(e_ref, e_lw, b_ref, b_lw, cfg.loss_mode, cfg.weights, static_cast<Real>(cfg.tau));
      RunLog::Fields f;
      for (const auto &[k, v] : l.components)
        f.emplace_back("loss." + k, RunLog::num(v));
      return std::make_pair(l.total, f);
    });
    r.epochs = e;
    r.epoch_loss.push_back(loss);

    double max_ref_grad = 0.0;
    for (const auto &[name, t] : ref.parameters())
      if (t.has_grad())
        for (const Real g : t.impl()->grad)
          max_ref_grad = std::max(max_ref_grad, static_cast<double>(std::abs(g)));
    r.log.record("frozen_check", {{"epoch", std::to_string(e)}, {"max_abs_grad", RunLog::num(max_ref_grad)}});
    if (max_ref_grad != 0.0)
      throw UsageError("reference model received gradients during EncRL");

    r.log.record("epoch", {{"phase", cfg.phase}, {"epoch", std::to_string(e)}, {"train_loss", RunLog::num(loss)}});
    if (loss < r.best_metric) {
      r.best_metric = loss;
      r.best_epoch = e;
      r.best = snapshot(r.model, data.vocab, CheckpointMeta{cfg.phase, e, cfg.seed, {}});
    }
  }
  detail::write_outputs(r, cfg, data, out);
  return r;
}

/// CTC finetuning of a model initialized from `source` (normally an EncRL
/// checkpoint). Block weights come through the slice spec; the classifier is
/// reused when shapes match unless fresh_head is set.
inline TrainResult finetune(const TrainConfig &cfg, const Checkpoint<Real> &source, const TrainData &data,
                            const TrainOutputs &out = {}) {
  cfg.validate();
  const ModelConfig mc = detail::sized_config(cfg, data.vocab);
  if (!(source.vocab == data.vocab) && !cfg.fresh_head)
    throw ConfigError("checkpoint vocabulary differs from the data vocabulary; set fresh_head=true to retrain the head");
  detail::check_feasible(data.train, mc, "training");
  TrainResult r(Model<Real>(mc, set_global_seed(cfg.seed).init));
  r.log.set_sink(out.progress);
  detail::log_header(r.log, cfg, r.model);
  const Model<Real> fresh = r.model.clone();
  const auto rep = init_from_slice(r.model, source, resolve_slice(cfg.slice, mc.n_layers, source.config.n_layers));
  bool head_reused = rep.classifier_copied;
  if (cfg.fresh_head && head_reused) {
    for (auto &[name, t] : r.model.parameters())
      if (name.rfind("classifier.", 0) == 0)
        for (const auto &[fname, ft] : fresh.parameters())
          if (fname == name)
            t.values() = ft.values();
    head_reused = false;
  }
  std::string layers;
  for (const auto i : rep.layer_indices)
    layers += (layers.empty() ? "" : ",") + std::to_string(i);
  r.log.record("init", {{"source_phase", source.meta.phase}, {"slice", cfg.slice}, {"layers", layers},
                        {"frontend", rep.frontend_copied ? "copied" : "fresh"},
                        {"classifier", head_reused ? "reused" : "fresh"}});
  detail::Trainer trainer(cfg, r.model, r.log);
  detail::run_ctc_phase(r, cfg, data, trainer, out);
  return r;
}

} // namespace shrink

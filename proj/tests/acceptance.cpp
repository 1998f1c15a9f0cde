// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
//   acceptance <work_dir> [criterion ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "shrink/cli.hpp"
#include "shrink/grad_check.hpp"
#include "shrink/prune.hpp"
#include "support.hpp"

using namespace shrink;
namespace fs = std::filesystem;
using shrink::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Tensor<double> away_from_zero(Shape shape, Rng &rng) {
  auto t = random_tensor(std::move(shape), rng, 0.2, 1.0);
  for (auto &v : t.values())
    if (rng.bernoulli(0.5))
      v = -v;
  return t;
}

struct GradCase {
  std::string name;
  std::function<Tensor<double>()> f;
  std::vector<Tensor<double>> params;
  double floor = 1e-8;
};

std::vector<GradCase> grad_cases(std::uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  std::vector<GradCase> c;
  const auto a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng), w = random_tensor({4, 5}, rng);
  const auto pos = random_tensor({4, 5}, rng, 0.5, 2.0);
  const auto kinked = away_from_zero({4, 5}, rng);
  const auto m1 = random_tensor({4, 5}, rng), m2 = random_tensor({5, 3}, rng);
  const auto bm1 = random_tensor({2, 3, 4}, rng), bm2 = random_tensor({2, 4, 3}, rng);
  const auto x3 = random_tensor({2, 3, 4}, rng, -2, 2), w3 = random_tensor({2, 3, 4}, rng);
  const auto lw = random_tensor({4, 6}, rng), lb = random_tensor({6}, rng);
  const auto gamma = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
  const auto kernel = random_tensor({4, 3}, rng);
  Tensor<double> mask(Shape{2, 1, 4});
  mask[3] = 1;
  mask[4] = 1;
  const auto dot = [](const Tensor<double> &y, const Tensor<double> &wt) { return sum(mul(y, wt)); };

  c.push_back({"add", [=] { return dot(add(a, b), w); }, {a, b}});
  c.push_back({"sub", [=] { return dot(sub(a, b), w); }, {a, b}});
  c.push_back({"mul", [=] { return dot(mul(a, b), w); }, {a, b, w}});
  c.push_back({"div", [=] { return dot(div(a, pos), w); }, {a, pos}});
  c.push_back({"broadcast", [=] { return dot(mul(a, slice(b, 0, 0, 1)), w); }, {a, b}});
  c.push_back({"scale", [=] { return dot(add_scalar(scale(a, 1.7), 0.3), w); }, {a}});
  c.push_back({"exp", [=] { return dot(exp(a), w); }, {a}});
  c.push_back({"log", [=] { return dot(log(pos), w); }, {pos}});
  c.push_back({"sqrt", [=] { return dot(sqrt(pos), w); }, {pos}});
  c.push_back({"abs", [=] { return dot(abs(kinked), w); }, {kinked}});
  c.push_back({"square", [=] { return dot(square(a), w); }, {a}});
  c.push_back({"sigmoid", [=] { return dot(sigmoid(a), w); }, {a}});
  c.push_back({"swish", [=] { return dot(swish(a), w); }, {a}});
  c.push_back({"relu", [=] { return dot(relu(kinked), w); }, {kinked}});
  c.push_back({"sum_mean", [=] { return add(scale(square(sum(a)), 0.1), mean(square(a))); }, {a}});
  c.push_back({"sum_axis", [=] { return dot(sum(x3, 1), reshape(slice(w3, 1, 0, 1), Shape{2, 4})); }, {x3}});
  c.push_back({"mean_axis", [=] { return dot(mean(x3, -1, true), slice(w3, 2, 0, 1)); }, {x3}});
  c.push_back({"reshape_permute", [=] { return dot(permute(reshape(x3, Shape{2, 4, 3}), {2, 0, 1}), reshape(w3, Shape{3, 2, 4})); },
               {x3}});
  c.push_back({"transpose", [=] { return dot(transpose(a), transpose(w)); }, {a}});
  c.push_back({"concat", [=] { return dot(concat<double>({a, b}, 1), concat<double>({w, w}, 1)); }, {a, b}});
  c.push_back({"slice", [=] { return dot(slice(a, 1, 1, 3), slice(w, 1, 0, 3)); }, {a}});
  c.push_back({"masked_fill", [=] { return dot(masked_fill(x3, mask, -3.0), w3); }, {x3}});
  c.push_back({"dropout",
               [=] {
                 Rng drop(seed);
                 return dot(dropout(x3, 0.3, drop, true), w3);
               },
               {x3}});
  c.push_back({"matmul", [=] { return sum(square(matmul(m1, m2))); }, {m1, m2}});
  c.push_back({"matmul_batched", [=] { return sum(square(matmul(bm1, bm2))); }, {bm1, bm2}});
  c.push_back({"linear", [=] { return sum(square(linear(x3, lw, lb))); }, {x3, lw, lb}});
  c.push_back({"softmax", [=] { return dot(softmax(x3, -1), w3); }, {x3}});
  c.push_back({"softmax_axis1", [=] { return dot(softmax(x3, 1), w3); }, {x3}});
  c.push_back({"log_softmax", [=] { return dot(log_softmax(x3, -1), w3); }, {x3}});
  c.push_back({"layer_norm", [=] { return dot(layer_norm(x3, gamma, beta), w3); }, {x3, gamma, beta}});
  c.push_back({"glu", [=] { return dot(glu(x3), slice(w3, 2, 0, 2)); }, {x3}});
  c.push_back({"depthwise_conv", [=] { return dot(depthwise_conv1d(x3, kernel), w3); }, {x3, kernel}});
  c.push_back({"depthwise_conv_stride2", [=] { return sum(square(depthwise_conv1d(x3, kernel, 2))); }, {x3, kernel}});

  // Full conformer block plus frontend and head, through an MSE loss.
  {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.d_model = 4;
    mc.ff_dim = 6;
    mc.n_heads = 2;
    mc.conv_kernel = 3;
    mc.n_mels = 3;
    mc.vocab_size = 3;
    auto model = std::make_shared<Model<double>>(mc, seed);
    const auto feats = random_tensor({2, 5, 3}, rng);
    const auto target = random_tensor({2, 3, 3}, rng);
    std::vector<Tensor<double>> ps;
    for (auto &[n, t] : model->parameters())
      ps.push_back(t);
    // Key biases have exactly zero true gradient (softmax shift
    // invariance); the floor keeps rounding noise there from reading as
    // relative error.
    c.push_back({"conformer_block+mse",
                 [model, feats, target] {
                   const auto enc = model->forward_encoder(feats, {5, 3});
                   return mse_loss(target, model->forward_classifier(enc.features), &enc.mask);
                 },
                 ps, 1e-6});
  }

  // Losses.
  const auto logits = random_tensor({2, 6, 4}, rng, -2, 2);
  c.push_back({"ctc", [=] { return sum(ctc_loss(log_softmax(logits, -1), {6, 5}, {{1, 2, 2}, {3, 1}})); }, {logits}});
  const auto ea = random_tensor({3, 4}, rng), eb = random_tensor({3, 4}, rng);
  c.push_back({"clip", [=] { return clip_loss(ea, eb, 0.5); }, {ea, eb}});
  const auto ra = random_tensor({2, 3, 4}, rng);
  const auto rb = add(ra, away_from_zero({2, 3, 4}, rng));
  Tensor<double> fmask(Shape{2, 3, 1}, std::vector<double>{1, 1, 1, 1, 1, 0});
  c.push_back({"mse", [=] { return mse_loss(ra, rb, &fmask); }, {ra, rb}});
  c.push_back({"mae", [=] { return mae_loss(ra, rb, &fmask); }, {ra, rb}});
  {
    EncoderOutput<double> er{random_tensor({2, 3, 4}, rng), {3, 2}, fmask};
    EncoderOutput<double> el{random_tensor({2, 3, 4}, rng), {3, 2}, fmask};
    const auto f_ref = er.features, f_lw = el.features;
    c.push_back({"encrl_clip+mse+mae",
                 [=] {
                   EncoderOutput<double> r2{f_ref, {3, 2}, fmask}, l2{f_lw, {3, 2}, fmask};
                   auto mse_part = encrl_loss(r2, l2, ra, rb, EncrlMode::clip_mse, {}, 0.2).total;
                   return add(mse_part, encrl_loss(r2, l2, ra, rb, EncrlMode::mae, {}, 0.2).total);
                 },
                 {f_ref, f_lw, ra, rb}});
  }
  return c;
}

Outcome criterion1() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  std::set<std::string> names;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    for (auto &gc : grad_cases(seed)) {
      names.insert(gc.name);
      const auto r = grad_check(gc.f, gc.params, 1e-5, {}, gc.floor);
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_case = gc.name + "@seed" + std::to_string(seed);
      }
    }
  // The detector must fire on a corrupted gradient.
  auto probe = grad_cases(0).front();
  const auto corrupted = grad_check(probe.f, probe.params, 1e-5, [](auto &g) { g[0][0] += 0.5; });
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = worst < 1e-4 && secs < 120.0 && corrupted.max_rel_err > 1e-2;
  o.detail = std::to_string(names.size()) + " cases x 100 seeds, max_rel_err=" + fmt("%.3g", worst) + " (" + worst_case +
             "), corrupted=" + fmt("%.3g", corrupted.max_rel_err) + ", " + fmt("%.1f", secs) + "s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. CTC against exhaustive enumeration

Outcome criterion2() {
  double worst = 0.0;
  std::size_t instances = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    std::size_t T = 0, V = 0;
    std::vector<int> target;
    do {
      T = static_cast<std::size_t>(rng.uniform_int(1, 6));
      V = static_cast<std::size_t>(rng.uniform_int(2, 4));
      target.assign(static_cast<std::size_t>(rng.uniform_int(0, 3)), 0);
      for (auto &t : target)
        t = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(V) - 1));
    } while (detail::ctc_min_frames(target) > T);
    NoGradGuard g;
    const auto lp = log_softmax(random_tensor({1, T, V}, rng, -3, 3), -1);
    const double dp = ctc_loss(lp, {T}, {target})[0];
    const double brute = shrink::testing::ctc_enumerate(lp.values(), T, V, target);
    worst = std::max(worst, std::abs(dp - brute));
    ++instances;
  }
  const Tensor<double> uniform(Shape{1, 2, 2}, std::log(0.5));
  const double hand = ctc_loss(uniform, {2}, {{1}})[0];
  Outcome o;
  o.pass = worst < 1e-8 && std::abs(hand + std::log(0.75)) < 1e-9;
  o.detail = std::to_string(instances) + " instances, max |dp-enum|=" + fmt("%.3g", worst) + ", hand=" + fmt("%.12f", hand);
  return o;
}

// ---------------------------------------------------------------------------
// 3. CLIP closed forms

Outcome criterion3() {
  Rng rng(3);
  const auto a = random_tensor({1, 6}, rng), b = random_tensor({1, 6}, rng);
  const double single = clip_loss(a, b, 0.07).item();
  const Tensor<double> e(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor<double> swapped(Shape{2, 2}, std::vector<double>{0, 1, 1, 0});
  const double aligned = clip_loss(e, e, 1.0).item();
  const double permuted = clip_loss(e, swapped, 1.0).item();
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  Outcome o;
  o.pass = single == 0.0 && std::abs(aligned - expected) < 1e-6 && permuted > aligned;
  o.detail = "B=1 " + fmt("%.3g", single) + ", aligned " + fmt("%.6f", aligned) + ", permuted " + fmt("%.6f", permuted);
  return o;
}

// ---------------------------------------------------------------------------
// Shared toy pipeline for criteria 4, 5, 6 and 8.

struct SeedRun {
  double wer_two_phase = 0.0;
  double wer_scratch = 0.0;
  bool reference_frozen = false;
  bool frozen_checks_clean = false;
  std::size_t encrl_epochs = 0, finetune_epochs = 0, scratch_epochs = 0;
  Checkpoint<Real> reference;
  Checkpoint<Real> encrl;
};

TrainConfig base_config(const std::string &phase, std::size_t layers, std::uint64_t seed) {
  TrainConfig c;
  c.phase = phase;
  c.model.n_layers = layers;
  c.z = 30;
  c.seed = seed;
  return c;
}

bool same_params(const Checkpoint<Real> &a, const Model<Real> &m) {
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].second.values() != m.parameters()[i].second.values())
      return false;
  return true;
}

std::size_t epoch_records(const RunLog &log) { return log.lines_of("epoch").size(); }

class Pipeline {
public:
  explicit Pipeline(const fs::path &work) {
    SynthOptions so;
    so.n_items = 500;
    so.test_items = 100;
    so.seed = 2026;
    const auto r = synth_dataset(so, work / "corpus");
    data_ = load_train_data(r.manifest.string(), r.test_manifest.string());
    test_only_ = data_;
    test_only_.eval.clear();
  }

  const TrainData &data() const { return data_; }
  double seconds() const { return seconds_; }
  const std::vector<SeedRun> &runs() const { return runs_; }

  void run_all(std::size_t seeds) {
    const auto start = Clock::now();
    for (std::uint64_t s = 0; s < seeds; ++s) {
      runs_.push_back(run_seed(s));
      std::cerr << "  seed " << s << ": two-phase WER " << runs_.back().wer_two_phase << ", scratch WER "
                << runs_.back().wer_scratch << " (" << fmt("%.0f", seconds_since(start)) << "s)\n";
    }
    seconds_ = seconds_since(start);
  }

private:
  SeedRun run_seed(std::uint64_t seed) {
    SeedRun out;
    // Reference: 4 layers, z epochs of CTC. Training is scored on train loss
    // only; the test split is used once per final model.
    auto ref = train_reference(base_config("reference", 4, seed), test_only_);
    out.reference = snapshot(ref.model, data_.vocab, {"reference", ref.epochs, seed, {}});

    // Phase one: EncRL for round(2z/3) epochs.
    const auto before = snapshot(ref.model, data_.vocab);
    auto enc = train_encrl(base_config("encrl", 2, seed), ref.model, test_only_);
    out.reference_frozen = same_params(before, ref.model);
    out.frozen_checks_clean = true;
    for (const auto &l : enc.log.lines_of("frozen_check"))
      out.frozen_checks_clean = out.frozen_checks_clean && RunLog::field(l, "max_abs_grad") == "0";
    out.encrl_epochs = epoch_records(enc.log);
    out.encrl = snapshot(enc.model, data_.vocab, {"encrl", enc.epochs, seed, {}});

    // Phase two: CTC finetuning for round(z/3) epochs.
    auto ft = finetune(base_config("finetune", 2, seed), out.encrl, test_only_);
    out.finetune_epochs = epoch_records(ft.log);
    out.wer_two_phase = evaluate(ft.model, data_.eval, data_.vocab).wer;

    // Baseline: the same 2-layer model from scratch for z epochs.
    auto scratch = train_reference(base_config("reference", 2, seed), test_only_);
    out.scratch_epochs = epoch_records(scratch.log);
    out.wer_scratch = evaluate(scratch.model, data_.eval, data_.vocab).wer;
    return out;
  }

  TrainData data_;
  TrainData test_only_;
  std::vector<SeedRun> runs_;
  double seconds_ = 0.0;
};

Outcome criterion4(const Pipeline &p) {
  std::size_t ok = 0;
  std::string detail;
  bool budgets = true;
  for (const auto &r : p.runs()) {
    ok += r.wer_two_phase <= r.wer_scratch + 0.02;
    detail += fmt("%.3f", r.wer_two_phase) + "/" + fmt("%.3f", r.wer_scratch) + " ";
    budgets = budgets && r.encrl_epochs == 20 && r.finetune_epochs == 10 && r.scratch_epochs == 30;
  }
  Outcome o;
  o.pass = ok >= 4 && budgets && p.seconds() < 1800.0;
  o.detail = "two-phase/scratch WER per seed: " + detail + "(" + std::to_string(ok) + "/5 within +0.02, epochs 20+10 vs 30" +
             (budgets ? "" : " MISMATCH") + ", " + fmt("%.0f", p.seconds()) + "s)";
  return o;
}

Outcome criterion5(const Pipeline &p) {
  const auto &run = p.runs().front();
  const auto &data = p.data();
  // EncRL encoder with an untrained head.
  auto cfg = base_config("finetune", 2, 0);
  cfg.epochs = 1;
  Model<Real> fresh(detail::sized_config(cfg, data.vocab), set_global_seed(99).init);
  const auto fresh_ck = snapshot(fresh, data.vocab);
  auto probe = model_from_checkpoint(run.encrl);
  for (auto &[name, t] : probe.parameters())
    if (name.rfind("classifier.", 0) == 0)
      t.values() = fresh_ck.find(name)->values();
  const double before = evaluate(probe, data.eval, data.vocab).wer;

  auto ft_cfg = base_config("finetune", 2, 0);
  ft_cfg.fresh_head = true;
  TrainData train_only = data;
  train_only.eval.clear();
  auto ft = finetune(ft_cfg, run.encrl, train_only);
  const bool fresh_logged = RunLog::field(ft.log.lines_of("init").at(0), "classifier") == "fresh";
  const double after = evaluate(ft.model, data.eval, data.vocab).wer;
  Outcome o;
  o.pass = before > 0.8 && after < 0.3 && fresh_logged && ft.epochs == 10;
  o.detail = "EncRL encoder + untrained head WER " + fmt("%.3f", before) + ", after " + std::to_string(ft.epochs) +
             " finetune epochs WER " + fmt("%.3f", after);
  return o;
}

Outcome criterion6(const Pipeline &p) {
  std::size_t ok = 0;
  for (const auto &r : p.runs())
    ok += r.reference_frozen && r.frozen_checks_clean;
  Outcome o;
  o.pass = ok == p.runs().size();
  o.detail = std::to_string(ok) + "/" + std::to_string(p.runs().size()) +
             " EncRL runs left the reference bit-identical with zero reference gradients every epoch";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Epoch budget across W = 3 lightweight depths

Outcome criterion7(const fs::path &work) {
  SynthOptions so;
  so.n_items = 48;
  so.test_items = 0;
  so.seed = 7;
  const auto r = synth_dataset(so, work / "budget_corpus");
  const auto data = load_train_data(r.manifest.string(), "");
  const std::size_t z = 30;
  auto ref_cfg = base_config("reference", 6, 0);
  ref_cfg.z = z;
  auto ref = train_reference(ref_cfg, data);
  const auto ref_ck = snapshot(ref.model, data.vocab, {"reference", ref.epochs, 0, {}});
  const std::vector<std::size_t> depths{1, 2, 3};
  std::size_t finetune_total = 0, scratch_total = 0, encrl_total = 0;
  for (const auto m : depths) {
    auto enc_cfg = base_config("encrl", m, 0);
    enc_cfg.z = z;
    enc_cfg.slice = "last";
    auto enc = train_encrl(enc_cfg, ref.model, data, &ref_ck);
    encrl_total += epoch_records(enc.log);
    auto ft_cfg = base_config("finetune", m, 0);
    ft_cfg.z = z;
    const auto ft = finetune(ft_cfg, snapshot(enc.model, data.vocab, {"encrl", enc.epochs, 0, {}}), data);
    finetune_total += epoch_records(ft.log);
    auto sc_cfg = base_config("reference", m, 0);
    sc_cfg.z = z;
    scratch_total += epoch_records(train_reference(sc_cfg, data).log);
  }
  const std::size_t W = depths.size();
  const auto plan = plan_budget(z, W);
  Outcome o;
  o.pass = finetune_total == W * z / 3 && scratch_total == W * z && plan.finetune_total == finetune_total &&
           plan.scratch_total == scratch_total;
  o.detail = "W=3, Z=30: logged finetune epochs " + std::to_string(finetune_total) + " (expected " +
             std::to_string(W * z / 3) + "), scratch epochs " + std::to_string(scratch_total) + " (expected " +
             std::to_string(W * z) + "), one-off EncRL epochs per depth " + std::to_string(encrl_total / W);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Pruning

Outcome criterion8(const Pipeline &p) {
  const std::vector<double> fractions{0.0, 0.05, 0.25, 0.5};
  bool counts_exact = true;
  std::size_t monotone = 0, conv_ok = 0;
  std::string detail;
  for (const auto &run : p.runs()) {
    std::vector<double> whole, excl;
    for (const double f : fractions)
      for (const bool ex : {false, true}) {
        auto m = model_from_checkpoint(run.reference);
        const auto rep = magnitude_prune(m, f, ex);
        std::size_t zeros_eligible = 0;
        for (const auto &[name, t] : m.parameters())
          if (is_prunable(name, ex))
            zeros_eligible += static_cast<std::size_t>(std::count(t.values().begin(), t.values().end(), 0.0f));
        counts_exact = counts_exact &&
                       rep.n_pruned == static_cast<std::size_t>(std::floor(f * static_cast<double>(rep.n_eligible))) &&
                       zeros_eligible == rep.n_pruned;
        (ex ? excl : whole).push_back(evaluate(m, p.data().eval, p.data().vocab).wer);
      }
    bool mono = true, conv = true;
    for (std::size_t i = 1; i < fractions.size(); ++i)
      mono = mono && whole[i] >= whole[i - 1] - 0.01;
    for (std::size_t i = 0; i < fractions.size(); ++i)
      conv = conv && excl[i] <= whole[i] + 0.01;
    monotone += mono;
    conv_ok += conv;
    detail += "[";
    for (std::size_t i = 0; i < fractions.size(); ++i)
      detail += (i ? " " : "") + fmt("%.3f", whole[i]) + "/" + fmt("%.3f", excl[i]);
    detail += "] ";
  }
  Outcome o;
  o.pass = counts_exact && monotone == p.runs().size() && conv_ok >= 4;
  o.detail = "WER whole/exclude_conv at {0,.05,.25,.5}: " + detail + "monotone " + std::to_string(monotone) + "/5, conv-kept " +
             std::to_string(conv_ok) + "/5, exact counts " + (counts_exact ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

Outcome criterion9(const fs::path &work) {
  SynthOptions so;
  so.n_items = 48;
  so.test_items = 16;
  so.seed = 9;
  const auto r = synth_dataset(so, work / "determinism_corpus");
  const auto data = load_train_data(r.manifest.string(), r.test_manifest.string());
  auto cfg = base_config("reference", 2, 42);
  cfg.epochs = 3;
  cfg.augment = true;
  cfg.augment_opts.t_mask = 5;
  cfg.model.dropout = 0.1;
  const auto a = train_reference(cfg, data, {work / "det_a", {}});
  const auto b = train_reference(cfg, data, {work / "det_b", {}});
  const bool logs_equal = a.log.text() == b.log.text() &&
                          io::read_file(work / "det_a" / "run.log") == io::read_file(work / "det_b" / "run.log");
  auto enc_cfg = base_config("encrl", 1, 42);
  enc_cfg.epochs = 2;
  const bool encrl_equal =
      train_encrl(enc_cfg, a.model, data).log.text() == train_encrl(enc_cfg, a.model, data).log.text();

  save_checkpoint(a.model, data.vocab, {"reference", a.epochs, 42, {}}, work / "rt.ckpt");
  const auto ck = load_checkpoint<Real>(work / "rt.ckpt");
  auto back = model_from_checkpoint(ck);
  const bool bit_exact = same_params(snapshot(a.model, data.vocab), back) &&
                         encode_checkpoint(back, ck.vocab, ck.meta) == io::read_file(work / "rt.ckpt") &&
                         io::read_file(work / "det_a" / "final.ckpt") == io::read_file(work / "det_b" / "final.ckpt");

  auto m = model_from_checkpoint(ck);
  const auto e1 = evaluate(m, data.eval, data.vocab).serialize();
  const auto e2 = evaluate(m, data.eval, data.vocab).serialize();
  Outcome o;
  o.pass = logs_equal && encrl_equal && bit_exact && e1 == e2;
  o.detail = std::string("identical RunLogs ") + (logs_equal && encrl_equal ? "yes" : "no") + ", checkpoint round-trip bit-exact " +
             (bit_exact ? "yes" : "no") + ", evaluate idempotent " + (e1 == e2 ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 10. WER oracle

Outcome criterion10() {
  std::vector<std::vector<int>> strings{{}};
  for (std::size_t i = 0; i < strings.size(); ++i)
    if (strings[i].size() < 6)
      for (int s = 0; s < 3; ++s) {
        auto next = strings[i];
        next.push_back(s);
        strings.push_back(next);
      }
  std::size_t pairs = 0, mismatches = 0;
  for (const auto &x : strings)
    for (const auto &y : strings) {
      ++pairs;
      mismatches += edit_distance(x, y).distance != shrink::testing::edit_distance_recursive(x, y);
    }
  const std::string kitten = "kitten", sitting = "sitting";
  const auto ks = edit_distance(std::vector<char>(kitten.begin(), kitten.end()),
                                std::vector<char>(sitting.begin(), sitting.end()));
  // One error against a one-word reference and none against a four-word
  // reference: pooled 1/5, not the per-utterance mean 1/2.
  const auto pooled = corpus_wer({{"yes", "no"}, {"a b c d", "a b c d"}});
  Outcome o;
  o.pass = mismatches == 0 && ks.distance == 3 && pooled.wer == 0.2;
  o.detail = std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches; kitten/sitting=" +
             std::to_string(ks.distance) + "; pooled WER " + fmt("%.3f", pooled.wer);
  return o;
}

} // namespace

int main(int argc, char **argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "shrink_acceptance";
  std::set<int> only;
  for (int i = 2; i < argc; ++i)
    only.insert(std::atoi(argv[i]));
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  fs::remove_all(work);
  fs::create_directories(work);

  std::map<int, Outcome> results;
  auto report = [&](int n, const Outcome &o) {
    results[n] = o;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };
  auto guarded = [&](int n, const std::function<Outcome()> &f) {
    if (!wanted(n))
      return;
    try {
      report(n, f());
    } catch (const std::exception &e) {
      report(n, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, criterion1);
  guarded(2, criterion2);
  guarded(3, criterion3);
  guarded(10, criterion10);
  guarded(9, [&] { return criterion9(work); });
  guarded(7, [&] { return criterion7(work); });

  if (wanted(4) || wanted(5) || wanted(6) || wanted(8)) {
    std::unique_ptr<Pipeline> p;
    std::string failure;
    try {
      p = std::make_unique<Pipeline>(work);
      std::cerr << "toy pipeline: 5 seeds, 500 train / 100 test items, Z=30\n";
      p->run_all(5);
    } catch (const std::exception &e) {
      failure = e.what();
    }
    for (const int n : {4, 5, 6, 8}) {
      if (!wanted(n))
        continue;
      if (!failure.empty()) {
        report(n, {false, "pipeline failed: " + failure});
        continue;
      }
      guarded(n, [&]() -> Outcome {
        switch (n) {
        case 4:
          return criterion4(*p);
        case 5:
          return criterion5(*p);
        case 6:
          return criterion6(*p);
        default:
          return criterion8(*p);
        }
      });
    }
  }

  std::size_t failed = 0;
  for (const auto &[n, o] : results)
    failed += !o.pass;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

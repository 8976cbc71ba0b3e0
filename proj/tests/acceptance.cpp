// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <numeric>
#include <set>

#include "herbs/cli.hpp"
#include "herbs/eval.hpp"
#include "herbs/heatmap.hpp"

using namespace herbs;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared desk-scale experiment settings (criteria 5 and 6) ----
// mirrors configs/synthetic_small.cfg
RunConfig desk_config(uint64_t seed, Variant variant) {
  RunConfig cfg;
  cfg.data.num_generic = 5;
  cfg.data.fine_per_generic = 2;
  cfg.data.image_size = 32;
  cfg.data.patch_size = 8;
  cfg.data.noise_level = 0.25;
  cfg.data.samples_per_class = 30;   // 200 train / 100 test at 2:1 split
  cfg.data.train_fraction = 2.0 / 3.0;
  cfg.train.epochs = 30;
  cfg.train.batch_size = 4;
  cfg.train.accum_steps = 1;
  cfg.train.lr = 3e-3;
  cfg.train.weight_decay = 5e-4;
  cfg.train.input_size = 32;
  cfg.train.resize_size = 32;
  cfg.train.seed = seed;
  cfg.model.backbone = BackboneKind::conv;
  cfg.model.base_width = 16;
  cfg.model.neck_dim = 64;
  cfg.model.topk = {16, 8, 2, 1};
  cfg.model.schedule.initial = 4.0;
  cfg.model.variant = variant;
  return finalize(cfg);
}

struct DeskRun {
  std::unique_ptr<HerbsNet> net;
  SyntheticDataset dataset;
  double train_top1 = 0, test_top1 = 0;
};

DeskRun desk_train(uint64_t seed, Variant variant, double lambda_d) {
  RunConfig cfg = desk_config(seed, variant);
  cfg.model.bs.lambda_d = lambda_d;
  DeskRun run;
  run.dataset = make_synthetic_dataset(cfg.data, cfg.data_seed);
  run.net = std::make_unique<HerbsNet>(cfg.model);
  Trainer trainer(*run.net, cfg.train);
  trainer.run(run.dataset.train);
  run.train_top1 = evaluate(*run.net, run.dataset.train, cfg.train).top1;
  run.test_top1 = evaluate(*run.net, run.dataset.test, cfg.train).top1;
  return run;
}

// ---- criterion 1: end-to-end gradient oracle ----
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  HerbsConfig cfg;
  cfg.classes = 5;
  cfg.base_width = 8;
  cfg.neck_dim = 16;
  cfg.topk = {16, 8, 2, 1};
  cfg.seed = 3;
  HerbsNet net(cfg);
  Rng drng(1);
  ImageBatch batch;
  batch.pixels = Tensor::randn({2, 3, 32, 32}, drng, 0.5);
  batch.ids = {"a", "b"};
  batch.labels = std::vector<int>{1, 4};

  // The training gradient is defined with the distillation targets and the
  // top-K index sets held constant (stop-gradient teacher, non-differentiable
  // selection), so the finite-difference oracle evaluates the loss with both
  // pinned at their base values.
  ForwardOutput base = net.forward(batch, 2);
  ForwardFreeze freeze = ForwardFreeze::capture(base);
  auto loss = [&] { return net.forward(batch, 2, true, &freeze).loss_herbs; };

  Rng pick(99);
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
  const double h = 1e-5;
  while (checked < 24) {
    const size_t pi = size_t(pick.below(net.params().size()));
    Var p = net.params().var(pi);
    const int64_t coord = int64_t(pick.below(uint64_t(p.numel())));
    net.params().zero_grads();
    Var l = loss();
    backward(l);
    const double analytic = p.has_grad() ? p.grad_raw()[coord] : 0.0;
    const double orig = p.val()[coord];
    p.mutable_val()[coord] = orig + h;
    const double up = loss().val().item();
    p.mutable_val()[coord] = orig - h;
    const double down = loss().val().item();
    p.mutable_val()[coord] = orig;
    const double numeric = (up - down) / (2.0 * h);
    // relative error floored at the FD noise scale for near-zero gradients
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
    if (rel > max_rel) {
      max_rel = rel;
      worst = net.params().name(pi) + "[" + std::to_string(coord) + "]";
    }
    ++checked;
  }
  const double elapsed = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "gradient oracle: %d parameters, max rel err %.3e (worst %s), %.1fs",
                checked, max_rel, worst.c_str(), elapsed);
  report(1, max_rel < 1e-4 && elapsed < 120.0, buf);
}

// ---- criterion 2: loss closed forms ----
void criterion_2() {
  bool ok = true;
  std::string detail;

  // merged loss, uniform over 200 classes
  Var uniform = Var::leaf(Tensor::zeros({1, 200}), false);
  const double lm = merged_loss(uniform, {42}).val().item();
  ok &= std::abs(lm - std::log(200.0)) <= 1e-9;

  // dropped loss, zero logits: C_gt per location
  Var zeros = Var::leaf(Tensor::zeros({3, 7}), false);
  const double ld = dropped_loss(zeros).val().item();
  ok &= std::abs(ld - 7.0) <= 1e-9;

  // bs_total with the published weights recomposes exactly
  Var m = Var::leaf(Tensor::scalar(1.0), false);
  Var d = Var::leaf(Tensor::scalar(0.5), false);
  Var l = Var::leaf(Tensor::scalar(2.0), false);
  BsLossWeights w;  // 1, 5, 0.3
  const double total = bs_total(m, d, l, w).val().item();
  const double recomposed = (w.lambda_m * 1.0 + w.lambda_d * 0.5) + w.lambda_l * 2.0;
  ok &= total == recomposed;
  ok &= std::abs(total - 4.1) <= 1e-12;

  // refinement loss of identical logits
  Rng rng(7);
  std::vector<ClassifierPair> pairs;
  for (int i = 0; i < 4; ++i) {
    Tensor t = Tensor::randn({2, 6}, rng);
    pairs.push_back({Var::leaf(t, true), Var::leaf(t, false)});
  }
  const double lr_loss = refinement_loss(pairs, 64.0).val().item();
  ok &= std::abs(lr_loss) <= 1e-12;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "closed forms: ln200 err %.1e, dropped err %.1e, bs_total %.10g, refine %.1e",
                std::abs(lm - std::log(200.0)), std::abs(ld - 7.0), total, lr_loss);
  report(2, ok, buf);
}

// ---- criterion 3: selector vs full-sort oracle ----
void criterion_3() {
  Rng rng(42);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int64_t H = 1 + int64_t(rng.below(16));
    const int64_t W = 1 + int64_t(rng.below(16));
    const int64_t C = 2 + int64_t(rng.below(19));
    const int64_t D = 2 + int64_t(rng.below(6));
    const int64_t k = 1 + int64_t(rng.below(uint64_t(H * W)));

    Tensor feat = Tensor::randn({1, D, H, W}, rng);
    if (trial % 2 == 1) {  // duplicated columns force exact score ties
      const int64_t HW = H * W;
      for (int64_t loc = 0; loc + 1 < HW; loc += 2)
        for (int64_t dd = 0; dd < D; ++dd) feat[dd * HW + loc + 1] = feat[dd * HW + loc];
    }
    ParamStore ps;
    Rng wrng{uint64_t(trial) + 1000};
    Linear head = Linear::create(ps, "h", D, C, wrng, 0.8);
    ClassificationMap cmap = classify_locations(Var::leaf(feat, false), head);
    SelectionResult got = select_topk(cmap, Var::leaf(feat, false), k, 0);

    // independent oracle: per-location softmax max in long double, full sort
    const int64_t HW = H * W;
    std::vector<long double> pmax(static_cast<size_t>(HW));
    for (int64_t loc = 0; loc < HW; ++loc) {
      long double mx = -1e30L, z = 0.0L;
      std::vector<long double> logits(static_cast<size_t>(C));
      for (int64_t c = 0; c < C; ++c) {
        long double acc = head.b.val()[c];
        for (int64_t dd = 0; dd < D; ++dd)
          acc += (long double)head.w.val().at2(c, dd) * (long double)feat[dd * HW + loc];
        logits[size_t(c)] = acc;
        mx = std::max(mx, acc);
      }
      for (int64_t c = 0; c < C; ++c) z += expl(logits[size_t(c)] - mx);
      long double best = 0.0L;
      for (int64_t c = 0; c < C; ++c) best = std::max(best, expl(logits[size_t(c)] - mx) / z);
      pmax[size_t(loc)] = best;
    }
    std::vector<int64_t> order(static_cast<size_t>(HW));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      if (pmax[size_t(a)] != pmax[size_t(b)]) return pmax[size_t(a)] > pmax[size_t(b)];
      return a < b;
    });
    std::vector<int64_t> want_sel(order.begin(), order.begin() + k);
    std::vector<int64_t> want_drop(order.begin() + k, order.end());
    std::sort(want_drop.begin(), want_drop.end());
    if (got.selected_idx != want_sel || got.dropped_idx != want_drop) ++mismatches;
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "selector oracle: %d/500 instances mismatched", mismatches);
  report(3, mismatches == 0, buf);
}

// ---- criterion 4: temperature schedule ----
void criterion_4() {
  bool ok = true;
  TemperatureSchedule t64;
  t64.initial = 64.0;
  ok &= t64.halving_interval() == 10;
  ok &= temperature_at(0, t64) == 64.0;
  ok &= temperature_at(10, t64) == 32.0;
  ok &= temperature_at(79, t64) == 0.5;

  for (double t0 : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0}) {
    TemperatureSchedule s;
    s.initial = t0;
    double prev = 1e300;
    for (int e = 0; e < 100; ++e) {
      const double cur = temperature_at(e, s);
      if (cur > prev) ok = false;
      prev = cur;
    }
    // literal mode matches the printed decay exactly
    s.mode = TemperatureSchedule::Mode::literal;
    const int64_t interval = s.halving_interval();
    for (int e = 0; e < 100; ++e) {
      const double printed = std::pow(0.5, std::floor(double(e) / double(interval)));
      if (temperature_at(e, s) != printed) ok = false;
    }
  }
  report(4, ok, "temperature schedule: T64 anchors 64/32/0.5, grid non-increasing, literal exact");
}

// ---- criteria 5 and 6: desk-scale training experiments ----
void criteria_5_and_6() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> e_test, a_test, e_train, a_train;
  std::unique_ptr<HerbsNet> seed0_net;
  SyntheticDataset seed0_data;
  for (uint64_t seed : {0ull, 1ull, 2ull}) {
    DeskRun e = desk_train(seed, Variant::e, 5.0);
    DeskRun a = desk_train(seed, Variant::a, 5.0);
    std::printf("  seed %llu: variant e train %.1f test %.1f | variant a train %.1f test %.1f\n",
                (unsigned long long)seed, e.train_top1, e.test_top1, a.train_top1, a.test_top1);
    std::fflush(stdout);
    e_test.push_back(e.test_top1);
    a_test.push_back(a.test_top1);
    e_train.push_back(e.train_top1);
    a_train.push_back(a.train_top1);
    if (seed == 0) {
      seed0_net = std::move(e.net);
      seed0_data = std::move(e.dataset);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  const double gap = mean(e_test) - mean(a_test);
  const double e_train_mean = mean(e_train);
  const double elapsed5 = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "desk-scale effectiveness: e test %.1f vs a test %.1f (gap %.1f >= 2), "
                "e train %.1f >= 95, a train %.1f, %.0fs < 1200s",
                mean(e_test), mean(a_test), gap, e_train_mean, mean(a_train), elapsed5);
  report(5, gap >= 2.0 && e_train_mean >= 95.0 && elapsed5 < 1200.0, buf);

  // criterion 6: identical training except lambda_d = 0
  DeskRun nod = desk_train(0, Variant::e, 0.0);
  TrainConfig eval_cfg = desk_config(0, Variant::e).train;

  // mean |tanh(Y)| over ground-truth background pixels, per test image,
  // stage maps upsampled to image resolution and averaged
  auto background_response = [&](HerbsNet& net, const Sample& sample) {
    ImageBatch one;
    Rng dummy(0);
    one.pixels = augment(sample.image, Phase::test, eval_cfg, dummy)
                     .reshaped({1, 3, eval_cfg.input_size, eval_cfg.input_size});
    one.ids = {sample.id};
    ForwardOutput out = net.forward(one, 0, false);
    const int64_t S = eval_cfg.input_size;
    Tensor acc({S, S});
    for (const auto& m : out.maps) {
      const int64_t hw = m.height * m.width;
      Tensor plane({m.height, m.width});
      for (int64_t loc = 0; loc < hw; ++loc) {
        double s = 0.0;
        for (int64_t c = 0; c < m.classes; ++c)
          s += std::abs(std::tanh(m.logits.val()[c * hw + loc]));
        plane[loc] = s / double(m.classes);
      }
      Tensor up = bilinear_resize(plane.reshaped({1, m.height, m.width}), S, S);
      for (int64_t i = 0; i < S * S; ++i) acc[i] += up[i];
    }
    acc.scale_(1.0 / double(out.maps.size()));
    Tensor mask = apply_test_geometry(sample.mask, eval_cfg);
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < S * S; ++i)
      if (mask[i] < 0.5) {
        total += acc[i];
        ++count;
      }
    return total / double(std::max<int64_t>(count, 1));
  };

  int lower = 0, total = 0;
  for (const auto& sample : seed0_data.test) {
    const double with_bs = background_response(*seed0_net, sample);
    const double without = background_response(*nod.net, sample);
    if (with_bs < without) ++lower;
    ++total;
  }
  const double frac = 100.0 * double(lower) / double(total);
  std::snprintf(buf, sizeof(buf),
                "suppression effect: background |tanh(Y)| lower with lambda_d=5 on %d/%d "
                "test images (%.0f%% >= 80%%)",
                lower, total, frac);
  report(6, frac >= 80.0, buf);

  // documented example for the heat-map renderer: response concentrates
  // inside the planted patch after training with suppression on
  {
    int inside_higher = 0, checked = 0;
    for (size_t i = 0; i < seed0_data.test.size(); i += 4) {
      const Sample& sample = seed0_data.test[i];
      Rng dummy(0);
      Tensor norm = augment(sample.image, Phase::test, eval_cfg, dummy);
      HeatMap hm = render_heatmap(*seed0_net, norm, HeatSource::max_score);
      Tensor mask = apply_test_geometry(sample.mask, eval_cfg);
      double in = 0, out_r = 0;
      int64_t n_in = 0, n_out = 0;
      for (int64_t p = 0; p < hm.response.numel(); ++p) {
        if (mask[p] > 0.5) {
          in += hm.response[p];
          ++n_in;
        } else {
          out_r += hm.response[p];
          ++n_out;
        }
      }
      if (in / double(n_in) > out_r / double(n_out)) ++inside_higher;
      ++checked;
    }
    std::printf("  aux heat-map localization: patch response higher on %d/%d sampled images\n",
                inside_higher, checked);
    if (inside_higher * 2 <= checked) {
      std::printf("FAIL aux: heat-map localization weaker than expected\n");
      ++g_failures;
    }
  }
}

// ---- criterion 7: metric oracles ----
void criterion_7() {
  bool ok = true;
  // pinned example
  ok &= false_true_rate({1, 1, 1, 1}, {0, 0, 0, 2}, {0, 0, 0, 0}) == 0.75;

  Rng rng(77);
  for (int trial = 0; trial < 100 && ok; ++trial) {
    const int classes = 2 + int(rng.below(9));
    const int n = 1 + int(rng.below(50));
    std::vector<DumpRecord> dump;
    std::vector<int> td, bu, labels;
    std::map<int, int> f2g;
    const int generics = 1 + int(rng.below(3));
    for (int f = 0; f < classes; ++f) f2g[f] = f % generics;
    for (int i = 0; i < n; ++i) {
      DumpRecord r;
      r.id = "r" + std::to_string(i);
      r.label = int(rng.below(uint64_t(classes)));
      r.fused.resize(size_t(classes));
      for (auto& p : r.fused) p = rng.uniform();
      if (trial % 3 == 0 && classes >= 2) r.fused[1] = r.fused[0];
      r.pred = detail::argmax_first(r.fused);
      r.td_argmax = int(rng.below(uint64_t(classes)));
      r.bu_argmax = int(rng.below(uint64_t(classes)));
      labels.push_back(r.label);
      td.push_back(r.td_argmax);
      bu.push_back(r.bu_argmax);
      dump.push_back(std::move(r));
    }
    for (int k = 1; k <= classes; ++k) {
      int hits = 0;
      for (const auto& r : dump) {
        int better = 0;
        for (size_t c = 0; c < r.fused.size(); ++c) {
          if (r.fused[c] > r.fused[size_t(r.label)]) ++better;
          if (r.fused[c] == r.fused[size_t(r.label)] && int(c) < r.label) ++better;
        }
        if (better < k) ++hits;
      }
      if (top_k_accuracy(dump, k) != 100.0 * double(hits) / double(n)) ok = false;
    }
    int ft = 0, ff = 0;
    for (int i = 0; i < n; ++i)
      if (td[size_t(i)] != labels[size_t(i)]) (bu[size_t(i)] == labels[size_t(i)] ? ft : ff)++;
    const double expect = (ft + ff) ? double(ft) / double(ft + ff) : 0.0;
    if (false_true_rate(td, bu, labels) != expect) ok = false;

    auto rows = generic_class_report(dump, f2g, 0);
    for (const auto& row : rows) {
      if (row.name == "Average") continue;
      const int g = std::stoi(row.name.substr(1));
      int64_t num = 0, correct = 0, fp = 0;
      for (const auto& r : dump) {
        if (f2g.at(r.label) != g) continue;
        ++num;
        if (r.pred == r.label) ++correct;
        if (f2g.at(r.pred) != g) ++fp;
      }
      if (row.num != num || row.fp != double(fp)) ok = false;
      if (std::abs(row.precision - 100.0 * double(correct) / double(num)) > 1e-12) ok = false;
    }
  }
  report(7, ok, "metric oracles: top-k, generic precision/FP, false-true rate on 100 dumps");
}

// ---- criterion 8: fusion invariants ----
void criterion_8() {
  bool ok = true;
  Rng rng(8);
  HerbsConfig cfg;
  cfg.classes = 6;
  cfg.base_width = 4;
  cfg.neck_dim = 8;
  cfg.topk = {8, 4, 2, 1};
  HerbsNet net(cfg);
  ImageBatch batch;
  batch.pixels = Tensor::randn({3, 3, 32, 32}, rng, 0.5);
  batch.ids = {"a", "b", "c"};
  ForwardOutput out = net.forward(batch, 0, false);
  auto nine = out.bundle.present();
  ok &= nine.size() == 9;

  // softmax of the nine-logit sum, computed independently
  for (int64_t b = 0; b < 3 && ok; ++b) {
    std::vector<long double> sum(6, 0.0L);
    for (const Tensor* t : nine)
      for (int64_t c = 0; c < 6; ++c) sum[size_t(c)] += (long double)t->at2(b, c);
    long double mx = sum[0];
    for (auto v : sum) mx = std::max(mx, v);
    long double z = 0.0L;
    for (auto v : sum) z += expl(v - mx);
    double total = 0.0;
    for (int64_t c = 0; c < 6; ++c) {
      const double expect = double(expl(sum[size_t(c)] - mx) / z);
      if (std::abs(out.bundle.fused_probs.at2(b, c) - expect) > 1e-9) ok = false;
      total += out.bundle.fused_probs.at2(b, c);
    }
    if (std::abs(total - 1.0) > 1e-6) ok = false;
  }

  // permutation invariance, bitwise
  std::vector<Tensor> logits;
  for (const Tensor* t : nine) logits.push_back(*t);
  Tensor base = fuse_predictions(logits);
  std::vector<Tensor> perm{logits[4], logits[8], logits[0], logits[2], logits[6],
                           logits[1], logits[7], logits[3], logits[5]};
  Tensor permuted = fuse_predictions(perm);
  for (int64_t i = 0; i < base.numel(); ++i)
    if (base[i] != permuted[i]) ok = false;

  report(8, ok, "fused prediction: softmax of nine-logit sum, permutation-invariant, normalized");
}

// ---- criterion 9: reproducibility ----
void criterion_9() {
  SyntheticSpec spec;
  spec.num_generic = 2;
  spec.fine_per_generic = 2;
  spec.image_size = 32;
  spec.patch_size = 8;
  spec.samples_per_class = 9;
  SyntheticDataset ds = make_synthetic_dataset(spec, 17);

  auto run_once = [&](std::vector<EpochRecord>& records, Tensor& probe_out) {
    HerbsConfig mc;
    mc.classes = ds.classes();
    mc.base_width = 4;
    mc.neck_dim = 8;
    mc.topk = {8, 4, 2, 1};
    mc.seed = 11;
    HerbsNet net(mc);
    TrainConfig tc;
    tc.seed = 17;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.accum_steps = 2;
    tc.input_size = 32;
    tc.resize_size = 32;
    tc.lr = 2e-3;
    Trainer trainer(net, tc);
    records = trainer.run(ds.train);

    // checkpoint round trip must reproduce the forward bitwise
    Checkpoint ckpt = trainer.make_checkpoint("acceptance");
    save_checkpoint("/tmp/herbs_acceptance_ckpt.bin", ckpt);
    std::vector<int64_t> idx{0, 1, 2, 3};
    ImageBatch probe = assemble_batch(ds.train, idx, Phase::test, tc, 0);
    Tensor before = net.forward(probe, 0, false).bundle.fused_probs;
    for (size_t i = 0; i < net.params().size(); ++i)
      net.params().var(i).mutable_val().fill_(0.5);
    Checkpoint loaded = load_checkpoint("/tmp/herbs_acceptance_ckpt.bin");
    apply_parameters(loaded, net.params());
    Tensor after = net.forward(probe, 0, false).bundle.fused_probs;
    for (int64_t i = 0; i < before.numel(); ++i)
      if (before[i] != after[i]) throw std::runtime_error("checkpoint round trip diverged");
    probe_out = after;
  };

  std::vector<EpochRecord> r1, r2;
  Tensor p1, p2;
  bool ok = true;
  std::string note = "two runs identical, checkpoint forward bit-exact";
  try {
    run_once(r1, p1);
    run_once(r2, p2);
    ok &= r1.size() == r2.size();
    for (size_t e = 0; e < r1.size() && ok; ++e) {
      ok &= r1[e].losses.loss_herbs == r2[e].losses.loss_herbs;
      ok &= r1[e].losses.loss_m == r2[e].losses.loss_m;
      ok &= r1[e].losses.loss_d == r2[e].losses.loss_d;
      ok &= r1[e].losses.loss_l == r2[e].losses.loss_l;
      ok &= r1[e].losses.loss_r == r2[e].losses.loss_r;
      ok &= r1[e].lr == r2[e].lr;
    }
    for (int64_t i = 0; i < p1.numel(); ++i)
      if (p1[i] != p2[i]) ok = false;
  } catch (const std::exception& e) {
    ok = false;
    note = e.what();
  }
  report(9, ok, "reproducibility: " + note);
}

// ---- criterion 10: gradient-accumulation equivalence ----
void criterion_10() {
  const int64_t D = 5;
  Rng rng(22);
  Tensor X = Tensor::randn({32, D}, rng);
  Tensor Y = Tensor::randn({32, 1}, rng);

  auto make_model = [&](ParamStore& ps) {
    Rng wrng(23);
    Var w = ps.add("w", Tensor::randn({1, D}, wrng, 0.3));
    Var b = ps.add("b", Tensor::zeros({1}));
    return std::pair<Var, Var>(w, b);
  };
  auto loss_on = [&](Var w, Var b, int64_t lo, int64_t hi) {
    Tensor xs({hi - lo, D}), ys({hi - lo, 1});
    std::copy(X.data() + lo * D, X.data() + hi * D, xs.data());
    std::copy(Y.data() + lo, Y.data() + hi, ys.data());
    Var diff = ops::sub(ops::linear(Var::leaf(xs, false), w, b), Var::leaf(ys, false));
    return ops::mean_all(ops::mul(diff, diff));
  };

  // accum_steps=4 with batch 8 vs accum_steps=1 with batch 32
  ParamStore ps_acc, ps_big;
  auto [wa, ba] = make_model(ps_acc);
  auto [wb, bb] = make_model(ps_big);
  Sgd oa(0.9, 5e-4), ob(0.9, 5e-4);
  for (int step = 0; step < 5; ++step) {
    for (int64_t m = 0; m < 4; ++m) backward(loss_on(wa, ba, m * 8, (m + 1) * 8));
    oa.step(ps_acc, 5e-4, 4);
    backward(loss_on(wb, bb, 0, 32));
    ob.step(ps_big, 5e-4, 1);
  }
  double max_diff = 0.0;
  for (int64_t d = 0; d < D; ++d)
    max_diff = std::max(max_diff, std::abs(wa.val()[d] - wb.val()[d]));
  max_diff = std::max(max_diff, std::abs(ba.val()[0] - bb.val()[0]));
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "gradient accumulation: max parameter difference %.2e <= 1e-8", max_diff);
  report(10, max_diff <= 1e-8, buf);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criteria_5_and_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("acceptance: %s (%.0fs total)\n", g_failures == 0 ? "all criteria passed" : "FAILURES",
              seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}

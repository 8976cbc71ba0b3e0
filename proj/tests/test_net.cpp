#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "herbs/net.hpp"
#include "test_util.hpp"

using namespace herbs;

namespace {

HerbsConfig tiny_config(Variant v = Variant::e) {
  HerbsConfig cfg;
  cfg.classes = 10;
  cfg.base_width = 8;
  cfg.neck_dim = 16;
  cfg.topk = {16, 8, 2, 1};
  cfg.variant = v;
  cfg.seed = 7;
  return cfg;
}

ImageBatch random_batch(int64_t b, int64_t hw, uint64_t seed, int64_t classes) {
  ImageBatch batch;
  Rng rng(seed);
  batch.pixels = Tensor::randn({b, 3, hw, hw}, rng, 0.5);
  std::vector<int> labels;
  for (int64_t i = 0; i < b; ++i) {
    batch.ids.push_back("img" + std::to_string(i));
    labels.push_back(int(rng.below(uint64_t(classes))));
  }
  batch.labels = labels;
  return batch;
}

double hand_ce(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t n = logits.dim(0), c = logits.dim(1);
  long double total = 0.0L;
  for (int64_t i = 0; i < n; ++i) {
    long double mx = logits.at2(i, 0);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, (long double)logits.at2(i, j));
    long double z = 0.0L;
    for (int64_t j = 0; j < c; ++j) z += expl(logits.at2(i, j) - mx);
    total += -(logits.at2(i, labels[size_t(i)]) - mx - logl(z));
  }
  return double(total / n);
}

}  // namespace

TEST_CASE("full network produces nine logit vectors and normalized fusion") {
  HerbsNet net(tiny_config());
  ImageBatch batch = random_batch(2, 32, 1, 10);
  ForwardOutput out = net.forward(batch, 0);

  auto nine = out.bundle.present();
  REQUIRE(nine.size() == 9);
  for (const Tensor* t : nine) REQUIRE(t->shape() == Shape{2, 10});
  REQUIRE(out.bundle.fused_probs.shape() == Shape{2, 10});
  for (int64_t b = 0; b < 2; ++b) {
    double s = 0.0;
    for (int64_t c = 0; c < 10; ++c) s += out.bundle.fused_probs.at2(b, c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK(net.head_count() == 9);
  CHECK(net.refinement_pair_count() == 4);
  CHECK(out.selections.size() == 4);
  // K capped at the location count: stage grids are 8x8, 4x4, 2x2, 1x1
  CHECK(out.selections[0][0].selected_idx.size() == 16);
  CHECK(out.selections[3][0].selected_idx.size() == 1);
}

TEST_CASE("zero weights collapse the total loss onto the merged loss") {
  HerbsConfig cfg = tiny_config();
  cfg.lambda_r = 0.0;
  cfg.bs.lambda_d = 0.0;
  cfg.bs.lambda_l = 0.0;
  HerbsNet net(cfg);
  ImageBatch batch = random_batch(2, 32, 2, 10);
  ForwardOutput out = net.forward(batch, 0);
  CHECK(out.loss_herbs.val().item() == out.loss_m.val().item());
}

TEST_CASE("epoch changes the loss only through the temperature") {
  HerbsNet net(tiny_config());
  ImageBatch batch = random_batch(2, 32, 3, 10);
  ForwardOutput e0 = net.forward(batch, 0);
  ForwardOutput e10 = net.forward(batch, 10);
  CHECK(e0.temperature == doctest::Approx(64.0));
  CHECK(e10.temperature == doctest::Approx(32.0));

  CHECK(e0.loss_m.val().item() == e10.loss_m.val().item());
  CHECK(e0.loss_d.val().item() == e10.loss_d.val().item());
  CHECK(e0.loss_l.val().item() == e10.loss_l.val().item());
  CHECK(e0.loss_r.val().item() != e10.loss_r.val().item());

  // recompute the refinement loss from the recorded logits at both
  // temperatures and match the forward outputs
  for (auto [epoch, expect_t] : std::vector<std::pair<int, double>>{{0, 64.0}, {10, 32.0}}) {
    std::vector<ClassifierPair> pairs;
    for (size_t i = 0; i < 4; ++i)
      pairs.push_back({Var::leaf(e0.bundle.td_logits[i], false),
                       Var::leaf(e0.bundle.bu_logits[i], false)});
    const double recomputed = refinement_loss(pairs, expect_t).val().item();
    const double from_forward =
        (epoch == 0 ? e0 : e10).loss_r.val().item();
    CHECK(recomputed == doctest::Approx(from_forward).epsilon(1e-12));
  }
}

TEST_CASE("fuse_predictions closed forms") {
  Rng rng(4);
  Tensor z = Tensor::randn({1, 6}, rng);
  std::vector<Tensor> nine(9, z);
  Tensor fused = fuse_predictions(nine);
  Tensor ninez = z;
  ninez.scale_(9.0);
  Tensor expect({1, 6});
  ops::detail::softmax_row(ninez.data(), expect.data(), 6);
  for (int64_t i = 0; i < 6; ++i) CHECK(fused[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  // two logit vectors summing to [1, 0]
  std::vector<Tensor> two{Tensor({1, 2}, {0.4, -0.3}), Tensor({1, 2}, {0.6, 0.3})};
  Tensor p = fuse_predictions(two);
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));

  // permutation of the list is bitwise identical
  std::vector<Tensor> list;
  for (int i = 0; i < 9; ++i) list.push_back(Tensor::randn({2, 5}, rng));
  Tensor base = fuse_predictions(list);
  std::vector<Tensor> perm{list[4], list[8], list[0], list[2], list[6],
                           list[1], list[7], list[3], list[5]};
  Tensor permuted = fuse_predictions(perm);
  for (int64_t i = 0; i < base.numel(); ++i) CHECK(base[i] == permuted[i]);

  std::vector<Tensor> bad{Tensor({1, 2}), Tensor({1, 3})};
  CHECK_THROWS_AS(fuse_predictions(bad), std::invalid_argument);
}

TEST_CASE("total loss recomposes from its components") {
  HerbsNet net(tiny_config());
  ImageBatch batch = random_batch(3, 32, 5, 10);
  ForwardOutput out = net.forward(batch, 4);
  LossBreakdown b = out.breakdown();
  const double recomposed_bs =
      net.config().bs.lambda_m * b.loss_m + net.config().bs.lambda_d * b.loss_d +
      net.config().bs.lambda_l * b.loss_l;
  CHECK(std::abs(b.loss_bs - recomposed_bs) < 1e-10);
  CHECK(std::abs(b.loss_herbs - (b.loss_bs + b.lambda_r * b.loss_r)) < 1e-10);
  for (double v : {b.loss_m, b.loss_d, b.loss_l, b.loss_r, b.loss_bs, b.loss_herbs})
    CHECK(std::isfinite(v));
}

TEST_CASE("variant head-count audit") {
  const std::pair<Variant, int> expected[] = {
      {Variant::a, 1}, {Variant::b, 1}, {Variant::c, 4}, {Variant::d, 8}, {Variant::e, 9}};
  for (auto [v, heads] : expected) {
    auto net = build_variant(v, tiny_config(v));
    CHECK(net->head_count() == heads);
    ImageBatch batch = random_batch(2, 32, 6, 10);
    ForwardOutput out = net->forward(batch, 0);
    CHECK(int(out.bundle.present().size()) == heads);
    CHECK(out.bundle.fused_probs.dim(1) == 10);
    CHECK(std::isfinite(out.loss_herbs.val().item()));
    if (v != Variant::e) {
      CHECK(out.selections.empty());
      CHECK(out.bundle.comb_logits.empty());
      CHECK_FALSE(out.loss_r.defined());
    }
  }
}

TEST_CASE("variant a equals the bare backbone classification") {
  HerbsNet net(tiny_config(Variant::a));
  ImageBatch batch = random_batch(2, 32, 7, 10);
  ForwardOutput out = net.forward(batch, 0);

  Var images = Var::leaf(batch.pixels, false);
  StageFeatures stages = net.backbone().forward(images);
  Var logits = net.final_head()(ops::global_avgpool(stages.stages[3]));
  for (int64_t i = 0; i < logits.numel(); ++i)
    CHECK(out.bundle.bu_logits[3][i] == logits.val()[i]);  // bit-identical
}

TEST_CASE("variant c and d losses are the mean of their heads' cross entropies") {
  for (Variant v : {Variant::c, Variant::d}) {
    auto net = build_variant(v, tiny_config(v));
    ImageBatch batch = random_batch(2, 32, 8, 10);
    ForwardOutput out = net->forward(batch, 0);
    double total = 0.0;
    int count = 0;
    for (const auto& t : out.bundle.bu_logits)
      if (!t.empty()) {
        total += hand_ce(t, *batch.labels);
        ++count;
      }
    for (const auto& t : out.bundle.td_logits)
      if (!t.empty()) {
        total += hand_ce(t, *batch.labels);
        ++count;
      }
    CHECK(count == (v == Variant::c ? 4 : 8));
    CHECK(out.loss_herbs.val().item() == doctest::Approx(total / count).epsilon(1e-10));
  }
}

TEST_CASE("inference never reads labels") {
  HerbsNet net(tiny_config());
  ImageBatch with_labels = random_batch(2, 32, 9, 10);
  ImageBatch without = with_labels;
  without.labels.reset();

  ForwardOutput a = net.forward(with_labels, 0, /*with_loss=*/false);
  ForwardOutput b = net.forward(without, 0, /*with_loss=*/false);
  CHECK_FALSE(a.loss_herbs.defined());
  for (int64_t i = 0; i < a.bundle.fused_probs.numel(); ++i)
    CHECK(a.bundle.fused_probs[i] == b.bundle.fused_probs[i]);

  CHECK_THROWS_AS(net.forward(without, 0, /*with_loss=*/true), std::invalid_argument);
}

TEST_CASE("forward is deterministic and repeatable") {
  HerbsNet n1(tiny_config()), n2(tiny_config());
  ImageBatch batch = random_batch(2, 32, 10, 10);
  ForwardOutput o1 = n1.forward(batch, 0);
  ForwardOutput o2 = n2.forward(batch, 0);
  CHECK(o1.loss_herbs.val().item() == o2.loss_herbs.val().item());
  for (int64_t i = 0; i < o1.bundle.fused_probs.numel(); ++i)
    CHECK(o1.bundle.fused_probs[i] == o2.bundle.fused_probs[i]);
}

TEST_CASE("label validation") {
  HerbsNet net(tiny_config());
  ImageBatch batch = random_batch(2, 32, 11, 10);
  (*batch.labels)[0] = 10;  // out of range
  CHECK_THROWS_AS(net.forward(batch, 0), std::out_of_range);
}

TEST_CASE("alternative top-k readout changes only the bottom-up bundle slots") {
  HerbsConfig cfg = tiny_config();
  cfg.readout = BundleReadout::topk_mean;
  HerbsNet alt(cfg);
  HerbsNet gap(tiny_config());
  ImageBatch batch = random_batch(2, 32, 12, 10);
  ForwardOutput oa = alt.forward(batch, 0);
  ForwardOutput og = gap.forward(batch, 0);
  // same parameters (same seed), same losses, different bu bundle entries
  CHECK(oa.loss_herbs.val().item() == og.loss_herbs.val().item());
  for (size_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < og.bundle.td_logits[i].numel(); ++j)
      CHECK(oa.bundle.td_logits[i][j] == og.bundle.td_logits[i][j]);
  bool any_diff = false;
  for (size_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < og.bundle.bu_logits[i].numel(); ++j)
      if (oa.bundle.bu_logits[i][j] != og.bundle.bu_logits[i][j]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("end-to-end gradient check on a reduced network") {
  HerbsConfig cfg;
  cfg.classes = 4;
  cfg.base_width = 4;
  cfg.neck_dim = 8;
  cfg.topk = {8, 4, 2, 1};
  cfg.seed = 3;
  HerbsNet net(cfg);
  ImageBatch batch = random_batch(1, 32, 13, 4);

  // The training gradient treats distillation targets and top-K index sets
  // as constants (stop-gradient / non-differentiable selection), so the
  // finite-difference oracle evaluates the loss with both pinned at their
  // base values.
  ForwardOutput base = net.forward(batch, 2);
  ForwardFreeze freeze = ForwardFreeze::capture(base);
  auto fwd = [&] { return net.forward(batch, 2, true, &freeze).loss_herbs; };
  CHECK(fwd().val().item() == base.loss_herbs.val().item());

  Rng pick(99);
  int checked = 0;
  while (checked < 8) {
    const size_t pi = size_t(pick.below(net.params().size()));
    Var p = net.params().var(pi);
    const int64_t coord = int64_t(pick.below(uint64_t(p.numel())));
    net.params().zero_grads();
    auto r = herbs_test::grad_check(fwd, p, {coord}, 1e-5);
    CAPTURE(net.params().name(pi));
    CAPTURE(coord);
    CHECK(r.max_rel_err < 1e-4);
    ++checked;
  }
}

TEST_CASE("config validation") {
  HerbsConfig cfg = tiny_config();
  cfg.topk = {8, 8, 2, 1};
  CHECK_THROWS_AS(HerbsNet{cfg}, std::invalid_argument);
  cfg = tiny_config();
  cfg.classes = 1;
  CHECK_THROWS_AS(HerbsNet{cfg}, std::invalid_argument);
  cfg = tiny_config();
  cfg.lambda_r = -0.5;
  CHECK_THROWS_AS(HerbsNet{cfg}, std::invalid_argument);
  CHECK_THROWS_AS(variant_from_string("f"), std::invalid_argument);
  CHECK(variant_from_string("e") == Variant::e);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "herbs/backbone.hpp"
#include "test_util.hpp"

using namespace herbs;

namespace {
Var rand_images(int64_t b, int64_t hw, uint64_t seed) {
  Rng rng(seed);
  return Var::leaf(Tensor::randn({b, 3, hw, hw}, rng, 0.5), false);
}
}  // namespace

TEST_CASE("toy conv backbone stage shapes") {
  BackboneHandle h(BackboneKind::conv, 16, 0);
  StageFeatures sf = h.extract(rand_images(2, 64, 1));
  REQUIRE(sf.stages.size() == 4);
  CHECK(sf.stage_strides == std::vector<int64_t>{4, 8, 16, 32});
  CHECK(sf.stages[0].shape() == Shape{2, 16, 16, 16});
  CHECK(sf.stages[1].shape() == Shape{2, 32, 8, 8});
  CHECK(sf.stages[2].shape() == Shape{2, 64, 4, 4});
  CHECK(sf.stages[3].shape() == Shape{2, 128, 2, 2});
}

TEST_CASE("attention backbone stage spatial sizes at 384") {
  BackboneHandle h(BackboneKind::attention, 4, 0);
  StageFeatures sf = h.extract(rand_images(1, 384, 2));
  CHECK(sf.stages[0].shape()[2] == 96);
  CHECK(sf.stages[1].shape()[2] == 48);
  CHECK(sf.stages[2].shape()[2] == 24);
  CHECK(sf.stages[3].shape()[2] == 12);
}

TEST_CASE("input resolution must match stride structure") {
  BackboneHandle h(BackboneKind::conv, 8, 0);
  Rng rng(3);
  Var bad = Var::leaf(Tensor::randn({1, 3, 50, 50}, rng), false);
  CHECK_THROWS_AS(h.extract(bad), std::invalid_argument);
}

TEST_CASE("shapes are a pure function of input size and width") {
  for (auto kind : {BackboneKind::conv, BackboneKind::attention}) {
    for (int64_t base : {4, 8}) {
      BackboneHandle h(kind, base, 7);
      for (int64_t hw : {32, 64, 96, 128}) {
        StageFeatures sf = h.extract(rand_images(1, hw, uint64_t(hw)));
        for (size_t i = 0; i < 4; ++i) {
          CHECK(sf.stages[i].shape() ==
                Shape{1, base << i, hw / sf.stage_strides[i], hw / sf.stage_strides[i]});
        }
      }
    }
  }
}

TEST_CASE("deterministic initialization and forward") {
  for (auto kind : {BackboneKind::conv, BackboneKind::attention}) {
    BackboneHandle a(kind, 8, 42), b(kind, 8, 42), c(kind, 8, 43);
    REQUIRE(a.params().size() == b.params().size());
    bool any_diff_seed = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
      const auto& pa = a.params().var(i).val();
      const auto& pb = b.params().var(i).val();
      REQUIRE(pa.numel() == pb.numel());
      for (int64_t j = 0; j < pa.numel(); ++j) CHECK(pa[j] == pb[j]);
      const auto& pc = c.params().var(i).val();
      for (int64_t j = 0; j < pa.numel(); ++j)
        if (pa[j] != pc[j]) any_diff_seed = true;
    }
    CHECK(any_diff_seed);

    Var img = rand_images(1, 32, 9);
    StageFeatures s1 = a.extract(img), s2 = b.extract(img);
    for (size_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < s1.stages[i].numel(); ++j)
        CHECK(s1.stages[i].val()[j] == s2.stages[i].val()[j]);
  }
}

TEST_CASE("width below minimum rejected, param count reported") {
  CHECK_THROWS_AS(BackboneHandle(BackboneKind::conv, 2, 0), std::invalid_argument);
  BackboneHandle h(BackboneKind::conv, 8, 0);
  CHECK(h.param_count() > 0);
  int64_t manual = 0;
  for (size_t i = 0; i < h.params().size(); ++i) manual += h.params().var(i).numel();
  CHECK(h.param_count() == manual);
}

TEST_CASE("gradient flows from every stage into every preceding block") {
  for (auto kind : {BackboneKind::conv, BackboneKind::attention}) {
    CAPTURE(to_string(kind));
    BackboneHandle h(kind, 8, 5);
    Var img = rand_images(1, 32, 11);
    auto loss_at_stage = [&](size_t stage) {
      return ops::sum_all(ops::tanh_op(h.extract(img).stages[stage]));
    };

    h.params().zero_grads();
    Var loss = loss_at_stage(3);
    backward(loss);

    // every block that feeds stage 3 must receive some gradient
    std::vector<std::string> prefixes;
    if (kind == BackboneKind::conv)
      prefixes = {"backbone/stem", "backbone/refine0", "backbone/down1", "backbone/refine1",
                  "backbone/down2", "backbone/refine2", "backbone/down3", "backbone/refine3"};
    else
      prefixes = {"backbone/embed", "backbone/stage0", "backbone/stage1", "backbone/stage2",
                  "backbone/stage3"};
    for (const auto& prefix : prefixes) {
      double max_abs = 0.0;
      for (size_t i = 0; i < h.params().size(); ++i) {
        if (h.params().name(i).rfind(prefix, 0) != 0) continue;
        auto& v = h.params().var(i);
        if (!v.has_grad()) continue;
        for (int64_t j = 0; j < v.numel(); ++j)
          max_abs = std::max(max_abs, std::abs(v.grad_raw()[j]));
      }
      CAPTURE(prefix);
      CHECK(max_abs > 0.0);
    }

    // finite differences on a 5-parameter slice of the earliest block
    Var first = h.params().var(0);
    auto fwd = [&] { return loss_at_stage(3); };
    Rng pick(13);
    std::vector<int64_t> coords;
    for (int k = 0; k < 5; ++k) coords.push_back(int64_t(pick.below(uint64_t(first.numel()))));
    auto r = herbs_test::grad_check(fwd, first, coords, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("external adapter enforces the stage contract") {
  ParamStore ps;
  Rng rng(1);
  auto inner = std::make_shared<ToyConvBackbone>(ps, "ext", 8, rng);
  ExternalBackboneAdapter ok([inner](const Var& x) { return inner->forward(x); },
                             inner->stage_channels(), inner->stage_strides());
  CHECK(ok.forward(rand_images(1, 32, 3)).stages.size() == 4);

  ExternalBackboneAdapter broken(
      [inner](const Var& x) {
        StageFeatures s = inner->forward(x);
        s.stage_strides = {4, 8, 8, 32};  // not strictly increasing
        return s;
      },
      inner->stage_channels(), inner->stage_strides());
  CHECK_THROWS_AS(broken.forward(rand_images(1, 32, 3)), std::logic_error);
}

TEST_CASE("unsupported kind string rejected") {
  CHECK_THROWS_AS(backbone_kind_from_string("resnet"), std::invalid_argument);
  CHECK(backbone_kind_from_string("conv") == BackboneKind::conv);
  CHECK(backbone_kind_from_string("attention") == BackboneKind::attention);
}

#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include "herbs/backbone.hpp"
#include "herbs/bs.hpp"
#include "herbs/neck.hpp"
#include "herbs/refinement.hpp"

namespace herbs {

// Fig-4 ablation ladder: (a) bare backbone, (b) + neck with one classifier,
// (c) + four bottom-up classifiers, (d) + eight classifiers on both paths,
// (e) the full network with selector, combiner and refinement.
enum class Variant { a, b, c, d, e };

inline Variant variant_from_string(const std::string& s) {
  if (s.size() == 1 && s[0] >= 'a' && s[0] <= 'e') return Variant(s[0] - 'a');
  throw std::invalid_argument("unknown variant: " + s + " (expected a..e)");
}

inline std::string to_string(Variant v) { return std::string(1, char('a' + int(v))); }

enum class BundleReadout { gap, topk_mean };

inline BundleReadout readout_from_string(const std::string& s) {
  if (s == "gap") return BundleReadout::gap;
  if (s == "topk_mean") return BundleReadout::topk_mean;
  throw std::invalid_argument("unknown readout: " + s);
}

inline std::string to_string(BundleReadout r) {
  return r == BundleReadout::gap ? "gap" : "topk_mean";
}

struct HerbsConfig {
  int64_t classes = 10;
  BackboneKind backbone = BackboneKind::conv;
  int64_t base_width = 16;
  int64_t neck_dim = 64;
  std::vector<int64_t> topk = {256, 128, 64, 32};
  BsLossWeights bs;
  double lambda_r = 1.0;
  TemperatureSchedule schedule;
  bool t_squared = false;
  Activation act = Activation::silu;
  DroppedMode dropped_mode = DroppedMode::tanh;
  BundleReadout readout = BundleReadout::gap;
  Variant variant = Variant::e;
  uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw std::invalid_argument("config: classes must be >= 2");
    if (neck_dim < 1) throw std::invalid_argument("config: neck_dim must be >= 1");
    if (topk.size() != 4) throw std::invalid_argument("config: topk needs 4 values");
    for (size_t i = 0; i < topk.size(); ++i) {
      if (topk[i] < 1) throw std::invalid_argument("config: topk values must be >= 1");
      if (i > 0 && topk[i] >= topk[i - 1])
        throw std::invalid_argument("config: topk must be strictly decreasing");
    }
    if (lambda_r < 0) throw std::invalid_argument("config: lambda_r must be nonnegative");
    bs.validate();
  }
};

// the nine classifier outputs (or the subset a variant has) as plain values
struct PredictionBundle {
  std::array<Tensor, 4> td_logits;  // empty Tensor when the head is absent
  std::array<Tensor, 4> bu_logits;
  Tensor comb_logits;
  Tensor fused_probs;  // [B, C]

  std::vector<const Tensor*> present() const {
    std::vector<const Tensor*> out;
    for (const auto& t : td_logits)
      if (!t.empty()) out.push_back(&t);
    for (const auto& t : bu_logits)
      if (!t.empty()) out.push_back(&t);
    if (!comb_logits.empty()) out.push_back(&comb_logits);
    return out;
  }
};

struct LossBreakdown {
  double loss_m = 0, loss_d = 0, loss_l = 0, loss_r = 0, loss_bs = 0, loss_herbs = 0;
  double lambda_r = 1.0;
};

struct ForwardOutput {
  PredictionBundle bundle;
  Var loss_m, loss_d, loss_l, loss_r, loss_bs, loss_herbs;
  std::vector<ClassificationMap> maps;                  // per stage with a location head
  std::vector<std::vector<SelectionResult>> selections;  // [stage][sample], variant e
  std::array<Tensor, 4> teacher_logits;                 // bottom-up pooled logits (variant e)
  double temperature = 0.0;
  double lambda_r = 1.0;

  LossBreakdown breakdown() const {
    LossBreakdown b;
    b.lambda_r = lambda_r;
    auto get = [](const Var& v) { return v.defined() ? v.val().item() : 0.0; };
    b.loss_m = get(loss_m);
    b.loss_d = get(loss_d);
    b.loss_l = get(loss_l);
    b.loss_r = get(loss_r);
    b.loss_bs = get(loss_bs);
    b.loss_herbs = get(loss_herbs);
    return b;
  }

  void check_finite() const {
    const std::pair<const char*, const Var*> items[] = {
        {"loss_m", &loss_m},   {"loss_d", &loss_d},   {"loss_l", &loss_l},
        {"loss_r", &loss_r},   {"loss_bs", &loss_bs}, {"loss_herbs", &loss_herbs}};
    for (const auto& [name, v] : items)
      if (v->defined() && !std::isfinite(v->val().item())) throw NonFiniteLossError(name);
  }
};

// Pins the model's two non-gradient choices — the detached distillation
// targets and the top-K index sets — at values captured from a reference
// forward pass. Finite differences of the pinned loss probe exactly the
// function whose gradient training uses.
struct ForwardFreeze {
  std::array<Tensor, 4> teacher_logits;
  std::vector<std::array<std::vector<int64_t>, 4>> selected;  // [sample][stage]

  static ForwardFreeze capture(const ForwardOutput& out) {
    ForwardFreeze f;
    f.teacher_logits = out.teacher_logits;
    if (!out.selections.empty()) {
      const size_t batch = out.selections[0].size();
      f.selected.resize(batch);
      for (size_t b = 0; b < batch; ++b)
        for (size_t s = 0; s < 4; ++s)
          f.selected[b][s] = out.selections[s][b].selected_idx;
    }
    return f;
  }
};

// Softmax of the sum of classifier logits; every vector must agree in shape.
// Per-coordinate addends are sorted before summation so the result is
// bitwise invariant under permutations of the list.
inline Tensor fuse_predictions(const std::vector<const Tensor*>& logits) {
  if (logits.empty()) throw std::invalid_argument("fuse_predictions: no logits");
  const Shape shape = logits.front()->shape();
  for (const Tensor* t : logits)
    if (t->shape() != shape) throw std::invalid_argument("fuse_predictions: length mismatch");
  Tensor sum(shape);
  std::vector<double> addends(logits.size());
  for (int64_t i = 0; i < sum.numel(); ++i) {
    for (size_t j = 0; j < logits.size(); ++j) addends[j] = (*logits[j])[i];
    std::sort(addends.begin(), addends.end());
    double acc = 0.0;
    for (double v : addends) acc += v;
    sum[i] = acc;
  }
  const int64_t c = shape.back();
  const int64_t rows = sum.numel() / c;
  Tensor probs(shape);
  for (int64_t r = 0; r < rows; ++r)
    ops::detail::softmax_row(sum.data() + r * c, probs.data() + r * c, c);
  return probs;
}

inline Tensor fuse_predictions(const std::vector<Tensor>& logits) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(logits.size());
  for (const auto& t : logits) ptrs.push_back(&t);
  return fuse_predictions(ptrs);
}

class HerbsNet {
public:
  explicit HerbsNet(HerbsConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::stream(cfg_.seed, 0x4e45);
    backbone_ = make_toy_backbone(params_, "backbone", cfg_.backbone, cfg_.base_width, rng,
                                  cfg_.act);
    const auto chans = backbone_->stage_channels();

    if (cfg_.variant == Variant::a) {
      final_head_ = Linear::create(params_, "head/final", chans.back(), cfg_.classes, rng);
      return;
    }
    neck_ = std::make_unique<FusionNeck>(params_, "neck", chans, cfg_.neck_dim, rng, cfg_.act);
    if (cfg_.variant == Variant::b) {
      final_head_ = Linear::create(params_, "head/final", cfg_.neck_dim, cfg_.classes, rng);
      return;
    }
    for (int i = 0; i < 4; ++i)
      bu_heads_.push_back(Linear::create(params_, "head/bu" + std::to_string(i), cfg_.neck_dim,
                                         cfg_.classes, rng));
    if (cfg_.variant == Variant::d || cfg_.variant == Variant::e)
      for (int i = 0; i < 4; ++i)
        td_heads_.push_back(Linear::create(params_, "head/td" + std::to_string(i), cfg_.neck_dim,
                                           cfg_.classes, rng));
    if (cfg_.variant == Variant::e)
      combiner_ = Combiner(params_, "combiner", cfg_.neck_dim, cfg_.classes, rng, cfg_.act);
  }

  const HerbsConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Backbone& backbone() const { return *backbone_; }
  FusionNeck& neck() { return *neck_; }
  std::vector<Linear>& bu_heads() { return bu_heads_; }
  std::vector<Linear>& td_heads() { return td_heads_; }
  Combiner& combiner() { return combiner_; }
  Linear& final_head() { return final_head_; }

  int head_count() const {
    switch (cfg_.variant) {
      case Variant::a:
      case Variant::b: return 1;
      case Variant::c: return 4;
      case Variant::d: return 8;
      case Variant::e: return 9;
    }
    return 0;
  }

  int refinement_pair_count() const {
    return cfg_.variant == Variant::e
               ? int(plan_refinement_pairs(RefinementMode::full, int(td_heads_.size()),
                                           int(bu_heads_.size()))
                         .size())
               : 0;
  }

  double temperature_for_epoch(int64_t epoch) const { return temperature_at(epoch, cfg_.schedule); }

  // effective per-stage selection count: configured K capped at the number
  // of locations (small inputs shrink the grids below the paper-scale K)
  int64_t effective_k(size_t stage, int64_t h, int64_t w) const {
    return std::min<int64_t>(cfg_.topk[stage], h * w);
  }

  ForwardOutput forward(const ImageBatch& batch, int64_t epoch, bool with_loss = true,
                        const ForwardFreeze* freeze = nullptr) {
    batch.validate(cfg_.classes);
    if (with_loss && !batch.labels)
      throw std::invalid_argument("forward: labels required when losses are requested");

    ForwardOutput out;
    out.lambda_r = cfg_.lambda_r;
    Var images = Var::leaf(batch.pixels, false);
    StageFeatures stages = backbone_->forward(images);
    const int64_t B = batch.batch_size();

    switch (cfg_.variant) {
      case Variant::a: {
        Var logits = final_head_(ops::global_avgpool(stages.stages[3]));
        out.maps.push_back(classify_locations(stages.stages[3], final_head_));
        finish_single(out, logits, batch, with_loss);
        return out;
      }
      case Variant::b: {
        FusedFeatures fused = neck_->fuse(stages);
        Var logits = final_head_(ops::global_avgpool(fused.bottom_up[3]));
        out.maps.push_back(classify_locations(fused.bottom_up[3], final_head_));
        finish_single(out, logits, batch, with_loss);
        return out;
      }
      case Variant::c:
      case Variant::d: {
        FusedFeatures fused = neck_->fuse(stages);
        std::vector<Var> head_logits;
        for (size_t i = 0; i < 4; ++i) {
          Var l = bu_heads_[i](ops::global_avgpool(fused.bottom_up[i]));
          out.bundle.bu_logits[i] = l.val();
          head_logits.push_back(l);
          out.maps.push_back(classify_locations(fused.bottom_up[i], bu_heads_[i]));
        }
        if (cfg_.variant == Variant::d)
          for (size_t i = 0; i < 4; ++i) {
            Var l = td_heads_[i](ops::global_avgpool(fused.top_down[i]));
            out.bundle.td_logits[i] = l.val();
            head_logits.push_back(l);
          }
        out.bundle.fused_probs = fuse_predictions(out.bundle.present());
        if (with_loss) {
          Var total;
          for (const auto& l : head_logits) {
            Var ce = ops::cross_entropy_mean(l, *batch.labels);
            total = total.defined() ? ops::add(total, ce) : ce;
          }
          out.loss_herbs = ops::mul_scalar(total, 1.0 / double(head_logits.size()));
          out.check_finite();
        }
        return out;
      }
      case Variant::e: break;
    }

    // full network
    out.temperature = temperature_for_epoch(epoch);
    FusedFeatures fused = neck_->fuse(stages);

    std::vector<Var> bu_pooled, td_pooled;
    for (size_t i = 0; i < 4; ++i) {
      out.maps.push_back(classify_locations(fused.bottom_up[i], bu_heads_[i]));
      bu_pooled.push_back(bu_heads_[i](ops::global_avgpool(fused.bottom_up[i])));
      td_pooled.push_back(td_heads_[i](ops::global_avgpool(fused.top_down[i])));
    }

    out.selections.resize(4);
    std::vector<Var> comb_rows;
    comb_rows.reserve(size_t(B));
    std::vector<Var> dropped_parts;
    for (int64_t b = 0; b < B; ++b) {
      std::vector<Var> tokens;
      for (size_t i = 0; i < 4; ++i) {
        const auto& map_shape = fused.bottom_up[i].shape();
        const int64_t k = effective_k(i, map_shape[2], map_shape[3]);
        SelectionResult sel =
            freeze ? selection_from_indices(out.maps[i], fused.bottom_up[i],
                                            freeze->selected[size_t(b)][i], b)
                   : select_topk(out.maps[i], fused.bottom_up[i], k, b);
        tokens.push_back(sel.selected_feats);
        if (sel.dropped_logits.defined()) dropped_parts.push_back(sel.dropped_logits);
        out.selections[i].push_back(std::move(sel));
      }
      comb_rows.push_back(combiner_(tokens));
    }
    Var comb_logits = comb_rows.size() == 1 ? comb_rows[0] : ops::concat_rows(comb_rows);

    for (size_t i = 0; i < 4; ++i) {
      out.teacher_logits[i] = bu_pooled[i].val();
      out.bundle.td_logits[i] = td_pooled[i].val();
      out.bundle.bu_logits[i] =
          cfg_.readout == BundleReadout::gap ? bu_pooled[i].val() : topk_mean_logits(out, i, B);
    }
    out.bundle.comb_logits = comb_logits.val();
    out.bundle.fused_probs = fuse_predictions(out.bundle.present());

    if (with_loss) {
      const auto& labels = *batch.labels;
      out.loss_m = merged_loss(comb_logits, labels);
      Var all_dropped;
      if (!dropped_parts.empty())
        all_dropped =
            dropped_parts.size() == 1 ? dropped_parts[0] : ops::concat_rows(dropped_parts);
      out.loss_d = dropped_loss(all_dropped, cfg_.dropped_mode);
      Var layer_total;
      for (size_t i = 0; i < 4; ++i) {
        Var ce = ops::cross_entropy_mean(bu_pooled[i], labels);
        layer_total = layer_total.defined() ? ops::add(layer_total, ce) : ce;
      }
      out.loss_l = layer_total;
      out.loss_bs = bs_total(out.loss_m, out.loss_d, out.loss_l, cfg_.bs);

      std::vector<ClassifierPair> pairs;
      for (auto [s, t] : plan_refinement_pairs(RefinementMode::full, 4, 4)) {
        Var teacher = freeze ? Var::leaf(freeze->teacher_logits[size_t(t)], false)
                             : bu_pooled[size_t(t)];
        pairs.push_back({td_pooled[size_t(s)], teacher});
      }
      out.loss_r = refinement_loss(pairs, out.temperature, cfg_.t_squared);
      out.loss_herbs = ops::add(out.loss_bs, ops::mul_scalar(out.loss_r, cfg_.lambda_r));
      out.check_finite();
    }
    return out;
  }

private:
  void finish_single(ForwardOutput& out, const Var& logits, const ImageBatch& batch,
                     bool with_loss) {
    // single-classifier variants keep their head in the final bottom-up slot
    out.bundle.bu_logits[3] = logits.val();
    out.bundle.fused_probs = fuse_predictions(out.bundle.present());
    if (with_loss) {
      out.loss_herbs = ops::cross_entropy_mean(logits, *batch.labels);
      out.check_finite();
    }
  }

  // alternative bundle readout: mean of the selected locations' logits
  Tensor topk_mean_logits(const ForwardOutput& out, size_t stage, int64_t batch_size) const {
    Tensor result({batch_size, cfg_.classes});
    for (int64_t b = 0; b < batch_size; ++b) {
      const auto& sel = out.selections[stage][size_t(b)].selected_logits;
      const int64_t k = sel.shape()[0];
      for (int64_t j = 0; j < cfg_.classes; ++j) {
        double acc = 0.0;
        for (int64_t r = 0; r < k; ++r) acc += sel.val().at2(r, j);
        result.at2(b, j) = acc / double(k);
      }
    }
    return result;
  }

  HerbsConfig cfg_;
  ParamStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<FusionNeck> neck_;
  std::vector<Linear> bu_heads_;
  std::vector<Linear> td_heads_;
  Combiner combiner_;
  Linear final_head_;
};

inline std::unique_ptr<HerbsNet> build_variant(Variant v, HerbsConfig cfg) {
  cfg.variant = v;
  return std::make_unique<HerbsNet>(std::move(cfg));
}

// Plain backbone with pooled classifiers on its last blocks. The basic
// refinement module attaches here: the final classifier acts as teacher for
// the one before it.
class BasicRefinedNet {
public:
  explicit BasicRefinedNet(HerbsConfig cfg, int heads_on_last_blocks = 4)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::stream(cfg_.seed, 0xba51c);
    backbone_ = make_toy_backbone(params_, "backbone", cfg_.backbone, cfg_.base_width, rng,
                                  cfg_.act);
    const auto chans = backbone_->stage_channels();
    const int n = int(chans.size());
    if (heads_on_last_blocks < 1 || heads_on_last_blocks > n)
      throw std::invalid_argument("BasicRefinedNet: bad head count");
    first_head_block_ = n - heads_on_last_blocks;
    for (int i = first_head_block_; i < n; ++i)
      heads_.push_back(Linear::create(params_, "head/block" + std::to_string(i),
                                      chans[size_t(i)], cfg_.classes, rng));
  }

  ParamStore& params() { return params_; }
  int head_count() const { return int(heads_.size()); }
  int pair_count() const { return int(pairs_.size()); }

  // wires refinement pairs over the block heads; returns how many
  int attach(RefinementMode mode) {
    if (mode != RefinementMode::basic)
      throw std::invalid_argument("BasicRefinedNet supports the basic refinement mode only");
    pairs_ = plan_refinement_pairs(mode, 0, head_count());
    return int(pairs_.size());
  }

  // classification by the final head; loss = cross entropy of the final
  // head plus the temperature-scaled pair loss when attached
  std::pair<Var, Var> forward(const ImageBatch& batch, int64_t epoch) {
    batch.validate(cfg_.classes);
    StageFeatures stages = backbone_->forward(Var::leaf(batch.pixels, false));
    std::vector<Var> logits;
    for (size_t i = 0; i < heads_.size(); ++i)
      logits.push_back(
          heads_[i](ops::global_avgpool(stages.stages[size_t(first_head_block_) + i])));
    Var loss;
    if (batch.labels) {
      loss = ops::cross_entropy_mean(logits.back(), *batch.labels);
      if (!pairs_.empty()) {
        std::vector<ClassifierPair> pr;
        for (auto [s, t] : pairs_) pr.push_back({logits[size_t(s)], logits[size_t(t)]});
        Var lr_loss = refinement_loss(pr, temperature_at(epoch, cfg_.schedule), cfg_.t_squared);
        loss = ops::add(loss, ops::mul_scalar(lr_loss, cfg_.lambda_r));
      }
    }
    return {logits.back(), loss};
  }

private:
  HerbsConfig cfg_;
  ParamStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<Linear> heads_;
  int first_head_block_ = 0;
  std::vector<std::pair<int, int>> pairs_;
};

// full mode: the per-stage top-down/bottom-up pairs of the HERBS network
inline int attach_refinement(HerbsNet& net, RefinementMode mode) {
  if (mode != RefinementMode::full)
    throw std::invalid_argument("the HERBS network uses full refinement; attach basic mode to a "
                                "plain backbone chain");
  if (net.config().variant != Variant::e)
    throw std::invalid_argument("attach_refinement: network is missing the classifier pairs");
  return int(plan_refinement_pairs(mode, 4, 4).size());
}

// basic mode: one pair over the last two block classifiers
inline int attach_refinement(BasicRefinedNet& net, RefinementMode mode) {
  return net.attach(mode);
}

}  // namespace herbs

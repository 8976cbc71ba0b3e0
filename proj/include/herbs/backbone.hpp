#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "herbs/nn.hpp"

namespace herbs {

struct ImageBatch {
  Tensor pixels;  // [B, 3, H, W], normalized per channel
  std::vector<std::string> ids;
  std::optional<std::vector<int>> labels;

  int64_t batch_size() const { return pixels.dim(0); }
  int64_t height() const { return pixels.dim(2); }
  int64_t width() const { return pixels.dim(3); }

  void validate(int64_t num_classes) const {
    if (pixels.ndim() != 4 || pixels.dim(1) != 3)
      throw std::invalid_argument("ImageBatch: pixels must be [B,3,H,W]");
    if (int64_t(ids.size()) != batch_size())
      throw std::invalid_argument("ImageBatch: ids/batch mismatch");
    if (labels) {
      if (int64_t(labels->size()) != batch_size())
        throw std::invalid_argument("ImageBatch: labels/batch mismatch");
      for (int l : *labels)
        if (l < 0 || int64_t(l) >= num_classes)
          throw std::out_of_range("ImageBatch: label out of range");
    }
  }
};

struct StageFeatures {
  std::vector<Var> stages;            // stage i: [B, C_i, H_i, W_i]
  std::vector<int64_t> stage_strides;  // strictly increasing

  void check_contract(int64_t h_img, int64_t w_img) const {
    if (stages.size() != stage_strides.size() || stages.empty())
      throw std::logic_error("StageFeatures: stage/stride count mismatch");
    int64_t prev_stride = 0, prev_ch = 0;
    for (size_t i = 0; i < stages.size(); ++i) {
      if (stage_strides[i] <= prev_stride)
        throw std::logic_error("StageFeatures: strides must increase");
      const auto& s = stages[i].shape();
      if (s.size() != 4 || s[2] != h_img / stage_strides[i] || s[3] != w_img / stage_strides[i])
        throw std::logic_error("StageFeatures: stage shape inconsistent with stride");
      if (s[1] < prev_ch) throw std::logic_error("StageFeatures: channels must be non-decreasing");
      prev_stride = stage_strides[i];
      prev_ch = s[1];
    }
  }
};

// Contract every multi-stage feature extractor satisfies: four maps at
// strides 4/8/16/32 with non-decreasing channel counts.
class Backbone {
public:
  virtual ~Backbone() = default;
  virtual StageFeatures forward(const Var& images) const = 0;
  virtual std::vector<int64_t> stage_channels() const = 0;
  virtual std::vector<int64_t> stage_strides() const { return {4, 8, 16, 32}; }
  int64_t num_stages() const { return int64_t(stage_channels().size()); }

  void check_input(const Shape& s) const {
    if (s.size() != 4) throw std::invalid_argument("backbone: input must be [B,C,H,W]");
    const int64_t max_stride = stage_strides().back();
    if (s[2] % max_stride != 0 || s[3] % max_stride != 0 || s[2] == 0 || s[3] == 0)
      throw std::invalid_argument("backbone: input " + shape_str(s) +
                                  " not divisible by stride " + std::to_string(max_stride));
  }
};

// minimal convolutional backbone: stride-4 stem, then three stride-2 blocks,
// width doubling per block
class ToyConvBackbone final : public Backbone {
public:
  ToyConvBackbone(ParamStore& ps, const std::string& prefix, int64_t base_width, Rng& rng,
                  Activation act = Activation::silu)
      : base_(base_width), act_(act) {
    if (base_width < 4) throw std::invalid_argument("toy backbone: base_width must be >= 4");
    const double gain = init::conv_gain(act);
    stem_ = Conv2d::create(ps, prefix + "/stem", 3, base_width, 4, 4, 0, rng, gain);
    stem_norm_ = ChannelNorm::create(ps, prefix + "/stem_norm", base_width);
    for (int i = 0; i < 4; ++i) {
      const int64_t cin = base_width << (i == 0 ? 0 : i - 1);
      const int64_t cout = base_width << i;
      if (i > 0) {
        down_.push_back(Conv2d::create(ps, prefix + "/down" + std::to_string(i), cin, cout, 3, 2,
                                       1, rng, gain));
        down_norm_.push_back(
            ChannelNorm::create(ps, prefix + "/down_norm" + std::to_string(i), cout));
      }
      refine_.push_back(Conv2d::create(ps, prefix + "/refine" + std::to_string(i), cout, cout, 3,
                                       1, 1, rng, gain));
      refine_norm_.push_back(
          ChannelNorm::create(ps, prefix + "/refine_norm" + std::to_string(i), cout));
    }
  }

  StageFeatures forward(const Var& images) const override {
    check_input(images.shape());
    StageFeatures out;
    out.stage_strides = stage_strides();
    Var x = apply_activation(stem_norm_(stem_(images)), act_);
    for (int i = 0; i < 4; ++i) {
      if (i > 0) x = apply_activation(down_norm_[size_t(i - 1)](down_[size_t(i - 1)](x)), act_);
      x = apply_activation(refine_norm_[size_t(i)](refine_[size_t(i)](x)), act_);
      out.stages.push_back(x);
    }
    out.check_contract(images.shape()[2], images.shape()[3]);
    return out;
  }

  std::vector<int64_t> stage_channels() const override {
    return {base_, base_ * 2, base_ * 4, base_ * 8};
  }

private:
  int64_t base_;
  Activation act_;
  Conv2d stem_;
  ChannelNorm stem_norm_;
  std::vector<Conv2d> down_;
  std::vector<ChannelNorm> down_norm_;
  std::vector<Conv2d> refine_;
  std::vector<ChannelNorm> refine_norm_;
};

// windowed single-head self-attention backbone: stride-4 patch embedding,
// stride-2 patch merging, one attention + MLP block per stage
class ToyAttentionBackbone final : public Backbone {
public:
  ToyAttentionBackbone(ParamStore& ps, const std::string& prefix, int64_t base_width, Rng& rng,
                       Activation act = Activation::silu, int64_t window = 4)
      : base_(base_width), act_(act), window_(window) {
    if (base_width < 4) throw std::invalid_argument("toy backbone: base_width must be >= 4");
    embed_ = Conv2d::create(ps, prefix + "/embed", 3, base_width, 4, 4, 0, rng);
    for (int i = 0; i < 4; ++i) {
      const int64_t d = base_width << i;
      const std::string sp = prefix + "/stage" + std::to_string(i);
      if (i > 0) merge_.push_back(Conv2d::create(ps, sp + "/merge", d / 2, d, 2, 2, 0, rng));
      blocks_.push_back(Block{
          LayerNorm::create(ps, sp + "/ln1", d),
          Linear::create(ps, sp + "/attn_q", d, d, rng),
          Linear::create(ps, sp + "/attn_k", d, d, rng),
          Linear::create(ps, sp + "/attn_v", d, d, rng),
          Linear::create(ps, sp + "/attn_o", d, d, rng),
          LayerNorm::create(ps, sp + "/ln2", d),
          Linear::create(ps, sp + "/mlp_in", d, 2 * d, rng),
          Linear::create(ps, sp + "/mlp_out", 2 * d, d, rng),
      });
    }
  }

  StageFeatures forward(const Var& images) const override {
    check_input(images.shape());
    StageFeatures out;
    out.stage_strides = stage_strides();
    Var x = embed_(images);
    for (int i = 0; i < 4; ++i) {
      if (i > 0) x = merge_[size_t(i - 1)](x);
      x = block_forward(x, blocks_[size_t(i)]);
      out.stages.push_back(x);
    }
    out.check_contract(images.shape()[2], images.shape()[3]);
    return out;
  }

  std::vector<int64_t> stage_channels() const override {
    return {base_, base_ * 2, base_ * 4, base_ * 8};
  }

private:
  struct Block {
    LayerNorm ln1;
    Linear q, k, v, o;
    LayerNorm ln2;
    Linear mlp_in, mlp_out;
  };

  // largest window size <= preferred that divides the extent
  static int64_t fit_window(int64_t extent, int64_t preferred) {
    for (int64_t w = std::min(extent, preferred); w > 1; --w)
      if (extent % w == 0) return w;
    return 1;
  }

  Var block_forward(const Var& x, const Block& blk) const {
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t wh = fit_window(H, window_), ww = fit_window(W, window_);
    Var rows = ops::locations_as_rows(x);  // [B*H*W, C]

    // window-partition ordering of row indices
    const int64_t wins_y = H / wh, wins_x = W / ww, n = wh * ww;
    std::vector<int64_t> order;
    order.reserve(size_t(B * H * W));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t gy = 0; gy < wins_y; ++gy)
        for (int64_t gx = 0; gx < wins_x; ++gx)
          for (int64_t iy = 0; iy < wh; ++iy)
            for (int64_t ix = 0; ix < ww; ++ix)
              order.push_back(b * H * W + (gy * wh + iy) * W + (gx * ww + ix));
    std::vector<int64_t> inverse(order.size());
    for (size_t r = 0; r < order.size(); ++r) inverse[size_t(order[r])] = int64_t(r);

    Var normed = blk.ln1(rows);
    Var grouped = ops::gather_rows(normed, order);
    const double scale = 1.0 / std::sqrt(double(C));
    std::vector<Var> outs;
    outs.reserve(size_t(B * wins_y * wins_x));
    for (int64_t w0 = 0; w0 < B * wins_y * wins_x; ++w0) {
      Var tok = ops::slice_dim0(grouped, w0 * n, (w0 + 1) * n);
      Var q = blk.q(tok), k = blk.k(tok), v = blk.v(tok);
      Var att = ops::softmax_rows(ops::mul_scalar(ops::matmul(q, ops::transpose2d(k)), scale));
      outs.push_back(ops::matmul(att, v));
    }
    Var attn = blk.o(ops::gather_rows(ops::concat_rows(outs), inverse));
    Var h = ops::add(rows, attn);
    Var m = blk.mlp_out(apply_activation(blk.mlp_in(blk.ln2(h)), act_));
    return ops::rows_as_map(ops::add(h, m), B, C, H, W);
  }

  int64_t base_;
  Activation act_;
  int64_t window_;
  Conv2d embed_;
  std::vector<Conv2d> merge_;
  std::vector<Block> blocks_;
};

// hook for attaching an externally provided feature extractor; the host
// supplies the stage function, we only enforce the contract
class ExternalBackboneAdapter final : public Backbone {
public:
  using StageFn = std::function<StageFeatures(const Var&)>;

  ExternalBackboneAdapter(StageFn fn, std::vector<int64_t> channels, std::vector<int64_t> strides)
      : fn_(std::move(fn)), channels_(std::move(channels)), strides_(std::move(strides)) {}

  StageFeatures forward(const Var& images) const override {
    check_input(images.shape());
    StageFeatures out = fn_(images);
    out.check_contract(images.shape()[2], images.shape()[3]);
    return out;
  }

  std::vector<int64_t> stage_channels() const override { return channels_; }
  std::vector<int64_t> stage_strides() const override { return strides_; }

private:
  StageFn fn_;
  std::vector<int64_t> channels_;
  std::vector<int64_t> strides_;
};

enum class BackboneKind { conv, attention };

inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "conv") return BackboneKind::conv;
  if (s == "attention") return BackboneKind::attention;
  throw std::invalid_argument("unsupported backbone kind: " + s);
}

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::conv ? "conv" : "attention";
}

inline std::unique_ptr<Backbone> make_toy_backbone(ParamStore& ps, const std::string& prefix,
                                                   BackboneKind kind, int64_t base_width,
                                                   Rng& rng, Activation act = Activation::silu) {
  switch (kind) {
    case BackboneKind::conv:
      return std::make_unique<ToyConvBackbone>(ps, prefix, base_width, rng, act);
    case BackboneKind::attention:
      return std::make_unique<ToyAttentionBackbone>(ps, prefix, base_width, rng, act);
  }
  throw std::invalid_argument("unsupported backbone kind");
}

// standalone handle owning its parameters; deterministic in (kind, width, seed)
class BackboneHandle {
public:
  BackboneHandle(BackboneKind kind, int64_t base_width, uint64_t seed,
                 Activation act = Activation::silu)
      : kind_(kind), seed_(seed) {
    Rng rng = Rng::stream(seed, 0xb0ce);
    net_ = make_toy_backbone(params_, "backbone", kind, base_width, rng, act);
  }

  StageFeatures extract(const Var& images) const { return net_->forward(images); }
  const Backbone& net() const { return *net_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t param_count() const { return params_.total_count(); }
  BackboneKind kind() const { return kind_; }

private:
  BackboneKind kind_;
  uint64_t seed_;
  ParamStore params_;
  std::unique_ptr<Backbone> net_;
};

inline BackboneHandle build_toy_backbone(BackboneKind kind, int64_t base_width, uint64_t seed) {
  return BackboneHandle(kind, base_width, seed);
}

inline StageFeatures extract_stages(const ImageBatch& batch, const BackboneHandle& handle) {
  return handle.extract(Var::leaf(batch.pixels, false));
}

}  // namespace herbs

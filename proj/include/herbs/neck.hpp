#pragma once

#include <string>
#include <vector>

#include "herbs/backbone.hpp"

namespace herbs {

struct FusedFeatures {
  std::vector<Var> top_down;   // 4 maps [B, D, H_i, W_i]
  std::vector<Var> bottom_up;  // 4 maps [B, D, H_i, W_i]
  int64_t neck_dim = 0;
};

// Two-pass feature fusion. Top-down: lateral 1x1 projections merged with
// nearest-neighbour upsampling of the coarser map; bottom-up: 1x1 transform
// merged with a stride-2 convolution of the finer map. A 3x3 smoothing
// convolution plus nonlinearity follows each merge.
class FusionNeck {
public:
  FusionNeck(ParamStore& ps, const std::string& prefix, std::vector<int64_t> in_channels,
             int64_t neck_dim, Rng& rng, Activation act = Activation::silu)
      : dim_(neck_dim), act_(act) {
    const size_t n = in_channels.size();
    if (n < 2) throw std::invalid_argument("fusion neck: needs at least 2 stages");
    const double gain = init::conv_gain(act);
    for (size_t i = 0; i < n; ++i) {
      lateral_.push_back(Conv2d::create(ps, prefix + "/lateral" + std::to_string(i),
                                        in_channels[i], neck_dim, 1, 1, 0, rng, 1.0));
      transform_.push_back(Conv2d::create(ps, prefix + "/transform" + std::to_string(i), neck_dim,
                                          neck_dim, 1, 1, 0, rng, 1.0));
      if (i + 1 < n)
        smooth_td_.push_back(Conv2d::create(ps, prefix + "/smooth_td" + std::to_string(i),
                                            neck_dim, neck_dim, 3, 1, 1, rng, gain));
      if (i > 0) {
        down_.push_back(Conv2d::create(ps, prefix + "/down" + std::to_string(i), neck_dim,
                                       neck_dim, 3, 2, 1, rng, 1.0));
        smooth_bu_.push_back(Conv2d::create(ps, prefix + "/smooth_bu" + std::to_string(i),
                                            neck_dim, neck_dim, 3, 1, 1, rng, gain));
      }
    }
  }

  int64_t dim() const { return dim_; }
  size_t num_levels() const { return lateral_.size(); }

  // map i = lateral(stage i) + upsample(map i+1); coarsest map is the bare
  // lateral projection
  std::vector<Var> top_down(const StageFeatures& stages) const {
    const size_t n = lateral_.size();
    if (stages.stages.size() != n)
      throw std::invalid_argument("top_down: expected " + std::to_string(n) + " stages");
    std::vector<Var> out(n);
    out[n - 1] = lateral_[n - 1](stages.stages[n - 1]);
    for (size_t i = n - 1; i-- > 0;) {
      Var lat = lateral_[i](stages.stages[i]);
      Var up = ops::upsample2_nearest(out[i + 1]);
      if (up.shape() != lat.shape())
        throw std::invalid_argument("top_down: stage ratio is not a factor of 2, cannot align " +
                                    shape_str(up.shape()) + " with " + shape_str(lat.shape()));
      out[i] = apply_activation(smooth_td_[i](ops::add(lat, up)), act_);
    }
    return out;
  }

  // map 0 = transform(top_down 0); map i = transform(top_down i) +
  // downsample(map i-1)
  std::vector<Var> bottom_up(const std::vector<Var>& td) const {
    const size_t n = transform_.size();
    if (td.size() != n)
      throw std::invalid_argument("bottom_up: expected " + std::to_string(n) + " maps");
    std::vector<Var> out(n);
    out[0] = transform_[0](td[0]);
    for (size_t i = 1; i < n; ++i) {
      Var trans = transform_[i](td[i]);
      Var down = down_[i - 1](out[i - 1]);
      if (down.shape() != trans.shape())
        throw std::invalid_argument("bottom_up: cannot align " + shape_str(down.shape()) +
                                    " with " + shape_str(trans.shape()));
      out[i] = apply_activation(smooth_bu_[i - 1](ops::add(trans, down)), act_);
    }
    return out;
  }

  FusedFeatures fuse(const StageFeatures& stages) const {
    FusedFeatures f;
    f.neck_dim = dim_;
    f.top_down = top_down(stages);
    f.bottom_up = bottom_up(f.top_down);
    return f;
  }

  // direct access for tests and serialization-aware callers
  std::vector<Conv2d>& laterals() { return lateral_; }
  std::vector<Conv2d>& transforms() { return transform_; }
  std::vector<Conv2d>& downs() { return down_; }
  std::vector<Conv2d>& smooth_tds() { return smooth_td_; }
  std::vector<Conv2d>& smooth_bus() { return smooth_bu_; }

private:
  int64_t dim_;
  Activation act_;
  std::vector<Conv2d> lateral_;
  std::vector<Conv2d> transform_;
  std::vector<Conv2d> down_;
  std::vector<Conv2d> smooth_td_;
  std::vector<Conv2d> smooth_bu_;
};

}  // namespace herbs

#pragma once

#include <string>

#include "herbs/image.hpp"
#include "herbs/net.hpp"
#include "herbs/png.hpp"

namespace herbs {

enum class HeatSource { max_score, target_class };

inline HeatSource heat_source_from_string(const std::string& s) {
  if (s == "max_score") return HeatSource::max_score;
  if (s == "target_class") return HeatSource::target_class;
  throw std::invalid_argument("unknown heat source: " + s);
}

inline std::string to_string(HeatSource s) {
  return s == HeatSource::max_score ? "max_score" : "target_class";
}

struct HeatMap {
  Tensor response;  // [H_img, W_img] in [0,1]
  HeatSource source = HeatSource::max_score;
};

namespace detail {
// min-max normalize to [0,1]; constant maps become all zeros
inline void minmax_normalize(Tensor& t) {
  double lo = t[0], hi = t[0];
  for (int64_t i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  if (hi - lo < 1e-12) {
    t.fill_(0.0);
    return;
  }
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (t[i] - lo) / (hi - lo);
}
}  // namespace detail

// Average the per-stage responses, bilinearly upsampled to image size.
// max_score uses the selection score map; target_class uses each stage's
// softmax probability of the fused prediction's class.
inline HeatMap render_heatmap(HerbsNet& net, const Tensor& image, HeatSource source) {
  if (!net.params().all_finite())
    throw std::invalid_argument("render_heatmap: network parameters are not finite");
  const int64_t h = image.dim(1), w = image.dim(2);
  ImageBatch batch;
  batch.pixels = image.reshaped({1, 3, h, w});
  batch.ids = {"probe"};
  ForwardOutput out = net.forward(batch, 0, /*with_loss=*/false);
  if (out.maps.empty()) throw std::logic_error("render_heatmap: no classification maps");

  int target = 0;
  if (source == HeatSource::target_class) {
    const Tensor& fused = out.bundle.fused_probs;
    for (int64_t c = 1; c < fused.dim(1); ++c)
      if (fused[c] > fused[target]) target = int(c);
  }

  Tensor acc({h, w});
  for (const auto& m : out.maps) {
    Tensor plane({m.height, m.width});
    if (source == HeatSource::max_score) {
      for (int64_t l = 0; l < m.height * m.width; ++l) plane[l] = m.pmax[l];
    } else {
      const int64_t hw = m.height * m.width, c = m.classes;
      std::vector<double> prob(static_cast<size_t>(c));
      for (int64_t l = 0; l < hw; ++l) {
        std::vector<double> logits(static_cast<size_t>(c));
        for (int64_t j = 0; j < c; ++j) logits[size_t(j)] = m.logits.val()[j * hw + l];
        ops::detail::softmax_row(logits.data(), prob.data(), c);
        plane[l] = prob[size_t(target)];
      }
    }
    Tensor up = bilinear_resize(plane.reshaped({1, m.height, m.width}), h, w);
    for (int64_t i = 0; i < h * w; ++i) acc[i] += up[i];
  }
  acc.scale_(1.0 / double(out.maps.size()));
  detail::minmax_normalize(acc);
  return HeatMap{std::move(acc), source};
}

// grayscale heat map plus a red-tinted overlay on the (unnormalized) image
inline void export_heatmap(const HeatMap& hm, const Tensor& raw_image, const std::string& dir,
                           const std::string& image_id) {
  png::write_gray(dir + "/" + image_id + "_" + to_string(hm.source) + ".png", hm.response);
  const int64_t h = raw_image.dim(1), w = raw_image.dim(2);
  Tensor overlay({3, h, w});
  Tensor heat = hm.response;
  if (heat.dim(0) != h || heat.dim(1) != w)
    heat = bilinear_resize(heat.reshaped({1, heat.dim(0), heat.dim(1)}), h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double a = heat[y * w + x];
      for (int64_t c = 0; c < 3; ++c) {
        const double base = raw_image[(c * h + y) * w + x];
        const double tint = c == 0 ? 1.0 : (c == 1 ? 0.25 : 0.0);
        overlay[(c * h + y) * w + x] = (1.0 - 0.6 * a) * base + 0.6 * a * tint;
      }
    }
  png::write_rgb(dir + "/" + image_id + "_" + to_string(hm.source) + "_overlay.png", overlay);
}

}  // namespace herbs

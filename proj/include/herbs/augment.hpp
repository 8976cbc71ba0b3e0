#pragma once

#include <cmath>

#include "herbs/image.hpp"
#include "herbs/rng.hpp"

namespace herbs {

enum class Phase { train, test };

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int64_t batch_size = 8;
  int64_t accum_steps = 4;
  int64_t epochs = 80;
  uint64_t seed = 0;
  int64_t input_size = 384;
  int64_t resize_size = 0;  // 0: derive from input_size
  double norm_mean[3] = {0.5, 0.5, 0.5};
  double norm_std[3] = {0.5, 0.5, 0.5};

  // 384 -> 510 and 448 -> 600; other sizes scale by the same 510/384 ratio
  int64_t resolved_resize() const {
    if (resize_size > 0) return resize_size;
    if (input_size == 384) return 510;
    if (input_size == 448) return 600;
    return int64_t(std::llround(double(input_size) * 510.0 / 384.0));
  }

  void validate() const {
    if (lr <= 0 || weight_decay < 0 || momentum < 0 || momentum >= 1)
      throw std::invalid_argument("train config: bad optimizer settings");
    if (batch_size < 1 || accum_steps < 1 || epochs < 1)
      throw std::invalid_argument("train config: counts must be positive");
    if (input_size < 1) throw std::invalid_argument("train config: input_size must be positive");
    if (resolved_resize() < input_size)
      throw std::invalid_argument("train config: resize smaller than crop size");
  }
};

constexpr uint64_t kTagAugment = 0xa406, kTagShuffle = 0xa407;

// train: resize, random crop, horizontal flip p=0.5, gaussian blur p=0.5
// (5-tap, sigma uniform in [0.1, 2]), normalize. test: resize, center crop,
// normalize. All draws come from the rng the caller derived for the sample.
inline Tensor augment(const Tensor& image, Phase phase, const TrainConfig& cfg, Rng& rng) {
  const int64_t resize = cfg.resolved_resize();
  const int64_t input = cfg.input_size;
  if (resize < input)
    throw std::invalid_argument("augment: image smaller than crop after resize");
  Tensor img = bilinear_resize(image, resize, resize);
  if (phase == Phase::train) {
    const int64_t span = resize - input + 1;
    const int64_t y0 = int64_t(rng.below(uint64_t(span)));
    const int64_t x0 = int64_t(rng.below(uint64_t(span)));
    img = crop(img, y0, x0, input);
    if (rng.bernoulli(0.5)) img = hflip(img);
    if (rng.bernoulli(0.5)) {
      // sigma is calibrated to the 510-pixel reference canvas and scales
      // with the actual resize target so small desk-scale images get a
      // proportionally gentle blur
      const double sigma = rng.uniform(0.1, 2.0) * double(resize) / 510.0;
      img = gaussian_blur5(img, std::max(sigma, 0.05));
    }
  } else {
    const int64_t off = (resize - input) / 2;
    img = crop(img, off, off, input);
  }
  normalize_inplace(img, cfg.norm_mean, cfg.norm_std);
  return img;
}

// the geometric part of the test transform, for ground-truth masks
inline Tensor apply_test_geometry(const Tensor& mask, const TrainConfig& cfg) {
  const int64_t resize = cfg.resolved_resize();
  Tensor m = nearest_resize_plane(mask, resize, resize);
  const int64_t off = (resize - cfg.input_size) / 2;
  Tensor out({cfg.input_size, cfg.input_size});
  for (int64_t y = 0; y < cfg.input_size; ++y)
    for (int64_t x = 0; x < cfg.input_size; ++x)
      out[y * cfg.input_size + x] = m[(y + off) * resize + (x + off)];
  return out;
}

}  // namespace herbs

#pragma once

#include <algorithm>
#include <cmath>

#include "herbs/tensor.hpp"

namespace herbs {

// plain [C,H,W] image utilities used by augmentation and visualization;
// value math only, no autodiff involvement

inline Tensor bilinear_resize(const Tensor& img, int64_t out_h, int64_t out_w) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out({C, out_h, out_w});
  const double sy = double(H) / double(out_h), sx = double(W) / double(out_w);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < out_h; ++y) {
      double fy = (double(y) + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, double(H - 1));
      const int64_t y0 = int64_t(fy), y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - double(y0);
      for (int64_t x = 0; x < out_w; ++x) {
        double fx = (double(x) + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, double(W - 1));
        const int64_t x0 = int64_t(fx), x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - double(x0);
        const double* p = img.data() + c * H * W;
        const double v = (1 - wy) * ((1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                         wy * ((1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
        out[(c * out_h + y) * out_w + x] = v;
      }
    }
  return out;
}

// single-channel [H,W] nearest resize, used for ground-truth masks
inline Tensor nearest_resize_plane(const Tensor& plane, int64_t out_h, int64_t out_w) {
  const int64_t H = plane.dim(0), W = plane.dim(1);
  Tensor out({out_h, out_w});
  for (int64_t y = 0; y < out_h; ++y) {
    const int64_t sy = std::min(H - 1, int64_t(double(y) * double(H) / double(out_h)));
    for (int64_t x = 0; x < out_w; ++x) {
      const int64_t sx = std::min(W - 1, int64_t(double(x) * double(W) / double(out_w)));
      out[y * out_w + x] = plane[sy * W + sx];
    }
  }
  return out;
}

inline Tensor crop(const Tensor& img, int64_t y0, int64_t x0, int64_t size) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + size > H || x0 + size > W)
    throw std::invalid_argument("crop: window outside image");
  Tensor out({C, size, size});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x)
        out[(c * size + y) * size + x] = img[(c * H + y0 + y) * W + x0 + x];
  return out;
}

inline Tensor hflip(const Tensor& img) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out(img.shape());
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return out;
}

// separable 5-tap gaussian with replicated borders
inline Tensor gaussian_blur5(const Tensor& img, double sigma) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  double k[5];
  double norm = 0.0;
  for (int i = -2; i <= 2; ++i) {
    k[i + 2] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    norm += k[i + 2];
  }
  for (auto& v : k) v /= norm;

  Tensor tmp(img.shape()), out(img.shape());
  auto clampi = [](int64_t v, int64_t hi) { return std::clamp<int64_t>(v, 0, hi - 1); };
  for (int64_t c = 0; c < C; ++c) {
    const double* src = img.data() + c * H * W;
    double* t = tmp.data() + c * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src[y * W + clampi(x + i, W)];
        t[y * W + x] = acc;
      }
    double* d = out.data() + c * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) acc += k[i + 2] * t[clampi(y + i, H) * W + x];
        d[y * W + x] = acc;
      }
  }
  return out;
}

inline void normalize_inplace(Tensor& img, const double mean[3], const double stddev[3]) {
  const int64_t C = img.dim(0), HW = img.dim(1) * img.dim(2);
  for (int64_t c = 0; c < C; ++c) {
    double* p = img.data() + c * HW;
    for (int64_t i = 0; i < HW; ++i) p[i] = (p[i] - mean[c]) / stddev[c];
  }
}

}  // namespace herbs

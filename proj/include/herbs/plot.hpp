#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "herbs/png.hpp"

namespace herbs {

// minimal raster line chart for sweep results: axes, ticks, one polyline
// with point markers; enough to eyeball an accuracy-vs-parameter curve
inline void write_line_chart(const std::string& path, const std::vector<double>& xs,
                             const std::vector<double>& ys, int64_t width = 640,
                             int64_t height = 480) {
  if (xs.size() != ys.size() || xs.empty())
    throw std::invalid_argument("write_line_chart: bad series");
  Tensor img({3, height, width});
  img.fill_(1.0);
  const int64_t ml = 60, mr = 20, mt = 20, mb = 40;
  const int64_t pw = width - ml - mr, ph = height - mt - mb;

  double xmin = *std::min_element(xs.begin(), xs.end());
  double xmax = *std::max_element(xs.begin(), xs.end());
  double ymin = *std::min_element(ys.begin(), ys.end());
  double ymax = *std::max_element(ys.begin(), ys.end());
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  const double ypad = std::max(1e-12, 0.05 * (ymax - ymin));
  ymin -= ypad;
  ymax += ypad;

  auto set_px = [&](int64_t y, int64_t x, double r, double g, double b) {
    if (y < 0 || y >= height || x < 0 || x >= width) return;
    img[(0 * height + y) * width + x] = r;
    img[(1 * height + y) * width + x] = g;
    img[(2 * height + y) * width + x] = b;
  };
  auto to_px = [&](double x, double y) {
    const int64_t px = ml + int64_t(std::lround((x - xmin) / (xmax - xmin) * double(pw - 1)));
    const int64_t py = mt + ph - 1 - int64_t(std::lround((y - ymin) / (ymax - ymin) * double(ph - 1)));
    return std::pair<int64_t, int64_t>(px, py);
  };

  // axes
  for (int64_t x = ml; x < ml + pw; ++x) set_px(mt + ph - 1, x, 0, 0, 0);
  for (int64_t y = mt; y < mt + ph; ++y) set_px(y, ml, 0, 0, 0);
  // ticks
  for (int t = 0; t <= 4; ++t) {
    const int64_t x = ml + t * (pw - 1) / 4;
    for (int64_t d = 0; d < 5; ++d) set_px(mt + ph - 1 + d, x, 0, 0, 0);
    const int64_t y = mt + t * (ph - 1) / 4;
    for (int64_t d = 0; d < 5; ++d) set_px(y, ml - d, 0, 0, 0);
  }

  // polyline
  auto draw_line = [&](std::pair<int64_t, int64_t> a, std::pair<int64_t, int64_t> b) {
    const int64_t steps = std::max<int64_t>(std::abs(a.first - b.first),
                                            std::abs(a.second - b.second)) + 1;
    for (int64_t s = 0; s <= steps; ++s) {
      const double t = double(s) / double(steps);
      const int64_t x = int64_t(std::lround(double(a.first) + t * double(b.first - a.first)));
      const int64_t y = int64_t(std::lround(double(a.second) + t * double(b.second - a.second)));
      set_px(y, x, 0.1, 0.3, 0.8);
    }
  };
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  for (size_t i = 1; i < order.size(); ++i)
    draw_line(to_px(xs[order[i - 1]], ys[order[i - 1]]), to_px(xs[order[i]], ys[order[i]]));
  for (size_t i = 0; i < xs.size(); ++i) {
    auto [px, py] = to_px(xs[i], ys[i]);
    for (int64_t dy = -2; dy <= 2; ++dy)
      for (int64_t dx = -2; dx <= 2; ++dx) set_px(py + dy, px + dx, 0.8, 0.1, 0.1);
  }
  png::write_rgb(path, img);
}

}  // namespace herbs

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "herbs/autodiff.hpp"

namespace herbs_test {

// Central finite differences on one parameter coordinate of a scalar-valued
// forward function. The forward must rebuild its graph from the leaf values
// on every call.
inline double fd_coordinate(const std::function<herbs::Var()>& forward, herbs::Var& param,
                            int64_t coord, double h = 1e-6) {
  const double orig = param.val()[coord];
  param.mutable_val()[coord] = orig + h;
  const double up = forward().val().item();
  param.mutable_val()[coord] = orig - h;
  const double down = forward().val().item();
  param.mutable_val()[coord] = orig;
  return (up - down) / (2.0 * h);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  double analytic = 0.0, numeric = 0.0;
};

// Compare analytic gradient of `forward` w.r.t. every coordinate of `param`
// (or a subset) against central differences.
inline GradCheckResult grad_check(const std::function<herbs::Var()>& forward, herbs::Var param,
                                  const std::vector<int64_t>& coords = {}, double h = 1e-6) {
  herbs::Var loss = forward();
  param.clear_grad();
  herbs::backward(loss);
  herbs::Tensor analytic = param.has_grad() ? param.grad_raw()
                                            : herbs::Tensor::zeros(param.val().shape());
  std::vector<int64_t> cs = coords;
  if (cs.empty())
    for (int64_t i = 0; i < param.numel(); ++i) cs.push_back(i);

  GradCheckResult r;
  for (int64_t c : cs) {
    const double num = fd_coordinate(forward, param, c, h);
    const double ana = analytic[c];
    // the 1e-5 floor keeps near-zero gradients comparable above the
    // roundoff floor of central differences in double precision
    const double denom = std::max({std::abs(num), std::abs(ana), 1e-5});
    const double rel = std::abs(num - ana) / denom;
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_coord = c;
      r.analytic = ana;
      r.numeric = num;
    }
  }
  param.clear_grad();
  return r;
}

}  // namespace herbs_test

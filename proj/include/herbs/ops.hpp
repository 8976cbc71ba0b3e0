#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "herbs/autodiff.hpp"

namespace herbs {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline CMatMap cmap(const Tensor& t, int64_t rows, int64_t cols) {
  return CMatMap(t.data(), rows, cols);
}
inline MatMap mmap(Tensor& t, int64_t rows, int64_t cols) {
  return MatMap(t.data(), rows, cols);
}

namespace ops {

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.val();
  out.add_(b.val());
  return make_op(std::move(out), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node& n) {
    if (a->requires_grad) a->accum(n.grad);
    if (b->requires_grad) b->accum(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node& n) {
    if (a->requires_grad) a->accum(n.grad);
    if (b->requires_grad) {
      Tensor g = n.grad;
      g.scale_(-1.0);
      b->accum(g);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [a = a.node(), b = b.node()](Node& n) {
    if (a->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= b->value[i];
      a->accum(g);
    }
    if (b->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= a->value[i];
      b->accum(g);
    }
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_op(std::move(out), {a.node()},
                 [a = a.node()](Node& n) { a->accum(n.grad); });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out = a.val();
  out.scale_(s);
  return make_op(std::move(out), {a.node()}, [a = a.node(), s](Node& n) {
    Tensor g = n.grad;
    g.scale_(s);
    a->accum(g);
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.val().reshaped(std::move(s));
  return make_op(std::move(out), {a.node()}, [a = a.node()](Node& n) {
    a->accum(n.grad.reshaped(a->value.shape()));
  });
}

inline Var detach(const Var& a) { return Var::leaf(a.val(), false); }

// ---- elementwise nonlinearities ----

inline Var relu(const Var& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_op(std::move(out), {a.node()}, [a = a.node()](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] <= 0.0) g[i] = 0.0;
    a->accum(g);
  });
}

inline Var leaky_relu(const Var& a, double slope = 0.01) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : slope * out[i];
  return make_op(std::move(out), {a.node()}, [a = a.node(), slope](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] <= 0.0) g[i] *= slope;
    a->accum(g);
  });
}

inline Var silu(const Var& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-out[i]));
    out[i] *= s;
  }
  return make_op(std::move(out), {a.node()}, [a = a.node()](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = a->value[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      g[i] *= s * (1.0 + x * (1.0 - s));
    }
    a->accum(g);
  });
}

inline Var tanh_op(const Var& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return make_op(std::move(out), {a.node()}, [a = a.node()](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double y = n.value[i];
      g[i] *= (1.0 - y * y);
    }
    a->accum(g);
  });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: bad shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  mmap(out, m, n).noalias() = cmap(a.val(), m, k) * cmap(b.val(), k, n);
  return make_op(std::move(out), {a.node(), b.node()},
                 [a = a.node(), b = b.node(), m, k, n](Node& nd) {
                   CMatMap g(nd.grad.data(), m, n);
                   if (a->requires_grad) {
                     Tensor ga({m, k});
                     mmap(ga, m, k).noalias() = g * cmap(b->value, k, n).transpose();
                     a->accum(ga);
                   }
                   if (b->requires_grad) {
                     Tensor gb({k, n});
                     mmap(gb, k, n).noalias() = cmap(a->value, m, k).transpose() * g;
                     b->accum(gb);
                   }
                 });
}

// y = x W^T + b, x:[N,D] W:[C,D] b:[C] -> [N,C]
inline Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    throw std::invalid_argument("linear: dimension mismatch x" + shape_str(x.shape()) + " w" +
                                shape_str(w.shape()));
  const int64_t n = x.shape()[0], d = x.shape()[1], c = w.shape()[0];
  if (b.numel() != c) throw std::invalid_argument("linear: bias size mismatch");
  Tensor out({n, c});
  mmap(out, n, c).noalias() = cmap(x.val(), n, d) * cmap(w.val(), c, d).transpose();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] += b.val()[j];
  return make_op(std::move(out), {x.node(), w.node(), b.node()},
                 [x = x.node(), w = w.node(), b = b.node(), n, d, c](Node& nd) {
                   CMatMap g(nd.grad.data(), n, c);
                   if (x->requires_grad) {
                     Tensor gx({n, d});
                     mmap(gx, n, d).noalias() = g * cmap(w->value, c, d);
                     x->accum(gx);
                   }
                   if (w->requires_grad) {
                     Tensor gw({c, d});
                     mmap(gw, c, d).noalias() = g.transpose() * cmap(x->value, n, d);
                     w->accum(gw);
                   }
                   if (b->requires_grad) {
                     Tensor gb({c});
                     for (int64_t i = 0; i < n; ++i)
                       for (int64_t j = 0; j < c; ++j) gb[j] += nd.grad[i * c + j];
                     b->accum(gb);
                   }
                 });
}

namespace detail {
// im2col for one sample: x [C,H,W] -> col [C*kh*kw, Ho*Wo]
inline void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* col) {
  const int64_t L = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        double* row = col + ((c * kh + i) * kw + j) * L;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t y = oy * stride + i - pad;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t xx = ox * stride + j - pad;
            row[oy * Wo + ox] =
                (y >= 0 && y < H && xx >= 0 && xx < W) ? x[(c * H + y) * W + xx] : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* dx) {
  const int64_t L = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const double* row = col + ((c * kh + i) * kw + j) * L;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t y = oy * stride + i - pad;
          if (y < 0 || y >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t xx = ox * stride + j - pad;
            if (xx >= 0 && xx < W) dx[(c * H + y) * W + xx] += row[oy * Wo + ox];
          }
        }
      }
}
}  // namespace detail

// x:[B,Cin,H,W] w:[O,Cin,kh,kw] b:[O] -> [B,O,Ho,Wo]
inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
    throw std::invalid_argument("conv2d: bad shapes x" + shape_str(xs) + " w" + shape_str(ws));
  const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int64_t O = ws[0], kh = ws[2], kw = ws[3];
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: output would be empty");
  const int64_t K = C * kh * kw, L = Ho * Wo;

  auto cols = std::make_shared<std::vector<Tensor>>();
  cols->reserve(size_t(B));
  Tensor out({B, O, Ho, Wo});
  for (int64_t s = 0; s < B; ++s) {
    Tensor col({K, L});
    detail::im2col(x.val().data() + s * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
                   col.data());
    MatMap(out.data() + s * O * L, O, L).noalias() =
        cmap(w.val(), O, K) * cmap(col, K, L);
    for (int64_t o = 0; o < O; ++o) {
      double* dst = out.data() + (s * O + o) * L;
      const double bv = b.val()[o];
      for (int64_t l = 0; l < L; ++l) dst[l] += bv;
    }
    cols->push_back(std::move(col));
  }
  return make_op(
      std::move(out), {x.node(), w.node(), b.node()},
      [x = x.node(), w = w.node(), b = b.node(), cols, B, C, H, W, O, kh, kw, stride, pad, Ho,
       Wo, K, L](Node& nd) {
        Tensor gx, gw, gb;
        if (x->requires_grad) gx = Tensor::zeros({B, C, H, W});
        if (w->requires_grad) gw = Tensor::zeros({O, K});
        if (b->requires_grad) gb = Tensor::zeros({O});
        for (int64_t s = 0; s < B; ++s) {
          CMatMap g(nd.grad.data() + s * O * L, O, L);
          if (w->requires_grad)
            mmap(gw, O, K).noalias() += g * cmap((*cols)[size_t(s)], K, L).transpose();
          if (b->requires_grad)
            for (int64_t o = 0; o < O; ++o)
              for (int64_t l = 0; l < L; ++l) gb[o] += nd.grad[(s * O + o) * L + l];
          if (x->requires_grad) {
            Tensor dcol({K, L});
            mmap(dcol, K, L).noalias() = cmap(w->value, O, K).transpose() * g;
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                               gx.data() + s * C * H * W);
          }
        }
        if (x->requires_grad) x->accum(gx);
        if (w->requires_grad) w->accum(gw.reshaped(w->value.shape()));
        if (b->requires_grad) b->accum(gb);
      });
}

// ---- index remapping (permute / slice / gather / nearest upsample) ----

// out[i] = x[map[i]]; backward scatter-adds, so duplicated indices are fine.
inline Var index_map(const Var& x, Shape out_shape,
                     std::shared_ptr<const std::vector<int64_t>> map) {
  if (int64_t(map->size()) != shape_numel(out_shape))
    throw std::invalid_argument("index_map: map size does not match output shape");
  Tensor out(std::move(out_shape));
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.val()[(*map)[size_t(i)]];
  return make_op(std::move(out), {x.node()}, [x = x.node(), map](Node& n) {
    Tensor gx = Tensor::zeros(x->value.shape());
    for (int64_t i = 0; i < n.grad.numel(); ++i) gx[(*map)[size_t(i)]] += n.grad[i];
    x->accum(gx);
  });
}

// [B,C,H,W] -> [B*H*W, C] rows, one row per spatial location
inline Var locations_as_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("locations_as_rows: expects 4-d input");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  auto map = std::make_shared<std::vector<int64_t>>(size_t(B * H * W * C));
  int64_t k = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < H * W; ++l)
      for (int64_t c = 0; c < C; ++c) (*map)[size_t(k++)] = (b * C + c) * H * W + l;
  return index_map(x, {B * H * W, C}, map);
}

// inverse of locations_as_rows: [B*H*W, C] -> [B,C,H,W]
inline Var rows_as_map(const Var& rows, int64_t B, int64_t C, int64_t H, int64_t W) {
  auto map = std::make_shared<std::vector<int64_t>>(size_t(B * C * H * W));
  int64_t k = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t l = 0; l < H * W; ++l) (*map)[size_t(k++)] = (b * H * W + l) * C + c;
  return index_map(rows, {B, C, H, W}, map);
}

inline Var transpose2d(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("transpose2d: expects 2-d input");
  const int64_t R = s[0], C = s[1];
  auto map = std::make_shared<std::vector<int64_t>>(size_t(R * C));
  int64_t k = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t r = 0; r < R; ++r) (*map)[size_t(k++)] = r * C + c;
  return index_map(x, {C, R}, map);
}

inline Var gather_rows(const Var& x, const std::vector<int64_t>& rows) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("gather_rows: expects 2-d input");
  const int64_t D = s[1];
  auto map = std::make_shared<std::vector<int64_t>>(rows.size() * size_t(D));
  int64_t k = 0;
  for (int64_t r : rows) {
    if (r < 0 || r >= s[0]) throw std::out_of_range("gather_rows: row index out of range");
    for (int64_t c = 0; c < D; ++c) (*map)[size_t(k++)] = r * D + c;
  }
  return index_map(x, {int64_t(rows.size()), D}, map);
}

// nearest-neighbour 2x spatial upsample of [B,C,H,W]
inline Var upsample2_nearest(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample2_nearest: expects 4-d input");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  auto map = std::make_shared<std::vector<int64_t>>(size_t(B * C * 4 * H * W));
  int64_t k = 0;
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t xx = 0; xx < 2 * W; ++xx)
        (*map)[size_t(k++)] = bc * H * W + (y / 2) * W + (xx / 2);
  return index_map(x, {B, C, 2 * H, 2 * W}, map);
}

inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty list");
  const int64_t D = xs[0].shape()[1];
  int64_t total = 0;
  for (const auto& v : xs) {
    if (v.shape().size() != 2 || v.shape()[1] != D)
      throw std::invalid_argument("concat_rows: column mismatch");
    total += v.shape()[0];
  }
  Tensor out({total, D});
  std::vector<NodePtr> parents;
  parents.reserve(xs.size());
  int64_t off = 0;
  for (const auto& v : xs) {
    std::copy(v.val().data(), v.val().data() + v.numel(), out.data() + off);
    off += v.numel();
    parents.push_back(v.node());
  }
  return make_op(std::move(out), parents, [parents, D](Node& n) {
    int64_t off = 0;
    for (const auto& p : parents) {
      const int64_t cnt = p->value.numel();
      if (p->requires_grad) {
        Tensor g(p->value.shape());
        std::copy(n.grad.data() + off, n.grad.data() + off + cnt, g.data());
        p->accum(g);
      }
      off += cnt;
    }
  });
}

// ---- reductions ----

inline Var sum_all(const Var& x) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.val()[i];
  return make_op(Tensor::scalar(s), {x.node()}, [x = x.node()](Node& n) {
    Tensor g = Tensor::full(x->value.shape(), n.grad[0]);
    x->accum(g);
  });
}

inline Var mean_all(const Var& x) { return mul_scalar(sum_all(x), 1.0 / double(x.numel())); }

// [B,C,H,W] -> [B,C], mean over spatial locations
inline Var global_avgpool(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avgpool: expects 4-d input");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out({B, C});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* src = x.val().data() + bc * HW;
    for (int64_t l = 0; l < HW; ++l) acc += src[l];
    out[bc] = acc / double(HW);
  }
  return make_op(std::move(out), {x.node()}, [x = x.node(), B, C, HW](Node& n) {
    Tensor g(x->value.shape());
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const double gv = n.grad[bc] / double(HW);
      double* dst = g.data() + bc * HW;
      for (int64_t l = 0; l < HW; ++l) dst[l] = gv;
    }
    x->accum(g);
  });
}

// ---- row-wise softmax family (class dimension is the last one) ----

namespace detail {
inline void softmax_row(const double* in, double* out, int64_t c) {
  double mx = in[0];
  for (int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (int64_t j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (int64_t j = 0; j < c; ++j) out[j] /= z;
}
}  // namespace detail

inline Var softmax_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_rows: expects 2-d input");
  const int64_t N = s[0], C = s[1];
  Tensor out({N, C});
  for (int64_t i = 0; i < N; ++i)
    detail::softmax_row(x.val().data() + i * C, out.data() + i * C, C);
  return make_op(std::move(out), {x.node()}, [x = x.node(), N, C](Node& n) {
    Tensor g({N, C});
    for (int64_t i = 0; i < N; ++i) {
      const double* y = n.value.data() + i * C;
      const double* gy = n.grad.data() + i * C;
      double dot = 0.0;
      for (int64_t j = 0; j < C; ++j) dot += gy[j] * y[j];
      for (int64_t j = 0; j < C; ++j) g[i * C + j] = y[j] * (gy[j] - dot);
    }
    x->accum(g);
  });
}

inline Var log_softmax_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("log_softmax_rows: expects 2-d input");
  const int64_t N = s[0], C = s[1];
  Tensor out({N, C});
  for (int64_t i = 0; i < N; ++i) {
    const double* in = x.val().data() + i * C;
    double mx = in[0];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int64_t j = 0; j < C; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (int64_t j = 0; j < C; ++j) out[i * C + j] = in[j] - lse;
  }
  return make_op(std::move(out), {x.node()}, [x = x.node(), N, C](Node& n) {
    Tensor g({N, C});
    for (int64_t i = 0; i < N; ++i) {
      const double* y = n.value.data() + i * C;  // log-probs
      const double* gy = n.grad.data() + i * C;
      double gsum = 0.0;
      for (int64_t j = 0; j < C; ++j) gsum += gy[j];
      for (int64_t j = 0; j < C; ++j) g[i * C + j] = gy[j] - std::exp(y[j]) * gsum;
    }
    x->accum(g);
  });
}

// mean over rows of -log softmax(x)[label]
inline Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  const auto& s = logits.shape();
  if (s.size() != 2 || int64_t(labels.size()) != s[0])
    throw std::invalid_argument("cross_entropy_mean: shape/label mismatch");
  const int64_t N = s[0], C = s[1];
  auto probs = std::make_shared<Tensor>(Shape{N, C});
  double loss = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= C)
      throw std::out_of_range("cross_entropy_mean: label out of range");
    detail::softmax_row(logits.val().data() + i * C, probs->data() + i * C, C);
    loss -= std::log(std::max((*probs)[i * C + labels[size_t(i)]], 1e-300));
  }
  loss /= double(N);
  return make_op(Tensor::scalar(loss), {logits.node()},
                 [x = logits.node(), probs, labels, N, C](Node& n) {
                   Tensor g({N, C});
                   const double gscale = n.grad[0] / double(N);
                   for (int64_t i = 0; i < N; ++i)
                     for (int64_t j = 0; j < C; ++j) {
                       double v = (*probs)[i * C + j];
                       if (j == labels[size_t(i)]) v -= 1.0;
                       g[i * C + j] = gscale * v;
                     }
                   x->accum(g);
                 });
}

// row-wise layer norm with affine params gamma/beta of size D
inline Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("layernorm_rows: expects 2-d input");
  const int64_t N = s[0], D = s[1];
  if (gamma.numel() != D || beta.numel() != D)
    throw std::invalid_argument("layernorm_rows: affine size mismatch");
  Tensor out({N, D});
  auto xhat = std::make_shared<Tensor>(Shape{N, D});
  auto inv_sigma = std::make_shared<Tensor>(Shape{N});
  for (int64_t i = 0; i < N; ++i) {
    const double* in = x.val().data() + i * D;
    double mu = 0.0;
    for (int64_t j = 0; j < D; ++j) mu += in[j];
    mu /= double(D);
    double var = 0.0;
    for (int64_t j = 0; j < D; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= double(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (int64_t j = 0; j < D; ++j) {
      const double xh = (in[j] - mu) * is;
      (*xhat)[i * D + j] = xh;
      out[i * D + j] = xh * gamma.val()[j] + beta.val()[j];
    }
  }
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()},
                 [x = x.node(), gm = gamma.node(), bt = beta.node(), xhat, inv_sigma, N,
                  D](Node& n) {
                   if (gm->requires_grad) {
                     Tensor gg({D});
                     for (int64_t i = 0; i < N; ++i)
                       for (int64_t j = 0; j < D; ++j)
                         gg[j] += n.grad[i * D + j] * (*xhat)[i * D + j];
                     gm->accum(gg);
                   }
                   if (bt->requires_grad) {
                     Tensor gb({D});
                     for (int64_t i = 0; i < N; ++i)
                       for (int64_t j = 0; j < D; ++j) gb[j] += n.grad[i * D + j];
                     bt->accum(gb);
                   }
                   if (x->requires_grad) {
                     Tensor gx({N, D});
                     for (int64_t i = 0; i < N; ++i) {
                       double m1 = 0.0, m2 = 0.0;
                       for (int64_t j = 0; j < D; ++j) {
                         const double gj = n.grad[i * D + j] * gm->value[j];
                         m1 += gj;
                         m2 += gj * (*xhat)[i * D + j];
                       }
                       m1 /= double(D);
                       m2 /= double(D);
                       for (int64_t j = 0; j < D; ++j) {
                         const double gj = n.grad[i * D + j] * gm->value[j];
                         gx[i * D + j] =
                             (gj - m1 - (*xhat)[i * D + j] * m2) * (*inv_sigma)[i];
                       }
                     }
                     x->accum(gx);
                   }
                 });
}

// contiguous slice of the leading dimension: rows [r0, r1) of any tensor
// viewed as [dim0, rest]
inline Var slice_dim0(const Var& x, int64_t r0, int64_t r1) {
  const auto& s = x.shape();
  if (s.empty() || r0 < 0 || r1 > s[0] || r0 >= r1)
    throw std::invalid_argument("slice_dim0: bad range");
  const int64_t rest = x.numel() / s[0];
  Shape out_shape = s;
  out_shape[0] = r1 - r0;
  Tensor out(out_shape);
  std::copy(x.val().data() + r0 * rest, x.val().data() + r1 * rest, out.data());
  return make_op(std::move(out), {x.node()}, [x = x.node(), r0, rest](Node& n) {
    Tensor g = Tensor::zeros(x->value.shape());
    std::copy(n.grad.data(), n.grad.data() + n.grad.numel(), g.data() + r0 * rest);
    x->accum(g);
  });
}

}  // namespace ops
}  // namespace herbs

#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "herbs/nn.hpp"

namespace herbs {

struct NonFiniteLossError : std::runtime_error {
  explicit NonFiniteLossError(const std::string& component)
      : std::runtime_error("non-finite loss component: " + component), component_(component) {}
  const std::string& component() const { return component_; }

private:
  std::string component_;
};

// Per-location class logits for one fused map, plus the max-score map used
// to rank locations. The score map is detached: selection indices carry no
// gradient, only the gathered values do.
struct ClassificationMap {
  Var logits;   // [B, C_gt, H, W]
  Tensor pmax;  // [B, H, W], max softmax probability per location
  int64_t height = 0, width = 0, classes = 0;
};

inline ClassificationMap classify_locations(const Var& feat, const Linear& head) {
  const auto& s = feat.shape();
  if (s.size() != 4) throw std::invalid_argument("classify_locations: feat must be [B,D,H,W]");
  if (s[1] != head.in)
    throw std::invalid_argument("classify_locations: head expects " + std::to_string(head.in) +
                                " channels, got " + std::to_string(s[1]));
  const int64_t B = s[0], H = s[2], W = s[3], C = head.out;
  ClassificationMap out;
  out.height = H;
  out.width = W;
  out.classes = C;
  Var rows = ops::locations_as_rows(feat);  // [B*H*W, D]
  Var logit_rows = head(rows);              // [B*H*W, C]
  out.logits = ops::rows_as_map(logit_rows, B, C, H, W);

  out.pmax = Tensor({B, H, W});
  std::vector<double> prob(static_cast<size_t>(C));
  for (int64_t r = 0; r < B * H * W; ++r) {
    ops::detail::softmax_row(logit_rows.val().data() + r * C, prob.data(), C);
    out.pmax[r] = *std::max_element(prob.begin(), prob.end());
  }
  return out;
}

struct SelectionResult {
  std::vector<int64_t> selected_idx;  // flat locations, score-descending
  std::vector<int64_t> dropped_idx;   // complement, ascending
  Var selected_feats;                 // [K, D]
  Var selected_logits;                // [K, C_gt]
  Var dropped_logits;                 // [H*W-K, C_gt]; undefined Var when K == H*W
  int64_t height = 0, width = 0;

  std::vector<uint8_t> mask() const {
    std::vector<uint8_t> m(size_t(height * width), 0);
    for (int64_t i : selected_idx) m[size_t(i)] = 1;
    return m;
  }
};

// rank all locations of one sample by max score, descending; ties broken by
// ascending flat index
inline std::vector<int64_t> rank_locations(const Tensor& pmax, int64_t sample) {
  const int64_t HW = pmax.dim(1) * pmax.dim(2);
  std::vector<int64_t> order(static_cast<size_t>(HW));
  std::iota(order.begin(), order.end(), 0);
  const double* p = pmax.data() + sample * HW;
  std::sort(order.begin(), order.end(), [p](int64_t a, int64_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  return order;
}

inline SelectionResult select_topk(const ClassificationMap& cmap, const Var& feat, int64_t k,
                                   int64_t sample) {
  const auto& fs = feat.shape();
  const int64_t B = fs[0], D = fs[1], H = fs[2], W = fs[3];
  if (H != cmap.height || W != cmap.width)
    throw std::invalid_argument("select_topk: feat/map spatial mismatch");
  if (sample < 0 || sample >= B) throw std::out_of_range("select_topk: sample out of range");
  const int64_t HW = H * W;
  if (k < 1 || k > HW)
    throw std::out_of_range("select_topk: K=" + std::to_string(k) + " outside [1, " +
                            std::to_string(HW) + "]");

  std::vector<int64_t> order = rank_locations(cmap.pmax, sample);
  SelectionResult r;
  r.height = H;
  r.width = W;
  r.selected_idx.assign(order.begin(), order.begin() + k);
  r.dropped_idx.assign(order.begin() + k, order.end());
  std::sort(r.dropped_idx.begin(), r.dropped_idx.end());

  Var feat_rows = ops::locations_as_rows(feat);          // [B*HW, D]
  Var logit_rows = ops::locations_as_rows(cmap.logits);  // [B*HW, C]
  auto global_ids = [&](const std::vector<int64_t>& local) {
    std::vector<int64_t> g;
    g.reserve(local.size());
    for (int64_t i : local) g.push_back(sample * HW + i);
    return g;
  };
  r.selected_feats = ops::gather_rows(feat_rows, global_ids(r.selected_idx));
  r.selected_logits = ops::gather_rows(logit_rows, global_ids(r.selected_idx));
  if (!r.dropped_idx.empty())
    r.dropped_logits = ops::gather_rows(logit_rows, global_ids(r.dropped_idx));
  (void)D;
  return r;
}

// Build a SelectionResult from externally fixed selected indices (used by
// gradient checks, which pin the non-differentiable index choice while
// probing the differentiable paths).
inline SelectionResult selection_from_indices(const ClassificationMap& cmap, const Var& feat,
                                              const std::vector<int64_t>& selected,
                                              int64_t sample) {
  const auto& fs = feat.shape();
  const int64_t H = fs[2], W = fs[3], HW = H * W;
  SelectionResult r;
  r.height = H;
  r.width = W;
  r.selected_idx = selected;
  std::vector<uint8_t> taken(static_cast<size_t>(HW), 0);
  for (int64_t i : selected) taken[size_t(i)] = 1;
  for (int64_t i = 0; i < HW; ++i)
    if (!taken[size_t(i)]) r.dropped_idx.push_back(i);
  Var feat_rows = ops::locations_as_rows(feat);
  Var logit_rows = ops::locations_as_rows(cmap.logits);
  auto global_ids = [&](const std::vector<int64_t>& local) {
    std::vector<int64_t> g;
    for (int64_t i : local) g.push_back(sample * HW + i);
    return g;
  };
  r.selected_feats = ops::gather_rows(feat_rows, global_ids(r.selected_idx));
  r.selected_logits = ops::gather_rows(logit_rows, global_ids(r.selected_idx));
  if (!r.dropped_idx.empty())
    r.dropped_logits = ops::gather_rows(logit_rows, global_ids(r.dropped_idx));
  return r;
}

// Graph-convolution combiner over the selected tokens of one sample:
// adjacency = row softmax of pairwise dot products of projected tokens,
// one propagation X' = act(A X W), mean pool, linear classifier.
class Combiner {
public:
  Combiner() = default;
  Combiner(ParamStore& ps, const std::string& prefix, int64_t dim, int64_t classes, Rng& rng,
           Activation act = Activation::silu)
      : act_(act) {
    proj_ = Linear::create(ps, prefix + "/proj", dim, dim, rng);
    gcn_w_ = ps.add(prefix + "/gcn_w", init::xavier_normal({dim, dim}, dim, dim, rng));
    cls_ = Linear::create(ps, prefix + "/cls", dim, classes, rng);
  }

  // tokens: per-stage selected features, all [K_i, D]; returns [1, C_gt]
  Var operator()(const std::vector<Var>& tokens) const {
    std::vector<Var> present;
    for (const auto& t : tokens)
      if (t.defined() && t.shape()[0] > 0) present.push_back(t);
    if (present.empty()) throw std::invalid_argument("combiner: empty selection");
    Var x = present.size() == 1 ? present[0] : ops::concat_rows(present);
    Var p = proj_(x);
    const double scale = 1.0 / std::sqrt(double(p.shape()[1]));
    Var adj = ops::softmax_rows(ops::mul_scalar(ops::matmul(p, ops::transpose2d(p)), scale));
    Var mixed = apply_activation(ops::matmul(ops::matmul(adj, x), gcn_w_), act_);
    // mean pool over tokens -> [1, D]
    const int64_t n = mixed.shape()[0], d = mixed.shape()[1];
    Var pooled = ops::mul_scalar(
        ops::matmul(Var::leaf(Tensor::full({1, n}, 1.0), false), mixed), 1.0 / double(n));
    (void)d;
    return cls_(pooled);
  }

  const Linear& classifier() const { return cls_; }
  Var& gcn_weight() { return gcn_w_; }
  Linear& projection() { return proj_; }

private:
  Activation act_ = Activation::silu;
  Linear proj_;
  Var gcn_w_;
  Linear cls_;
};

struct BsLossWeights {
  double lambda_m = 1.0;
  double lambda_d = 5.0;
  double lambda_l = 0.3;

  void validate() const {
    if (lambda_m < 0 || lambda_d < 0 || lambda_l < 0)
      throw std::invalid_argument("BS loss weights must be nonnegative");
  }
};

enum class DroppedMode { tanh, softmax };

inline DroppedMode dropped_mode_from_string(const std::string& s) {
  if (s == "tanh") return DroppedMode::tanh;
  if (s == "softmax") return DroppedMode::softmax;
  throw std::invalid_argument("unknown dropped mode: " + s);
}

inline std::string to_string(DroppedMode m) {
  return m == DroppedMode::tanh ? "tanh" : "softmax";
}

// cross entropy between the merged prediction and the label
inline Var merged_loss(const Var& merged_logits, const std::vector<int>& labels) {
  return ops::cross_entropy_mean(merged_logits, labels);
}

// Suppression loss over dropped logits [M, C_gt]. tanh mode drives
// tanh(Y_d) toward -1; softmax mode drives softmax(Y_d) toward uniform
// 1/C_gt. Sum over classes, mean over locations.
inline Var dropped_loss(const Var& dropped_logits, DroppedMode mode = DroppedMode::tanh) {
  if (!dropped_logits.defined() || dropped_logits.shape()[0] == 0)
    return Var::leaf(Tensor::scalar(0.0), false);
  const int64_t m = dropped_logits.shape()[0];
  Var dev;
  if (mode == DroppedMode::tanh) {
    dev = ops::add_scalar(ops::tanh_op(dropped_logits), 1.0);
  } else {
    const int64_t c = dropped_logits.shape()[1];
    dev = ops::add_scalar(ops::softmax_rows(dropped_logits), -1.0 / double(c));
  }
  return ops::mul_scalar(ops::sum_all(ops::mul(dev, dev)), 1.0 / double(m));
}

// sum over stages of cross entropy on the average-pooled per-stage logits,
// using the same heads as the classification maps
inline Var layer_loss(const std::vector<Var>& maps, const std::vector<Linear>& heads,
                      const std::vector<int>& labels) {
  if (maps.size() != heads.size())
    throw std::invalid_argument("layer_loss: map/head count mismatch");
  Var total;
  for (size_t i = 0; i < maps.size(); ++i) {
    Var logits = heads[i](ops::global_avgpool(maps[i]));
    Var ce = ops::cross_entropy_mean(logits, labels);
    total = total.defined() ? ops::add(total, ce) : ce;
  }
  return total;
}

inline Var bs_total(const Var& loss_m, const Var& loss_d, const Var& loss_l,
                    const BsLossWeights& w) {
  w.validate();
  const std::pair<const char*, const Var*> parts[] = {
      {"loss_m", &loss_m}, {"loss_d", &loss_d}, {"loss_l", &loss_l}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v->val().item())) throw NonFiniteLossError(name);
  return ops::add(ops::add(ops::mul_scalar(loss_m, w.lambda_m), ops::mul_scalar(loss_d, w.lambda_d)),
                  ops::mul_scalar(loss_l, w.lambda_l));
}

// run-length encoding of a selection mask, alternating runs starting with
// the unselected value 0
inline std::vector<int64_t> rle_encode(const std::vector<uint8_t>& mask) {
  std::vector<int64_t> runs;
  uint8_t cur = 0;
  int64_t len = 0;
  for (uint8_t v : mask) {
    if (v == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = v;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

inline std::vector<uint8_t> rle_decode(const std::vector<int64_t>& runs) {
  std::vector<uint8_t> mask;
  uint8_t cur = 0;
  for (int64_t r : runs) {
    for (int64_t i = 0; i < r; ++i) mask.push_back(cur);
    cur = cur ? 0 : 1;
  }
  return mask;
}

}  // namespace herbs

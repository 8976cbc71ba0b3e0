#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "herbs/ops.hpp"

namespace herbs {

enum class Activation { silu, relu, leaky_relu, identity };

inline Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Var apply_activation(const Var& x, Activation a) {
  switch (a) {
    case Activation::silu: return ops::silu(x);
    case Activation::relu: return ops::relu(x);
    case Activation::leaky_relu: return ops::leaky_relu(x);
    case Activation::identity: return x;
  }
  throw std::logic_error("unreachable");
}

// Ordered registry of trainable leaf tensors. Order is creation order, which
// is deterministic, so optimizers and checkpoints can rely on it.
class ParamStore {
public:
  Var add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    Var v = Var::leaf(std::move(init), true);
    index_[name] = names_.size();
    names_.push_back(name);
    vars_.push_back(v);
    return v;
  }

  size_t size() const { return vars_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Var& var(size_t i) { return vars_[i]; }
  const Var& var(size_t i) const { return vars_[i]; }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Var& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return vars_[it->second];
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& v : vars_) n += v.numel();
    return n;
  }

  void zero_grads() {
    for (auto& v : vars_) v.clear_grad();
  }

  bool all_finite() const {
    for (const auto& v : vars_)
      if (!v.val().all_finite()) return false;
    return true;
  }

private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, size_t> index_;
};

namespace init {
inline Tensor he_normal(Shape s, int64_t fan_in, Rng& rng, double gain = 1.4142135623730951) {
  return Tensor::randn(std::move(s), rng, gain / std::sqrt(double(fan_in)));
}
inline Tensor xavier_normal(Shape s, int64_t fan_in, int64_t fan_out, Rng& rng) {
  return Tensor::randn(std::move(s), rng, std::sqrt(2.0 / double(fan_in + fan_out)));
}
// amplitude-preserving gain for a convolution feeding the given nonlinearity;
// silu attenuates small signals roughly twice as hard as relu
inline double conv_gain(Activation act) {
  switch (act) {
    case Activation::silu: return 1.7;
    case Activation::relu:
    case Activation::leaky_relu: return 1.4142135623730951;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}
}  // namespace init

// x:[N,in] -> [N,out]
struct Linear {
  Var w, b;
  int64_t in = 0, out = 0;

  static Linear create(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                       Rng& rng, double scale = 0.0) {
    Linear l;
    l.in = in;
    l.out = out;
    Tensor wt = scale > 0.0 ? Tensor::randn({out, in}, rng, scale)
                            : init::xavier_normal({out, in}, in, out, rng);
    l.w = ps.add(prefix + "/w", std::move(wt));
    l.b = ps.add(prefix + "/b", Tensor::zeros({out}));
    return l;
  }

  Var operator()(const Var& x) const { return ops::linear(x, w, b); }
};

struct Conv2d {
  Var w, b;
  int64_t stride = 1, pad = 0;

  static Conv2d create(ParamStore& ps, const std::string& prefix, int64_t in_ch, int64_t out_ch,
                       int64_t k, int64_t stride, int64_t pad, Rng& rng,
                       double gain = 1.4142135623730951) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    c.w = ps.add(prefix + "/w", init::he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng, gain));
    c.b = ps.add(prefix + "/b", Tensor::zeros({out_ch}));
    return c;
  }

  Var operator()(const Var& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

struct LayerNorm {
  Var gamma, beta;

  static LayerNorm create(ParamStore& ps, const std::string& prefix, int64_t dim) {
    LayerNorm n;
    n.gamma = ps.add(prefix + "/gamma", Tensor::full({dim}, 1.0));
    n.beta = ps.add(prefix + "/beta", Tensor::zeros({dim}));
    return n;
  }

  Var operator()(const Var& x) const { return ops::layernorm_rows(x, gamma, beta); }
};

// layer norm over the channel dimension at every spatial location of a
// [B,C,H,W] map; keeps deep conv stacks at unit scale without batch state
struct ChannelNorm {
  LayerNorm ln;

  static ChannelNorm create(ParamStore& ps, const std::string& prefix, int64_t channels) {
    return ChannelNorm{LayerNorm::create(ps, prefix, channels)};
  }

  Var operator()(const Var& x) const {
    const auto& s = x.shape();
    return ops::rows_as_map(ln(ops::locations_as_rows(x)), s[0], s[1], s[2], s[3]);
  }
};

}  // namespace herbs

#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "herbs/rng.hpp"

namespace herbs {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor of doubles. Value semantics; all the math lives in
// the autodiff ops, this is just storage plus a few fillers.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (int64_t(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (auto& x : t.data_) x = rng.normal(0.0, stddev);
    return t;
  }
  static Tensor rand_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  double& at2(int64_t i, int64_t j) { return data_[size_t(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return data_[size_t(i * shape_[1] + j)]; }

  double item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void add_(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("add_: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }
  void scale_(double a) {
    for (auto& x : data_) x *= a;
  }
  void fill_(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace herbs

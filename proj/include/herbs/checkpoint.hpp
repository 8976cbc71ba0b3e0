#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "herbs/nn.hpp"

namespace herbs {

// Single-file binary container: magic, version, config echo, training
// counters, then named raw-double tensors (parameters plus optimizer
// state). Doubles are written verbatim so a round trip is bit-exact.
struct Checkpoint {
  std::string config_echo;
  int64_t epoch_next = 0;
  int64_t global_step = 0;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {
constexpr char kCkptMagic[8] = {'H', 'E', 'R', 'B', 'S', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}
inline std::string read_string(std::istream& is) {
  const uint64_t n = read_pod<uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(detail::kCkptMagic, 8);
  detail::write_pod<uint32_t>(os, 1);
  detail::write_string(os, ckpt.config_echo);
  detail::write_pod<int64_t>(os, ckpt.epoch_next);
  detail::write_pod<int64_t>(os, ckpt.global_step);
  detail::write_pod<uint64_t>(os, ckpt.seed);
  detail::write_pod<uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    detail::write_string(os, name);
    detail::write_pod<uint64_t>(os, t.ndim());
    for (size_t d = 0; d < t.ndim(); ++d) detail::write_pod<int64_t>(os, t.dim(d));
    os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 8));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ckpt;
  ckpt.config_echo = detail::read_string(is);
  ckpt.epoch_next = detail::read_pod<int64_t>(is);
  ckpt.global_step = detail::read_pod<int64_t>(is);
  ckpt.seed = detail::read_pod<uint64_t>(is);
  const uint64_t n = detail::read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = detail::read_string(is);
    const uint64_t ndim = detail::read_pod<uint64_t>(is);
    Shape shape;
    for (uint64_t d = 0; d < ndim; ++d) shape.push_back(detail::read_pod<int64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 8));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

// copy parameter tensors into a store; every store parameter must be present
// with a matching shape
inline void apply_parameters(const Checkpoint& ckpt, ParamStore& params) {
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor* t = ckpt.find(params.name(i));
    if (!t) throw std::runtime_error("checkpoint: missing parameter " + params.name(i));
    if (t->shape() != params.var(i).val().shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + params.name(i));
    params.var(i).mutable_val() = *t;
  }
}

}  // namespace herbs

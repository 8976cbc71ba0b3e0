#pragma once

#include <string>
#include <vector>

#include "herbs/image.hpp"
#include "herbs/rng.hpp"

namespace herbs {

// Desk-scale stand-in for fine-grained bird data: each generic class shares
// a background texture, each fine class plants a small class-specific patch
// at a random location. The two fine classes within a generic class use the
// same patch palette in different spatial arrangements, so telling them
// apart requires the arrangement, not the average color.
struct SyntheticSpec {
  int64_t num_generic = 5;
  int64_t fine_per_generic = 2;
  int64_t image_size = 32;
  int64_t patch_size = 8;
  double noise_level = 0.25;
  int64_t samples_per_class = 30;
  double train_fraction = 2.0 / 3.0;

  int64_t classes() const { return num_generic * fine_per_generic; }

  void validate() const {
    if (num_generic < 1 || fine_per_generic < 1 || samples_per_class < 1)
      throw std::invalid_argument("synthetic spec: counts must be positive");
    if (patch_size + 2 > image_size)
      throw std::invalid_argument("synthetic spec: patch does not fit strictly inside the image");
    if (noise_level < 0) throw std::invalid_argument("synthetic spec: negative noise");
    if (train_fraction <= 0 || train_fraction >= 1)
      throw std::invalid_argument("synthetic spec: train fraction must be in (0,1)");
  }
};

struct Sample {
  Tensor image;  // [3, S, S], values in [0, 1]
  Tensor mask;   // [S, S], 1 inside the discriminative patch
  int fine = 0;
  int generic = 0;
  std::string id;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  uint64_t seed = 0;
  std::vector<Sample> train, test;

  int64_t classes() const { return spec.classes(); }
  int generic_of(int fine) const { return int(fine / spec.fine_per_generic); }
};

namespace detail {

constexpr uint64_t kTagTexture = 0x7e01, kTagGlyph = 0x7e02, kTagSample = 0x7e03,
                   kTagSplit = 0x7e04;

// low-frequency two-harmonic field, distinct per generic class and channel
inline void paint_texture(Tensor& img, int generic, uint64_t seed) {
  const int64_t S = img.dim(1);
  for (int64_t c = 0; c < 3; ++c) {
    Rng rng = Rng::stream(seed, kTagTexture, uint64_t(generic), uint64_t(c));
    const double fx1 = 1.0 + rng.below(3), fy1 = 1.0 + rng.below(3);
    const double fx2 = 2.0 + rng.below(4), fy2 = 2.0 + rng.below(4);
    const double p1 = rng.uniform(0.0, 6.283), p2 = rng.uniform(0.0, 6.283);
    const double a2 = rng.uniform(0.1, 0.25);
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        const double u = 6.283185307179586 / double(S);
        double v = 0.5 + 0.25 * std::sin(u * (fx1 * x + fy1 * y) + p1) +
                   a2 * std::sin(u * (fx2 * x + fy2 * y) + p2);
        img[(c * S + y) * S + x] = std::clamp(v, 0.0, 1.0);
      }
  }
}

// glyphs come in pairs: the base arrangement for the first fine class of a
// generic class, a fixed pixel permutation of it for the second, and so on
inline Tensor make_glyph(const SyntheticSpec& spec, int fine, uint64_t seed) {
  const int64_t P = spec.patch_size;
  const int base_fine = fine - fine % int(spec.fine_per_generic);
  Rng rng = Rng::stream(seed, kTagGlyph, uint64_t(base_fine));
  Tensor glyph({3, P, P});
  for (int64_t i = 0; i < glyph.numel(); ++i)
    glyph[i] = rng.bernoulli(0.5) ? rng.uniform(0.75, 1.0) : rng.uniform(0.0, 0.25);

  const int variant = fine % int(spec.fine_per_generic);
  if (variant == 0) return glyph;
  // apply the variant-th power of one fixed spatial permutation
  std::vector<int64_t> perm(size_t(P * P));
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng = Rng::stream(seed, kTagGlyph, uint64_t(base_fine), 0x9);
  prng.shuffle(perm);
  Tensor out = glyph;
  for (int v = 0; v < variant; ++v) {
    Tensor next({3, P, P});
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t l = 0; l < P * P; ++l)
        next[c * P * P + perm[size_t(l)]] = out[c * P * P + l];
    out = next;
  }
  return out;
}

inline Sample make_sample(const SyntheticSpec& spec, int fine, int64_t index, uint64_t seed) {
  const int64_t S = spec.image_size, P = spec.patch_size;
  Sample s;
  s.fine = fine;
  s.generic = int(fine / spec.fine_per_generic);
  s.id = "c" + std::to_string(fine) + "_s" + std::to_string(index);
  s.image = Tensor({3, S, S});
  s.mask = Tensor({S, S});
  paint_texture(s.image, s.generic, seed);

  Tensor glyph = make_glyph(spec, fine, seed);
  Rng rng = Rng::stream(seed, kTagSample, uint64_t(fine), uint64_t(index));
  // strictly inside: at least one background pixel on every side
  const int64_t y0 = 1 + int64_t(rng.below(uint64_t(S - P - 1)));
  const int64_t x0 = 1 + int64_t(rng.below(uint64_t(S - P - 1)));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < P; ++y)
      for (int64_t x = 0; x < P; ++x)
        s.image[(c * S + y0 + y) * S + x0 + x] = glyph[(c * P + y) * P + x];
  for (int64_t y = 0; y < P; ++y)
    for (int64_t x = 0; x < P; ++x) s.mask[(y0 + y) * S + x0 + x] = 1.0;

  if (spec.noise_level > 0)
    for (int64_t i = 0; i < s.image.numel(); ++i)
      s.image[i] = std::clamp(s.image[i] + rng.normal(0.0, spec.noise_level), 0.0, 1.0);
  return s;
}

}  // namespace detail

inline SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, uint64_t seed) {
  spec.validate();
  SyntheticDataset ds;
  ds.spec = spec;
  ds.seed = seed;
  const int64_t train_per_class =
      std::clamp<int64_t>(int64_t(std::llround(double(spec.samples_per_class) * spec.train_fraction)),
                          1, spec.samples_per_class - 1);
  for (int fine = 0; fine < int(spec.classes()); ++fine) {
    std::vector<int64_t> order(size_t(spec.samples_per_class));
    std::iota(order.begin(), order.end(), 0);
    Rng srng = Rng::stream(seed, detail::kTagSplit, uint64_t(fine));
    srng.shuffle(order);
    for (int64_t i = 0; i < spec.samples_per_class; ++i) {
      Sample s = detail::make_sample(spec, fine, order[size_t(i)], seed);
      (i < train_per_class ? ds.train : ds.test).push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace herbs

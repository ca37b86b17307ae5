#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "faust/dataset.hpp"
#include "faust/error.hpp"
#include "faust/rng.hpp"
#include "faust/tensor.hpp"

namespace faust {

enum class Regime { none, weak, strong };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::none: return "none";
    case Regime::weak: return "weak";
    case Regime::strong: return "strong";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "none") return Regime::none;
  if (s == "weak") return Regime::weak;
  if (s == "strong") return Regime::strong;
  throw ValueError("unknown augmentation regime '" + s + "'");
}

/// Augmentation settings. A sample is a raster when its shape has rank 3
/// (channels, height, width) and a plain vector otherwise.
struct AugPolicy {
  Regime regime = Regime::strong;
  std::size_t n_views = 2;
  std::uint64_t seed = 0;

  // weak: flip-and-shift
  double raster_flip_prob = 0.5;
  double vector_flip_prob = 0.0;  // sign flip of one coordinate
  double shift_fraction = 0.1;

  // strong, vectors
  std::size_t ops_per_sample = 2;
  double jitter_min = 0.05;
  double jitter_max = 0.3;
  double coord_drop_fraction = 0.2;
  double max_rotation_deg = 20.0;

  // strong, rasters
  double max_translate_fraction = 0.2;
  double raster_max_rotation_deg = 30.0;
  double contrast_min = 0.5;
  double contrast_max = 1.5;
  double max_brightness = 0.3;
  double noise_min = 0.05;
  double noise_max = 0.2;
  double cutout_fraction = 0.25;
  bool raster_invert = true;  // invert belongs to the raster pool

  void validate() const {
    if (n_views < 1) throw ValueError("augment: n_views must be at least 1");
    auto unit = [](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValueError(std::string("augment: ") + what + " must lie in [0, 1]");
    };
    unit(raster_flip_prob, "raster_flip_prob");
    unit(vector_flip_prob, "vector_flip_prob");
    unit(shift_fraction, "shift_fraction");
    unit(coord_drop_fraction, "coord_drop_fraction");
    unit(max_translate_fraction, "max_translate_fraction");
    unit(cutout_fraction, "cutout_fraction");
    if (!(0.0 <= jitter_min && jitter_min <= jitter_max)) throw ValueError("augment: bad jitter range");
    if (!(0.0 <= contrast_min && contrast_min <= contrast_max)) throw ValueError("augment: bad contrast range");
    if (!(0.0 <= noise_min && noise_min <= noise_max)) throw ValueError("augment: bad noise range");
    if (max_rotation_deg < 0.0 || raster_max_rotation_deg < 0.0 || max_brightness < 0.0) {
      throw ValueError("augment: negative magnitude");
    }
  }

  /// Weak regime with every magnitude at zero; the identity transform.
  static AugPolicy identity() {
    AugPolicy p;
    p.regime = Regime::weak;
    p.raster_flip_prob = 0.0;
    p.vector_flip_prob = 0.0;
    p.shift_fraction = 0.0;
    return p;
  }
};

namespace aug {

// Vector operations ------------------------------------------------------------

/// x_i += sigma * N(0, 1), coordinates in order.
inline void jitter(std::span<float> x, double sigma, Rng& rng) {
  for (auto& v : x) v = static_cast<float>(v + sigma * rng.normal());
}

/// Zeroes max(1, round(fraction * d)) distinct random coordinates.
inline void coordinate_dropout(std::span<float> x, double fraction, Rng& rng) {
  if (fraction <= 0.0 || x.empty()) return;
  const std::size_t d = x.size();
  const auto count =
      std::min(d, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(d)))));
  std::vector<std::size_t> idx(d);
  for (std::size_t i = 0; i < d; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + rng.below(d - i);
    std::swap(idx[i], idx[j]);
    x[idx[i]] = 0.0f;
  }
}

/// Rotates within a random coordinate plane by an angle uniform in [-max, max] degrees.
inline void plane_rotation(std::span<float> x, double max_deg, Rng& rng) {
  const std::size_t d = x.size();
  if (d < 2) return;
  std::size_t i = 0, j = 1;
  if (d > 2) {
    i = rng.below(d);
    j = rng.below(d - 1);
    if (j >= i) ++j;
  }
  const double a = rng.uniform(-max_deg, max_deg) * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double xi = x[i], xj = x[j];
  x[i] = static_cast<float>(c * xi - s * xj);
  x[j] = static_cast<float>(s * xi + c * xj);
}

// Raster operations (single channel plane, row-major) ----------------------------

inline void invert(std::span<float> img) {
  for (auto& v : img) v = 1.0f - v;
}

inline void translate(std::span<float> img, std::size_t h, std::size_t w, long dy, long dx) {
  std::vector<float> src(img.begin(), img.end());
  for (long r = 0; r < static_cast<long>(h); ++r)
    for (long c = 0; c < static_cast<long>(w); ++c) {
      const long sr = r - dy, sc = c - dx;
      const bool inside = sr >= 0 && sr < static_cast<long>(h) && sc >= 0 && sc < static_cast<long>(w);
      img[r * w + c] = inside ? src[sr * w + sc] : 0.0f;
    }
}

inline void hflip(std::span<float> img, std::size_t h, std::size_t w) {
  for (std::size_t r = 0; r < h; ++r) std::reverse(img.begin() + r * w, img.begin() + (r + 1) * w);
}

/// Rotation about the image centre with bilinear sampling and zero fill.
inline void rotate(std::span<float> img, std::size_t h, std::size_t w, double deg) {
  std::vector<float> src(img.begin(), img.end());
  const double a = deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  auto at = [&](long r, long col) -> double {
    if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w)) return 0.0;
    return src[r * w + col];
  };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      const double y = static_cast<double>(r) - cy, x = static_cast<double>(col) - cx;
      const double sy = c * y - s * x + cy, sx = s * y + c * x + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                       ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
      img[r * w + col] = static_cast<float>(v);
    }
}

inline void contrast(std::span<float> img, double factor) {
  double mean = 0.0;
  for (float v : img) mean += v;
  mean /= static_cast<double>(img.size());
  for (auto& v : img) v = static_cast<float>(mean + factor * (v - mean));
}

inline void brightness(std::span<float> img, double delta) {
  for (auto& v : img) v = static_cast<float>(v + delta);
}

/// Zeroes a square of side round(fraction * min(h, w)) placed fully inside the image.
inline void cutout(std::span<float> img, std::size_t h, std::size_t w, double fraction, Rng& rng) {
  const auto side = std::min(std::min(h, w), static_cast<std::size_t>(std::lround(fraction * std::min(h, w))));
  if (side == 0) return;
  const auto y0 = rng.below(h - side + 1), x0 = rng.below(w - side + 1);
  for (std::size_t r = y0; r < y0 + side; ++r)
    for (std::size_t c = x0; c < x0 + side; ++c) img[r * w + c] = 0.0f;
}

inline void clamp_unit(std::span<float> img) {
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

enum class RasterOp { translate, rotate, invert, contrast, brightness, noise };
inline constexpr std::size_t kRasterOps = 6;
enum class VectorOp { jitter, coord_dropout, rotation };
inline constexpr std::size_t kVectorOps = 3;

/// Picks `count` distinct indices from [0, pool) uniformly.
inline std::vector<std::size_t> pick_ops(std::size_t pool, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  count = std::min(count, pool);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(pool - i)]);
  idx.resize(count);
  return idx;
}

}  // namespace aug

inline bool is_raster_shape(const Shape& s) { return s.size() == 3; }

/// Flip-and-shift. Rasters: horizontal flip, integer translation of at most
/// floor(shift_fraction * side) pixels. Vectors: optional sign flip of one
/// coordinate, then a uniform per-coordinate offset in [-shift, shift].
inline void weak_transform(std::span<float> x, const Shape& shape, const AugPolicy& p, Rng& rng) {
  if (is_raster_shape(shape)) {
    const std::size_t h = shape[1], w = shape[2], plane = h * w;
    const bool flip = rng.bernoulli(p.raster_flip_prob);
    const long max_shift = static_cast<long>(std::floor(p.shift_fraction * static_cast<double>(std::min(h, w))));
    const long dy = rng.between(-max_shift, max_shift), dx = rng.between(-max_shift, max_shift);
    for (std::size_t ch = 0; ch < shape[0]; ++ch) {
      auto img = x.subspan(ch * plane, plane);
      if (flip) aug::hflip(img, h, w);
      if (dy || dx) aug::translate(img, h, w, dy, dx);
    }
    return;
  }
  if (rng.bernoulli(p.vector_flip_prob)) {
    auto& v = x[rng.below(x.size())];
    v = -v;
  }
  if (p.shift_fraction > 0.0) {
    for (auto& v : x) v = static_cast<float>(v + rng.uniform(-p.shift_fraction, p.shift_fraction));
  }
}

/// RandAugment-style transform: `ops_per_sample` distinct operations with
/// random magnitudes. Rasters then receive Cutout and are clamped to [0, 1].
inline void strong_transform(std::span<float> x, const Shape& shape, const AugPolicy& p, Rng& rng) {
  if (is_raster_shape(shape)) {
    const std::size_t h = shape[1], w = shape[2], plane = h * w;
    std::vector<aug::RasterOp> pool;
    for (std::size_t i = 0; i < aug::kRasterOps; ++i) {
      const auto op = static_cast<aug::RasterOp>(i);
      if (op != aug::RasterOp::invert || p.raster_invert) pool.push_back(op);
    }
    for (auto pick : aug::pick_ops(pool.size(), p.ops_per_sample, rng)) {
      switch (pool[pick]) {
        case aug::RasterOp::translate: {
          const long m = std::lround(p.max_translate_fraction * static_cast<double>(std::min(h, w)));
          const long dy = rng.between(-m, m), dx = rng.between(-m, m);
          for (std::size_t ch = 0; ch < shape[0]; ++ch) aug::translate(x.subspan(ch * plane, plane), h, w, dy, dx);
          break;
        }
        case aug::RasterOp::rotate: {
          const double deg = rng.uniform(-p.raster_max_rotation_deg, p.raster_max_rotation_deg);
          for (std::size_t ch = 0; ch < shape[0]; ++ch) aug::rotate(x.subspan(ch * plane, plane), h, w, deg);
          break;
        }
        case aug::RasterOp::invert:
          aug::invert(x);
          break;
        case aug::RasterOp::contrast:
          aug::contrast(x, rng.uniform(p.contrast_min, p.contrast_max));
          break;
        case aug::RasterOp::brightness:
          aug::brightness(x, rng.uniform(-p.max_brightness, p.max_brightness));
          break;
        case aug::RasterOp::noise:
          aug::jitter(x, rng.uniform(p.noise_min, p.noise_max), rng);
          break;
      }
    }
    for (std::size_t ch = 0; ch < shape[0]; ++ch) aug::cutout(x.subspan(ch * plane, plane), h, w, p.cutout_fraction, rng);
    aug::clamp_unit(x);
    return;
  }
  for (auto op : aug::pick_ops(aug::kVectorOps, p.ops_per_sample, rng)) {
    switch (static_cast<aug::VectorOp>(op)) {
      case aug::VectorOp::jitter:
        aug::jitter(x, rng.uniform(p.jitter_min, p.jitter_max), rng);
        break;
      case aug::VectorOp::coord_dropout:
        aug::coordinate_dropout(x, p.coord_drop_fraction, rng);
        break;
      case aug::VectorOp::rotation:
        aug::plane_rotation(x, p.max_rotation_deg, rng);
        break;
    }
  }
}

/// Applies the policy's regime to one sample; a pure function of (sample, seed, policy).
inline std::vector<float> transform_sample(std::span<const float> sample, const Shape& shape, const AugPolicy& p,
                                           std::uint64_t seed) {
  std::vector<float> out(sample.begin(), sample.end());
  Rng rng(seed);
  switch (p.regime) {
    case Regime::none: break;
    case Regime::weak: weak_transform(out, shape, p, rng); break;
    case Regime::strong: strong_transform(out, shape, p, rng); break;
  }
  return out;
}

/// The clean samples of a mini-batch and `n_views` augmented copies.
struct ViewBatch {
  Shape sample_shape;
  std::size_t batch = 0;
  std::vector<float> clean;               // batch * sample_size
  std::vector<std::vector<float>> views;  // n_views x (batch * sample_size)

  template <typename T>
  Tensor<T> clean_tensor() const {
    return to_tensor<T>(clean);
  }

  /// All views concatenated along the batch axis (view-major).
  template <typename T>
  Tensor<T> views_tensor() const {
    std::vector<float> all;
    for (const auto& v : views) all.insert(all.end(), v.begin(), v.end());
    Shape s{batch * views.size()};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    return Tensor<T>(std::move(s), std::vector<T>(all.begin(), all.end()));
  }

 private:
  template <typename T>
  Tensor<T> to_tensor(const std::vector<float>& flat) const {
    Shape s{batch};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    return Tensor<T>(std::move(s), std::vector<T>(flat.begin(), flat.end()));
  }
};

/// View i of sample j is drawn from derive_seed(seed, i, sample_ids[j]), so the
/// stream does not depend on evaluation order.
inline ViewBatch make_views(std::span<const float> samples, const Shape& sample_shape,
                            std::span<const std::size_t> sample_ids, const AugPolicy& policy, std::uint64_t seed) {
  policy.validate();
  const std::size_t m = numel(sample_shape);
  if (sample_ids.empty() || samples.size() != sample_ids.size() * m) {
    throw ValueError("make_views: empty or inconsistent batch");
  }
  ViewBatch vb{sample_shape, sample_ids.size(), std::vector<float>(samples.begin(), samples.end()), {}};
  for (std::size_t v = 0; v < policy.n_views; ++v) {
    std::vector<float> view;
    view.reserve(samples.size());
    for (std::size_t j = 0; j < sample_ids.size(); ++j) {
      const auto out = transform_sample(samples.subspan(j * m, m), sample_shape, policy,
                                        derive_seed(seed, v, sample_ids[j]));
      view.insert(view.end(), out.begin(), out.end());
    }
    vb.views.push_back(std::move(view));
  }
  return vb;
}

/// Applies `regime` once to every sample of a labeled set (evaluation-time perturbation).
inline Dataset perturb(const Dataset& d, Regime regime, std::uint64_t seed, AugPolicy policy = {}) {
  policy.regime = regime;
  policy.validate();
  Dataset out = d;
  const std::size_t m = d.sample_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto t = transform_sample(d.sample(i), d.sample_shape, policy, derive_seed(seed, i));
    std::copy(t.begin(), t.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  return out;
}

}  // namespace faust

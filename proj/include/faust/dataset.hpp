#pragma once

// .fdat layout (little-endian):
//   8 bytes   magic "FAUSTDAT"
//   u32       format version
//   u32       n (samples)
//   u32       K (classes)
//   u32       rank, then rank x u32 extents of one sample
//   f32       samples, row-major, n * prod(extents)
//   u16       labels, n

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faust/binary_io.hpp"
#include "faust/error.hpp"
#include "faust/rng.hpp"
#include "faust/tensor.hpp"

namespace faust {

inline constexpr std::string_view kDatasetMagic = "FAUSTDAT";
inline constexpr std::uint32_t kDatasetVersion = 1;

enum class Domain { source, target };

/// Samples without labels. This is the only form of target data the
/// adaptation engine accepts.
struct UnlabeledSet {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<float> samples;

  std::size_t sample_size() const { return numel(sample_shape); }
  std::size_t size() const { return samples.size() / sample_size(); }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(samples).subspan(i * sample_size(), sample_size());
  }
};

struct Dataset {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<float> samples;
  std::vector<std::uint16_t> labels;
  Domain domain = Domain::source;
  std::string family;  // generator descriptor, informational

  std::size_t sample_size() const { return numel(sample_shape); }
  std::size_t size() const { return labels.size(); }
  bool is_raster() const { return sample_shape.size() == 3; }

  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(samples).subspan(i * sample_size(), sample_size());
  }

  UnlabeledSet unlabeled() const { return UnlabeledSet{sample_shape, num_classes, samples}; }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{sample_shape, num_classes, {}, {}, domain, family};
    d.samples.reserve(idx.size() * sample_size());
    for (auto i : idx) {
      auto s = sample(i);
      d.samples.insert(d.samples.end(), s.begin(), s.end());
      d.labels.push_back(labels[i]);
    }
    return d;
  }

  /// Checks labels < K, at least `min_per_class` samples per class and finite values.
  void validate(std::size_t min_per_class = 10) const {
    if (sample_shape.empty() || num_classes < 2) throw ValueError("dataset: need a sample shape and K >= 2");
    if (samples.size() != labels.size() * sample_size()) throw ValueError("dataset: sample/label count mismatch");
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto l : labels) {
      if (l >= num_classes) throw ValueError("dataset: label " + std::to_string(l) + " out of range");
      ++counts[l];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (counts[k] < min_per_class) {
        throw ValueError("dataset: class " + std::to_string(k) + " has " + std::to_string(counts[k]) + " samples");
      }
    }
    for (float v : samples) {
      if (!std::isfinite(v)) throw ValueError("dataset: non-finite sample value");
    }
  }
};

/// Copies rows `idx` of flat float samples into a (batch, sample_shape...) tensor.
template <typename T>
Tensor<T> gather_batch(std::span<const float> samples, const Shape& sample_shape, std::span<const std::size_t> idx) {
  const std::size_t m = numel(sample_shape);
  std::vector<T> data;
  data.reserve(idx.size() * m);
  for (auto i : idx) {
    for (std::size_t j = 0; j < m; ++j) data.push_back(static_cast<T>(samples[i * m + j]));
  }
  Shape shape{idx.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> gather_batch(const Dataset& d, std::span<const std::size_t> idx) {
  return gather_batch<T>(d.samples, d.sample_shape, idx);
}

template <typename T>
Tensor<T> gather_batch(const UnlabeledSet& d, std::span<const std::size_t> idx) {
  return gather_batch<T>(d.samples, d.sample_shape, idx);
}

// ---------------------------------------------------------------------------
// File format

inline std::string encode_dataset(const Dataset& d) {
  io::ByteWriter w;
  w.put_bytes(kDatasetMagic);
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.num_classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.sample_shape.size()));
  for (auto e : d.sample_shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
  w.put<std::uint8_t>(d.domain == Domain::target ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.family.size()));
  w.put_bytes(d.family);
  for (float v : d.samples) w.put<float>(v);
  for (auto l : d.labels) w.put<std::uint16_t>(l);
  return w.take();
}

inline Dataset decode_dataset(std::string_view bytes) {
  if (bytes.size() < kDatasetMagic.size() || bytes.substr(0, kDatasetMagic.size()) != kDatasetMagic) {
    throw MagicMismatch("dataset: bad magic bytes (not a .fdat file)");
  }
  io::ByteReader r(bytes, "dataset");
  r.get_bytes(kDatasetMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion) {
    throw VersionMismatch("dataset: format version " + std::to_string(version) + ", reader supports " +
                          std::to_string(kDatasetVersion));
  }
  Dataset d;
  const auto n = r.get<std::uint32_t>();
  d.num_classes = r.get<std::uint32_t>();
  const auto rank = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < rank; ++i) d.sample_shape.push_back(r.get<std::uint32_t>());
  const auto domain = r.get<std::uint8_t>();
  if (domain > 1) throw FormatError("dataset: unknown domain tag " + std::to_string(domain));
  d.domain = domain == 1 ? Domain::target : Domain::source;
  d.family = std::string(r.get_bytes(r.get<std::uint32_t>()));
  d.samples.resize(static_cast<std::size_t>(n) * numel(d.sample_shape));
  for (auto& v : d.samples) v = r.get<float>();
  d.labels.resize(n);
  for (auto& l : d.labels) l = r.get<std::uint16_t>();
  if (r.remaining() != 0) throw FormatError("dataset: " + std::to_string(r.remaining()) + " trailing bytes");
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) { io::write_file(path, encode_dataset(d)); }

inline Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Generators

struct DomainPair {
  Dataset source;
  Dataset target;
};

/// Two interleaved half circles centred on the origin, then rotated by
/// `rotation_deg` counter-clockwise. Labels alternate 0, 1, 0, ... and are
/// assigned before any transform.
inline Dataset two_moons(std::size_t n, double rotation_deg, double noise, std::uint64_t seed) {
  Rng rng(seed);
  const double a = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  Dataset d{Shape{2}, 2, {}, {}, Domain::source, "two-moons"};
  d.samples.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint16_t>(i % 2);
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * rng.normal() - 0.5;
    y += noise * rng.normal() - 0.25;
    d.samples.push_back(static_cast<float>(c * x - s * y));
    d.samples.push_back(static_cast<float>(s * x + c * y));
    d.labels.push_back(label);
  }
  return d;
}

inline DomainPair gen_two_moons_pair(std::size_t n, double rotation_deg, double noise, std::uint64_t seed) {
  if (n < 100) throw ValueError("two-moons: n must be at least 100, got " + std::to_string(n));
  if (!(rotation_deg >= 0.0 && rotation_deg <= 90.0)) throw ValueError("two-moons: rotation must lie in [0, 90] degrees");
  if (!(noise >= 0.0)) throw ValueError("two-moons: noise must be non-negative");
  DomainPair p{two_moons(n, 0.0, noise, derive_seed(seed, 0)), two_moons(n, rotation_deg, noise, derive_seed(seed, 1))};
  p.target.domain = Domain::target;
  return p;
}

struct BlobsLayout {
  std::vector<std::vector<double>> means;  // K x d
  std::vector<double> direction;           // unit shift direction
};

/// Cluster means uniform in [-4, 4]^d and a shared unit shift direction; a pure function of the seed.
inline BlobsLayout blobs_layout(std::size_t k, std::size_t d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 7));
  BlobsLayout layout;
  layout.means.assign(k, std::vector<double>(d));
  for (auto& m : layout.means)
    for (auto& v : m) v = rng.uniform(-4.0, 4.0);
  layout.direction.resize(d);
  double norm = 0.0;
  for (auto& v : layout.direction) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : layout.direction) v /= norm;
  return layout;
}

inline Dataset blobs(std::size_t n, const BlobsLayout& layout, double shift, double stddev, std::uint64_t seed) {
  const std::size_t k = layout.means.size(), d = layout.direction.size();
  Rng rng(seed);
  Dataset out{Shape{d}, k, {}, {}, Domain::source, "blobs"};
  out.samples.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint16_t>(i % k);
    for (std::size_t j = 0; j < d; ++j) {
      out.samples.push_back(static_cast<float>(layout.means[label][j] + shift * layout.direction[j] + stddev * rng.normal()));
    }
    out.labels.push_back(label);
  }
  return out;
}

/// K unit-variance Gaussian clusters; the target translates every mean by
/// shift_magnitude along one shared random direction and scales the
/// covariance by 1.5.
inline DomainPair gen_blobs_pair(std::size_t n, std::size_t k, std::size_t d, double shift_magnitude, std::uint64_t seed) {
  if (k < 2) throw ValueError("blobs: need K >= 2");
  if (d < 2) throw ValueError("blobs: need d >= 2");
  if (n < 10 * k) throw ValueError("blobs: need at least 10 samples per class");
  const auto layout = blobs_layout(k, d, seed);
  DomainPair p{blobs(n, layout, 0.0, 1.0, derive_seed(seed, 0)),
               blobs(n, layout, shift_magnitude, std::sqrt(1.5), derive_seed(seed, 1))};
  p.target.domain = Domain::target;
  return p;
}

// Tiny raster glyphs ---------------------------------------------------------

inline constexpr std::size_t kGlyphSide = 16;

enum class Glyph : std::uint16_t { bar = 0, cross = 1, ring = 2, diagonal = 3 };

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

/// Renders one anti-aliased glyph with random placement, size, stroke width
/// and ink level, plus faint sensor noise. Values in [0, 1], row-major 16x16.
inline std::vector<float> render_glyph(Glyph g, Rng& rng) {
  const double cx = 7.5 + rng.uniform(-1.5, 1.5);
  const double cy = 7.5 + rng.uniform(-1.5, 1.5);
  const double half_width = rng.uniform(0.6, 1.1);
  const double ink = rng.uniform(0.75, 1.0);
  const double len = rng.uniform(3.5, 5.5);
  const bool mirrored = rng.bernoulli(0.5);
  std::vector<float> img(kGlyphSide * kGlyphSide);
  for (std::size_t r = 0; r < kGlyphSide; ++r) {
    for (std::size_t c = 0; c < kGlyphSide; ++c) {
      const double px = static_cast<double>(c), py = static_cast<double>(r);
      double dist = 0.0;
      switch (g) {
        case Glyph::bar:
          dist = detail::segment_distance(px, py, cx - len, cy, cx + len, cy);
          break;
        case Glyph::cross:
          dist = std::min(detail::segment_distance(px, py, cx - len, cy, cx + len, cy),
                          detail::segment_distance(px, py, cx, cy - len, cx, cy + len));
          break;
        case Glyph::ring:
          dist = std::abs(std::hypot(px - cx, py - cy) - (len - 0.5));
          break;
        case Glyph::diagonal: {
          const double s = mirrored ? -1.0 : 1.0;
          const double l = len * 0.8;
          dist = detail::segment_distance(px, py, cx - l, cy - s * l, cx + l, cy + s * l);
          break;
        }
      }
      const double cover = std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
      const double v = ink * cover + 0.03 * rng.normal();
      img[r * kGlyphSide + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

inline void invert_raster(std::span<float> pixels) {
  for (auto& v : pixels) v = 1.0f - v;
}

/// One domain of the glyph task. The target domain inverts intensities and
/// adds background noise (sigma 0.2), clamped to [0, 1].
inline Dataset tiny_digits(std::size_t n, Domain domain, std::uint64_t seed) {
  Rng rng(seed);
  const bool shifted = domain == Domain::target;
  Dataset d{Shape{1, kGlyphSide, kGlyphSide}, 4, {}, {}, domain, "tiny-digits"};
  d.samples.reserve(n * kGlyphSide * kGlyphSide);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint16_t>(i % 4);
    auto img = render_glyph(static_cast<Glyph>(label), rng);
    if (shifted) {
      invert_raster(img);
      for (auto& v : img) v = static_cast<float>(std::clamp(static_cast<double>(v) + 0.2 * rng.normal(), 0.0, 1.0));
    }
    d.samples.insert(d.samples.end(), img.begin(), img.end());
    d.labels.push_back(label);
  }
  return d;
}

/// Raster pair with K = 4 glyph classes (bar, cross, ring, diagonal).
inline DomainPair gen_tiny_digits_pair(std::size_t n, std::uint64_t seed) {
  if (n < 500) throw ValueError("tiny-digits: n must be at least 500, got " + std::to_string(n));
  return DomainPair{tiny_digits(n, Domain::source, derive_seed(seed, 0)), tiny_digits(n, Domain::target, derive_seed(seed, 1))};
}

}  // namespace faust

#pragma once

#include <openssl/evp.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faust/error.hpp"
#include "faust/ops.hpp"
#include "faust/rng.hpp"
#include "faust/tensor.hpp"

namespace faust {

enum class LayerKind { dense, conv2d, relu, flatten, dropout };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dropout: return "dropout";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "relu") return LayerKind::relu;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "dropout") return LayerKind::dropout;
  throw FormatError("unknown layer kind '" + s + "'");
}

/// Architecture-only description of a layer.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;      // dense: in features; conv2d: in channels
  std::size_t out = 0;     // dense: out features; conv2d: out channels
  std::size_t kernel = 0;  // conv2d: square kernel side
  double rate = 0.0;       // dropout

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 0.0}; }
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
    return {LayerKind::conv2d, in_ch, out_ch, k, 0.0};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0.0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, rate}; }

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape input_shape;  // per sample, without the batch axis
  std::size_t num_classes = 0;
  std::vector<LayerSpec> generator;
  std::vector<LayerSpec> head;

  bool operator==(const ModelSpec&) const = default;
};

/// G = dense(d, 64) relu dropout dense(64, 32) relu; H = dense(32, 32) relu dropout dense(32, K).
inline ModelSpec vector_model_spec(std::size_t input_dim, std::size_t num_classes, double generator_dropout = 0.1,
                                   double head_dropout = 0.4) {
  return ModelSpec{
      Shape{input_dim},
      num_classes,
      {LayerSpec::dense(input_dim, 64), LayerSpec::relu(), LayerSpec::dropout(generator_dropout),
       LayerSpec::dense(64, 32), LayerSpec::relu()},
      {LayerSpec::dense(32, 32), LayerSpec::relu(), LayerSpec::dropout(head_dropout), LayerSpec::dense(32, num_classes)},
  };
}

/// Two 3x3 valid convolutions (8 and 16 channels), flatten, dropout, dense to 32 features.
inline ModelSpec raster_model_spec(std::size_t height, std::size_t width, std::size_t num_classes,
                                   double generator_dropout = 0.1, double head_dropout = 0.4) {
  const std::size_t flat = 16 * (height - 4) * (width - 4);
  return ModelSpec{
      Shape{1, height, width},
      num_classes,
      {LayerSpec::conv2d(1, 8, 3), LayerSpec::relu(), LayerSpec::conv2d(8, 16, 3), LayerSpec::relu(),
       LayerSpec::flatten(), LayerSpec::dropout(generator_dropout), LayerSpec::dense(flat, 32)},
      {LayerSpec::dense(32, 32), LayerSpec::relu(), LayerSpec::dropout(head_dropout), LayerSpec::dense(32, num_classes)},
  };
}

template <typename T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  bool has_parameters() const { return spec.kind == LayerKind::dense || spec.kind == LayerKind::conv2d; }
};

enum class Mode { eval, train };

template <typename T>
class Model {
 public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Allocates parameters for `spec`: uniform(-b, b) weights with
  /// b = sqrt(6 / fan_in), biases uniform in +-1/sqrt(fan_in), drawn in
  /// declaration order.
  static Model build(const ModelSpec& spec, std::uint64_t seed) {
    validate(spec);
    Model m;
    m.spec_ = spec;
    Rng rng(seed);
    auto make = [&rng](const std::vector<LayerSpec>& specs) {
      std::vector<Layer<T>> layers;
      for (const auto& ls : specs) {
        Layer<T> layer{ls, {}, {}};
        if (ls.kind == LayerKind::dense || ls.kind == LayerKind::conv2d) {
          const Shape wshape = ls.kind == LayerKind::dense ? Shape{ls.out, ls.in}
                                                           : Shape{ls.out, ls.in, ls.kernel, ls.kernel};
          const double fan_in = static_cast<double>(numel(wshape) / ls.out);
          const double bound = std::sqrt(6.0 / fan_in);
          std::vector<T> w(numel(wshape));
          for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
          layer.weight = Tensor<T>(wshape, std::move(w));
          const double bias_bound = 1.0 / std::sqrt(fan_in);
          std::vector<T> b(ls.out);
          for (auto& v : b) v = static_cast<T>(rng.uniform(-bias_bound, bias_bound));
          layer.bias = Tensor<T>(Shape{ls.out}, std::move(b));
          layer.weight.set_requires_grad(true);
          layer.bias.set_requires_grad(true);
        }
        layers.push_back(std::move(layer));
      }
      return layers;
    };
    m.generator_ = make(spec.generator);
    m.head_ = make(spec.head);
    return m;
  }

  Model clone() const {
    Model m;
    m.spec_ = spec_;
    m.head_trainable_ = head_trainable_;
    auto copy = [](const std::vector<Layer<T>>& src) {
      std::vector<Layer<T>> dst;
      for (const auto& l : src) {
        Layer<T> c{l.spec, {}, {}};
        if (l.has_parameters()) {
          c.weight = l.weight.clone();
          c.bias = l.bias.clone();
        }
        dst.push_back(std::move(c));
      }
      return dst;
    };
    m.generator_ = copy(generator_);
    m.head_ = copy(head_);
    return m;
  }

  const ModelSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return spec_.input_shape; }
  std::size_t num_classes() const { return spec_.num_classes; }
  const std::vector<Layer<T>>& generator() const { return generator_; }
  const std::vector<Layer<T>>& head() const { return head_; }

  bool head_trainable() const { return head_trainable_; }

  /// Freezing also stops gradient accumulation into the head.
  void set_head_trainable(bool on) {
    head_trainable_ = on;
    for (auto& p : head_parameters()) p.set_requires_grad(on);
  }

  std::vector<Tensor<T>> generator_parameters() const { return collect(generator_); }
  std::vector<Tensor<T>> head_parameters() const { return collect(head_); }

  std::vector<Tensor<T>> parameters() const {
    auto all = generator_parameters();
    auto h = head_parameters();
    all.insert(all.end(), h.begin(), h.end());
    return all;
  }

  /// Parameters an optimizer may update.
  std::vector<Tensor<T>> trainable_parameters() const {
    return head_trainable_ ? parameters() : generator_parameters();
  }

  /// Parameter names in declaration order, matching parameters().
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    auto add = [&names](const std::vector<Layer<T>>& layers, const char* prefix) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].has_parameters()) continue;
        names.push_back(std::string(prefix) + "." + std::to_string(i) + ".weight");
        names.push_back(std::string(prefix) + "." + std::to_string(i) + ".bias");
      }
    };
    add(generator_, "generator");
    add(head_, "head");
    return names;
  }

  bool has_dropout() const {
    for (const auto* layers : {&generator_, &head_})
      for (const auto& l : *layers)
        if (l.spec.kind == LayerKind::dropout && l.spec.rate > 0.0) return true;
    return false;
  }

  /// z = G(x). In train mode dropout layers draw their masks from `rng`.
  Tensor<T> features(const Tensor<T>& x, Mode mode = Mode::eval, Rng* rng = nullptr) const {
    check_input(x);
    return run(generator_, x, mode, rng);
  }

  Tensor<T> head_forward(const Tensor<T>& z, Mode mode = Mode::eval, Rng* rng = nullptr) const {
    return run(head_, z, mode, rng);
  }

  /// H(G(x)), pre-softmax.
  Tensor<T> logits(const Tensor<T>& x, Mode mode = Mode::eval, Rng* rng = nullptr) const {
    return head_forward(features(x, mode, rng), mode, rng);
  }

  static void validate(const ModelSpec& spec) {
    if (spec.num_classes < 2) throw ValueError("model: need at least 2 classes");
    if (spec.input_shape.empty()) throw ValueError("model: empty input shape");
    for (const auto* layers : {&spec.generator, &spec.head})
      for (const auto& l : *layers) {
        if (l.kind == LayerKind::dropout && !(l.rate >= 0.0 && l.rate < 1.0)) {
          throw ValueError("model: dropout rate must lie in [0, 1), got " + std::to_string(l.rate));
        }
        if ((l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) && (l.in == 0 || l.out == 0)) {
          throw ValueError("model: zero-width layer");
        }
        if (l.kind == LayerKind::conv2d && l.kernel == 0) throw ValueError("model: zero conv kernel");
      }
  }

 private:
  static std::vector<Tensor<T>> collect(const std::vector<Layer<T>>& layers) {
    std::vector<Tensor<T>> ps;
    for (const auto& l : layers) {
      if (!l.has_parameters()) continue;
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  void check_input(const Tensor<T>& x) const {
    const auto& s = x.shape();
    if (s.size() != spec_.input_shape.size() + 1 || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), s.begin() + 1)) {
      throw ShapeError("forward: input shape " + to_string(s) + " does not match (batch, ...) + " +
                       to_string(spec_.input_shape));
    }
  }

  static Tensor<T> run(const std::vector<Layer<T>>& layers, Tensor<T> h, Mode mode, Rng* rng) {
    for (const auto& l : layers) {
      switch (l.spec.kind) {
        case LayerKind::dense:
          h = linear(h, l.weight, l.bias);
          break;
        case LayerKind::conv2d:
          h = conv2d(h, l.weight, l.bias);
          break;
        case LayerKind::relu:
          h = relu(h);
          break;
        case LayerKind::flatten:
          h = reshape(h, Shape{h.dim(0), h.size() / h.dim(0)});
          break;
        case LayerKind::dropout:
          if (mode == Mode::train && l.spec.rate > 0.0) {
            if (!rng) throw ValueError("forward: train-mode dropout needs a random stream");
            h = mul(h, dropout_mask<T>(h.shape(), l.spec.rate, *rng));
          }
          break;
      }
    }
    return h;
  }

 public:
  /// Inverted-dropout mask: element kept (scaled by 1/(1-rate)) when its
  /// uniform draw is >= rate; draws are taken in row-major order.
  template <typename U>
  static Tensor<U> dropout_mask(const Shape& shape, double rate, Rng& rng) {
    std::vector<U> m(numel(shape));
    const U keep = static_cast<U>(1.0 / (1.0 - rate));
    for (auto& v : m) v = rng.uniform() >= rate ? keep : U{0};
    return Tensor<U>(shape, std::move(m));
  }

 private:
  ModelSpec spec_;
  std::vector<Layer<T>> generator_;
  std::vector<Layer<T>> head_;
  bool head_trainable_ = true;
};

/// n_samples stochastic passes with every dropout layer active, stacked as
/// softmax outputs of shape (n_samples, batch, K). Pass i draws its masks
/// from derive_seed(seed, i).
template <typename T>
Tensor<T> mc_forward(const Model<T>& model, const Tensor<T>& x, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) {
    throw ValueError("mc_forward: need at least 2 samples for a standard deviation, got " + std::to_string(n_samples));
  }
  std::vector<Tensor<T>> passes;
  passes.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng(derive_seed(seed, i));
    passes.push_back(softmax(model.logits(x, Mode::train, &rng)));
  }
  return stack(passes);
}

namespace detail {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* p, std::size_t n) { EVP_DigestUpdate(ctx_, p, n); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      out += buf;
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace detail

inline std::string sha256_hex(std::string_view bytes) {
  detail::Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

/// Hex SHA-256 over the raw bytes of the given tensors, in order.
template <typename T>
std::string parameter_digest(const std::vector<Tensor<T>>& tensors) {
  detail::Sha256 h;
  for (const auto& t : tensors) h.update(t.data().data(), t.size() * sizeof(T));
  return h.hex();
}

}  // namespace faust

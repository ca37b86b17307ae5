#pragma once

// .fckpt layout (little-endian):
//   8 bytes   magic "FAUSTCKP"
//   u32       format version
//   u32       header length L
//   L bytes   JSON header: model architecture, dtype, tensor table, metadata
//   ...       raw tensors in header order, f32 or f64 per header dtype

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "faust/binary_io.hpp"
#include "faust/error.hpp"
#include "faust/nn.hpp"

namespace faust {

inline constexpr std::string_view kCheckpointMagic = "FAUSTCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Dtype { f32, f64 };

inline const char* to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

template <typename T>
constexpr Dtype native_dtype() {
  return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string source_dataset;
  bool head_trainable = true;

  bool operator==(const CheckpointMeta&) const = default;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exact for both on-disk dtypes
};

/// In-memory image of a checkpoint file.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Dtype dtype = Dtype::f32;
  ModelSpec model;
  std::vector<NamedTensor> tensors;
  CheckpointMeta meta;
};

namespace detail {

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::dense: j["in"] = l.in; j["out"] = l.out; break;
    case LayerKind::conv2d: j["in"] = l.in; j["out"] = l.out; j["kernel"] = l.kernel; break;
    case LayerKind::dropout: j["rate"] = l.rate; break;
    default: break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.in = j.value("in", std::size_t{0});
  l.out = j.value("out", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{0});
  l.rate = j.value("rate", 0.0);
  return l;
}

}  // namespace detail

inline nlohmann::json model_spec_to_json(const ModelSpec& m) {
  nlohmann::json g = nlohmann::json::array(), h = nlohmann::json::array();
  for (const auto& l : m.generator) g.push_back(detail::layer_to_json(l));
  for (const auto& l : m.head) h.push_back(detail::layer_to_json(l));
  return {{"input_shape", m.input_shape}, {"num_classes", m.num_classes}, {"generator", g}, {"head", h}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec m;
  m.input_shape = j.at("input_shape").get<Shape>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& l : j.at("generator")) m.generator.push_back(detail::layer_from_json(l));
  for (const auto& l : j.at("head")) m.head.push_back(detail::layer_from_json(l));
  return m;
}

/// Captures a model's parameters. The default dtype is the model's scalar type,
/// so a save/load cycle is bit-exact in either build profile.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, CheckpointMeta meta, Dtype dtype = native_dtype<T>()) {
  Checkpoint c;
  c.dtype = dtype;
  c.model = model.spec();
  meta.head_trainable = model.head_trainable();
  c.meta = std::move(meta);
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedTensor nt{names[i], params[i].shape(), {}};
    nt.values.reserve(params[i].size());
    for (T v : params[i].data()) {
      nt.values.push_back(dtype == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : static_cast<double>(v));
    }
    c.tensors.push_back(std::move(nt));
  }
  return c;
}

/// Rebuilds the architecture, then fills parameters by name and shape.
template <typename T>
Model<T> instantiate(const Checkpoint& c) {
  Model<T> model = Model<T>::build(c.model, 0);
  const auto names = model.parameter_names();
  auto params = model.parameters();
  if (names.size() != c.tensors.size()) {
    throw FormatError("checkpoint: architecture declares " + std::to_string(names.size()) + " tensors, file has " +
                      std::to_string(c.tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& nt = c.tensors[i];
    if (nt.name != names[i] || nt.shape != params[i].shape()) {
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + nt.name + "' " + to_string(nt.shape) +
                        ", expected '" + names[i] + "' " + to_string(params[i].shape()));
    }
    auto dst = params[i].mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(nt.values[k]);
  }
  model.set_head_trainable(c.meta.head_trainable);
  return model;
}

inline std::string encode_checkpoint(const Checkpoint& c) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : c.tensors) table.push_back({{"name", t.name}, {"shape", t.shape}});
  const nlohmann::json header{
      {"model", model_spec_to_json(c.model)},
      {"dtype", to_string(c.dtype)},
      {"tensors", table},
      {"metadata",
       {{"seed", c.meta.seed},
        {"epoch", c.meta.epoch},
        {"source_dataset", c.meta.source_dataset},
        {"head_trainable", c.meta.head_trainable}}},
  };
  const std::string text = header.dump();
  io::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(c.version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const auto& t : c.tensors) {
    for (double v : t.values) {
      if (c.dtype == Dtype::f32) {
        w.put<float>(static_cast<float>(v));
      } else {
        w.put<double>(v);
      }
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw MagicMismatch("checkpoint: bad magic bytes (not a .fckpt file)");
  }
  r.get_bytes(kCheckpointMagic.size());
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint: format version " + std::to_string(c.version) + ", reader supports " +
                          std::to_string(kCheckpointVersion));
  }
  const auto len = r.get<std::uint32_t>();
  const auto text = r.get_bytes(len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    c.model = model_spec_from_json(header.at("model"));
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw FormatError("checkpoint: unknown dtype '" + dtype + "'");
    c.dtype = dtype == "f32" ? Dtype::f32 : Dtype::f64;
    const auto& meta = header.at("metadata");
    c.meta.seed = meta.at("seed").get<std::uint64_t>();
    c.meta.epoch = meta.at("epoch").get<std::size_t>();
    c.meta.source_dataset = meta.at("source_dataset").get<std::string>();
    c.meta.head_trainable = meta.at("head_trainable").get<bool>();
    for (const auto& t : header.at("tensors")) c.tensors.push_back({t.at("name"), t.at("shape").get<Shape>(), {}});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  for (auto& t : c.tensors) {
    const auto n = numel(t.shape);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      t.values[i] = c.dtype == Dtype::f32 ? static_cast<double>(r.get<float>()) : r.get<double>();
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) { io::write_file(path, encode_checkpoint(c)); }

inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, CheckpointMeta meta = {}) {
  write_checkpoint(path, make_checkpoint(model, std::move(meta)));
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  return instantiate<T>(read_checkpoint(path));
}

}  // namespace faust

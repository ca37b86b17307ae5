#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "faust/augment.hpp"
#include "faust/checkpoint.hpp"
#include "faust/dataset.hpp"
#include "faust/error.hpp"
#include "faust/nn.hpp"
#include "faust/ops.hpp"
#include "faust/optim.hpp"
#include "faust/rng.hpp"

namespace faust {

/// Default smoothing when label smoothing is switched on.
inline constexpr double kDefaultLabelSmoothing = 0.1;

/// Soft targets (1 - eps) * onehot + eps / K.
template <typename T>
Tensor<T> smoothed_targets(std::span<const std::uint16_t> labels, std::size_t k, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw ValueError("label smoothing must lie in [0, 1)");
  std::vector<T> t(labels.size() * k, static_cast<T>(eps / static_cast<double>(k)));
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * k + labels[i]] += static_cast<T>(1.0 - eps);
  return Tensor<T>(Shape{labels.size(), k}, std::move(t));
}

/// Mean over rows of -sum_k target_k log softmax(logits)_k.
template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
  return neg(mean(sum_last(mul(targets, log_softmax(logits)))));
}

template <typename T>
std::vector<std::size_t> predict(const Model<T>& model, const Tensor<T>& x) {
  const auto logits = model.logits(x, Mode::eval);
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Fraction of correctly classified samples with an eval-mode forward.
template <typename T>
double accuracy(const Model<T>& model, const Dataset& d, std::size_t chunk = 512) {
  if (d.size() == 0) throw ValueError("accuracy: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + chunk); ++i) idx.push_back(i);
    const auto pred = predict(model, gather_batch<T>(d, idx));
    for (std::size_t j = 0; j < idx.size(); ++j) correct += pred[j] == d.labels[idx[j]];
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

inline ModelSpec default_model_spec(const Dataset& d) {
  if (d.is_raster()) return raster_model_spec(d.sample_shape[1], d.sample_shape[2], d.num_classes);
  if (d.sample_shape.size() != 1) throw ShapeError("no default architecture for sample shape " + to_string(d.sample_shape));
  return vector_model_spec(d.sample_shape[0], d.num_classes);
}

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  OptimConfig optim{Algorithm::sgd_momentum, 1e-2, 0.9, 0.9, 0.999, 1e-8, 5e-4, true, 0};
  double label_smoothing = 0.0;
  double val_fraction = 0.1;
  AugPolicy augment = [] {
    AugPolicy p;
    p.regime = Regime::weak;
    return p;
  }();
  std::uint64_t seed = 0;
  std::string dataset_id;
  std::optional<ModelSpec> model;  // default_model_spec(data) when unset
};

template <typename T>
struct PretrainResult {
  Model<T> model;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> val_history;
  Checkpoint checkpoint;
};

/// Trains H o G on labeled source data: cross-entropy with optional label
/// smoothing, weak augmentation, SGD with cosine decay, dropout active.
/// A random val_fraction of the samples is held out and the epoch with the best
/// validation accuracy is kept.
template <typename T>
PretrainResult<T> pretrain_source(const Dataset& data, const PretrainConfig& cfg) {
  data.validate(1);
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ValueError("pretrain: val_fraction must lie in (0, 1)");
  if (cfg.batch_size == 0) throw ValueError("pretrain: batch size must be positive");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, 0x5911));
  split_rng.shuffle(order.begin(), order.end());
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(data.size())));
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const Dataset val = data.subset(val_idx);

  Model<T> model = Model<T>::build(cfg.model ? *cfg.model : default_model_spec(data), derive_seed(cfg.seed, 0x1417));
  const std::size_t steps_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
  OptimConfig oc = cfg.optim;
  if (oc.cosine_decay && oc.total_steps == 0) oc.total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch);
  Optimizer<T> opt(model.trainable_parameters(), oc);
  AugPolicy policy = cfg.augment;
  policy.validate();

  PretrainResult<T> result{model.clone(), -1.0, 0, {}, {}};
  std::size_t step = 0;
  const std::size_t m = data.sample_size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5A, epoch));
    shuffle_rng.shuffle(train_idx.begin(), train_idx.end());
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      std::vector<T> xs;
      std::vector<std::uint16_t> ys;
      xs.reserve((end - start) * m);
      for (std::size_t j = start; j < end; ++j) {
        const auto id = train_idx[j];
        const auto s = transform_sample(data.sample(id), data.sample_shape, policy, derive_seed(cfg.seed, step, id));
        xs.insert(xs.end(), s.begin(), s.end());
        ys.push_back(data.labels[id]);
      }
      Shape shape{end - start};
      shape.insert(shape.end(), data.sample_shape.begin(), data.sample_shape.end());
      Rng dropout_rng(derive_seed(cfg.seed, 0xD0, step));
      const auto logits = model.logits(Tensor<T>(shape, std::move(xs)), Mode::train, &dropout_rng);
      const auto loss = soft_cross_entropy(logits, smoothed_targets<T>(ys, data.num_classes, cfg.label_smoothing));
      if (!std::isfinite(static_cast<double>(loss.item()))) throw DivergenceError(step, "pretrain: non-finite loss");
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    const double acc = accuracy(model, val);
    result.val_history.push_back(acc);
    if (acc > result.best_val_accuracy) {
      result.best_val_accuracy = acc;
      result.best_epoch = epoch;
      result.model = model.clone();
    }
  }
  const double floor = 1.0 / static_cast<double>(data.num_classes) + 0.1;
  if (result.best_val_accuracy < floor) {
    throw ConvergenceError("pretrain: best validation accuracy " + std::to_string(result.best_val_accuracy) +
                           " below " + std::to_string(floor));
  }
  result.checkpoint = make_checkpoint(result.model, CheckpointMeta{cfg.seed, result.best_epoch, cfg.dataset_id, true});
  return result;
}

}  // namespace faust

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "faust/augment.hpp"
#include "faust/dataset.hpp"
#include "faust/error.hpp"
#include "faust/losses.hpp"
#include "faust/nn.hpp"
#include "faust/optim.hpp"
#include "faust/pretrain.hpp"
#include "faust/rng.hpp"

namespace faust {

/// The (alpha, beta) search grid used for hyperparameter sweeps.
inline constexpr std::array<std::pair<double, double>, 5> kAlphaBetaGrid{
    {{1.0, 0.0}, {0.8, 0.2}, {0.5, 0.5}, {0.2, 0.8}, {0.0, 1.0}}};

struct AdaptConfig {
  LossWeights weights;
  std::size_t views = 2;
  double temperature = kPseudoLabelTemperature;
  OptimConfig optim{Algorithm::adam, 2e-4, 0.9, 0.9, 0.999, 1e-8, 5e-4, false, 0};
  std::size_t batch_size = 64;
  // Desk-scale budget. On the toy tasks target accuracy peaks within a few
  // epochs and then decays while the loss keeps falling.
  std::size_t max_epochs = 5;
  std::size_t early_stop_window = 10;
  double early_stop_tolerance = 1e-4;
  std::size_t mc_samples = 10;
  AugPolicy augment;
  std::uint64_t seed = 0;
  bool detach_targets = true;
  bool view_dropout = true;  // views run in train mode when gamma = 1

  void validate() const {
    weights.validate();
    if (views < 1) throw ValueError("adapt: views must be at least 1");
    if (!(temperature > 0.0)) throw ValueError("adapt: temperature must be positive");
    if (batch_size == 0) throw ValueError("adapt: batch size must be positive");
    if (weights.gamma == 1 && mc_samples < 2) throw ValueError("adapt: need at least 2 MC samples when gamma = 1");
    if (early_stop_window == 0) throw ValueError("adapt: early-stop window must be positive");
    augment.validate();
  }
};

inline nlohmann::json to_json(const AugPolicy& p) {
  return {{"regime", to_string(p.regime)},
          {"n_views", p.n_views},
          {"seed", p.seed},
          {"raster_flip_prob", p.raster_flip_prob},
          {"vector_flip_prob", p.vector_flip_prob},
          {"shift_fraction", p.shift_fraction},
          {"ops_per_sample", p.ops_per_sample},
          {"jitter_min", p.jitter_min},
          {"jitter_max", p.jitter_max},
          {"coord_drop_fraction", p.coord_drop_fraction},
          {"max_rotation_deg", p.max_rotation_deg},
          {"max_translate_fraction", p.max_translate_fraction},
          {"raster_max_rotation_deg", p.raster_max_rotation_deg},
          {"contrast_min", p.contrast_min},
          {"contrast_max", p.contrast_max},
          {"max_brightness", p.max_brightness},
          {"noise_min", p.noise_min},
          {"noise_max", p.noise_max},
          {"cutout_fraction", p.cutout_fraction},
          {"raster_invert", p.raster_invert}};
}

/// Fields missing from `j` keep the values already in `p`.
inline void merge_json(const nlohmann::json& j, AugPolicy& p) {
  if (j.contains("regime")) p.regime = regime_from_string(j.at("regime").get<std::string>());
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_views", p.n_views);
  get("seed", p.seed);
  get("raster_flip_prob", p.raster_flip_prob);
  get("vector_flip_prob", p.vector_flip_prob);
  get("shift_fraction", p.shift_fraction);
  get("ops_per_sample", p.ops_per_sample);
  get("jitter_min", p.jitter_min);
  get("jitter_max", p.jitter_max);
  get("coord_drop_fraction", p.coord_drop_fraction);
  get("max_rotation_deg", p.max_rotation_deg);
  get("max_translate_fraction", p.max_translate_fraction);
  get("raster_max_rotation_deg", p.raster_max_rotation_deg);
  get("contrast_min", p.contrast_min);
  get("contrast_max", p.contrast_max);
  get("max_brightness", p.max_brightness);
  get("noise_min", p.noise_min);
  get("noise_max", p.noise_max);
  get("cutout_fraction", p.cutout_fraction);
  get("raster_invert", p.raster_invert);
}

inline nlohmann::json to_json(const OptimConfig& o) {
  return {{"algorithm", to_string(o.algorithm)}, {"learning_rate", o.learning_rate}, {"momentum", o.momentum},
          {"beta1", o.beta1},                    {"beta2", o.beta2},                 {"adam_epsilon", o.adam_epsilon},
          {"weight_decay", o.weight_decay},      {"cosine_decay", o.cosine_decay},   {"total_steps", o.total_steps}};
}

inline void merge_json(const nlohmann::json& j, OptimConfig& o) {
  if (j.contains("algorithm")) o.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("learning_rate", o.learning_rate);
  get("momentum", o.momentum);
  get("beta1", o.beta1);
  get("beta2", o.beta2);
  get("adam_epsilon", o.adam_epsilon);
  get("weight_decay", o.weight_decay);
  get("cosine_decay", o.cosine_decay);
  get("total_steps", o.total_steps);
}

inline nlohmann::json to_json(const AdaptConfig& c) {
  return {{"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"gamma", c.weights.gamma},
          {"inter_weight", c.weights.inter},
          {"views", c.views},
          {"temperature", c.temperature},
          {"optimizer", to_json(c.optim)},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"early_stop_window", c.early_stop_window},
          {"early_stop_tolerance", c.early_stop_tolerance},
          {"mc_samples", c.mc_samples},
          {"augment", to_json(c.augment)},
          {"seed", c.seed},
          {"detach_targets", c.detach_targets},
          {"view_dropout", c.view_dropout}};
}

inline void merge_json(const nlohmann::json& j, AdaptConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("alpha", c.weights.alpha);
  get("beta", c.weights.beta);
  get("gamma", c.weights.gamma);
  get("inter_weight", c.weights.inter);
  get("views", c.views);
  get("temperature", c.temperature);
  if (j.contains("optimizer")) merge_json(j.at("optimizer"), c.optim);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("early_stop_window", c.early_stop_window);
  get("early_stop_tolerance", c.early_stop_tolerance);
  get("mc_samples", c.mc_samples);
  if (j.contains("augment")) merge_json(j.at("augment"), c.augment);
  get("seed", c.seed);
  get("detach_targets", c.detach_targets);
  get("view_dropout", c.view_dropout);
}

// ---------------------------------------------------------------------------
// Objective

/// Eval-mode pass over the clean batch: z = G(x), p = softmax(H(z)).
template <typename T>
struct CleanPass {
  Tensor<T> z;
  Tensor<T> p;
};

template <typename T>
CleanPass<T> clean_pass(const Model<T>& model, const Tensor<T>& x) {
  auto z = model.features(x, Mode::eval);
  auto p = softmax(model.head_forward(z, Mode::eval));
  return {z, p};
}

/// In-batch prototypes and sharpened pseudo-labels. With `detach` the targets
/// are constants for differentiation.
template <typename T>
Tensor<T> prototype_targets(const CleanPass<T>& clean, double temperature, bool detach) {
  const auto z = detach ? clean.z.detach() : clean.z;
  const auto p = detach ? clean.p.detach() : clean.p;
  return pseudo_labels(z, compute_prototypes(z, p), static_cast<T>(temperature));
}

/// Builds every loss term for one mini-batch given the clean pass, targets `s`
/// and the augmented views (v * batch samples, view-major). Dropout stays
/// disabled unless gamma = 1; then views run in train mode (unless
/// cfg.view_dropout is off) and the MC term is evaluated.
template <typename T>
LossTerms<T> faust_objective(const Model<T>& model, const Tensor<T>& clean_x, const CleanPass<T>& clean,
                             const Tensor<T>& s, const Tensor<T>& views_x, std::size_t n_views, const AdaptConfig& cfg,
                             std::uint64_t step_seed, std::size_t* mc_passes = nullptr) {
  const std::size_t b = clean.z.dim(0), d = clean.z.dim(1), k = clean.p.dim(1);
  if (views_x.dim(0) != n_views * b) {
    throw ShapeError("faust_objective: " + std::to_string(views_x.dim(0)) + " view samples for " + std::to_string(n_views) +
                     " views of " + std::to_string(b));
  }
  const Mode view_mode = cfg.weights.gamma == 1 && cfg.view_dropout ? Mode::train : Mode::eval;
  Rng view_rng(derive_seed(step_seed, 0xF1E3));
  const auto z_views = model.features(views_x, view_mode, &view_rng);
  const auto p_views = softmax(model.head_forward(z_views, view_mode, &view_rng));

  LossTerms<T> t;
  t.inter = inter_loss(s, reshape(p_views, Shape{n_views, b, k}));
  t.intra = intra_loss(clean.z, reshape(z_views, Shape{n_views, b, d}));
  t.entropy = entropy_loss(clean.p);
  if (cfg.weights.gamma == 1) {
    t.epistemic = epistemic_loss(mc_forward(model, clean_x, cfg.mc_samples, derive_seed(step_seed, 0x3C)));
    if (mc_passes) *mc_passes += cfg.mc_samples;
  } else {
    t.epistemic = Tensor<T>::scalar(T{0});
  }
  t.total = total_loss(t.inter, t.intra, t.entropy, t.epistemic, cfg.weights);
  return t;
}

template <typename T>
LossReport to_report(const LossTerms<T>& t, const LossWeights& w, std::size_t mc_passes) {
  return LossReport{static_cast<double>(t.inter.item()),   static_cast<double>(t.intra.item()),
                    static_cast<double>(t.entropy.item()), static_cast<double>(t.epistemic.item()),
                    static_cast<double>(t.total.item()),   w,
                    mc_passes};
}

/// One adaptation update on an unlabeled mini-batch:
///   clean eval pass -> prototypes -> pseudo-labels -> view pass -> losses
///   -> backward -> optimizer step on the generator.
/// `sample_ids` identify the samples for the per-sample augmentation streams.
template <typename T>
LossReport adapt_step(Model<T>& model, Optimizer<T>& opt, std::span<const float> batch_samples,
                      std::span<const std::size_t> sample_ids, const AdaptConfig& cfg, std::size_t step) {
  if (model.head_trainable()) throw Error("adapt_step: the head classifier must be frozen");
  const std::size_t k = model.num_classes();
  if (sample_ids.size() < k) {
    throw ValueError("adapt_step: batch of " + std::to_string(sample_ids.size()) + " is smaller than K = " +
                     std::to_string(k) + "; resample with a batch size of at least K");
  }
  const std::uint64_t step_seed = derive_seed(cfg.seed, 0xADA7, step);
  AugPolicy policy = cfg.augment;
  policy.n_views = cfg.views;
  const auto vb = make_views(batch_samples, model.input_shape(), sample_ids, policy, derive_seed(step_seed, 0xA6));

  const auto x = vb.template clean_tensor<T>();
  const auto clean = clean_pass(model, x);
  const auto s = prototype_targets(clean, cfg.temperature, cfg.detach_targets);
  std::size_t mc = 0;
  const auto terms = faust_objective(model, x, clean, s, vb.template views_tensor<T>(), cfg.views, cfg, step_seed, &mc);
  const auto report = to_report(terms, cfg.weights, mc);
  if (!std::isfinite(report.total)) throw DivergenceError(step, "adapt: non-finite total loss");
  opt.zero_grad();
  terms.total.backward();
  opt.step();
  return report;
}

// ---------------------------------------------------------------------------
// Run

struct StepRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossReport report;
  double learning_rate = 0.0;
};

struct EpochRow {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  std::optional<double> target_accuracy;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<StepRow> steps;
  std::vector<EpochRow> epochs;

  /// One JSON object per line: step rows then epoch rows interleaved in run
  /// order. Wall-clock is left out so identical runs produce identical bytes.
  std::string to_jsonl() const {
    std::ostringstream os;
    std::size_t e = 0;
    auto flush_epoch = [&](const EpochRow& r) {
      nlohmann::json j{{"type", "epoch"}, {"epoch", r.epoch}, {"mean_total", r.mean_total}};
      j["target_accuracy"] = r.target_accuracy ? nlohmann::json(*r.target_accuracy) : nlohmann::json(nullptr);
      os << j.dump() << '\n';
    };
    for (const auto& s : steps) {
      while (e < epochs.size() && epochs[e].epoch < s.epoch) flush_epoch(epochs[e++]);
      const nlohmann::json j{{"type", "step"},
                             {"step", s.step},
                             {"epoch", s.epoch},
                             {"L_i", s.report.inter},
                             {"L_f", s.report.intra},
                             {"L_e", s.report.entropy},
                             {"L_u", s.report.epistemic},
                             {"total", s.report.total},
                             {"lr", s.learning_rate}};
      os << j.dump() << '\n';
    }
    while (e < epochs.size()) flush_epoch(epochs[e++]);
    return os.str();
  }

  std::vector<double> epoch_seconds() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.seconds);
    return out;
  }
};

template <typename T>
struct AdaptResult {
  Model<T> model;
  RunLog log;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Moving-average convergence test: with W = window, stop once the mean of the
/// last W epoch losses improves on the previous (shifted by one) W-mean by less
/// than `tolerance`.
inline bool converged(const std::vector<double>& epoch_losses, std::size_t window, double tolerance) {
  const std::size_t n = epoch_losses.size();
  if (n < window + 1) return false;
  double now = 0.0, before = 0.0;
  for (std::size_t i = n - window; i < n; ++i) now += epoch_losses[i];
  for (std::size_t i = n - window - 1; i < n - 1; ++i) before += epoch_losses[i];
  return (before - now) / static_cast<double>(window) < tolerance;
}

/// Optional per-epoch probe, e.g. target accuracy on a separate labeled split.
/// The engine only sees the returned number.
template <typename T>
using EpochProbe = std::function<double(const Model<T>&)>;

/// Source-free adaptation. Starts from a copy of `source`, freezes its head,
/// and trains the generator on shuffled mini-batches of `target` until
/// max_epochs or convergence. Returns the lowest-loss epoch's model.
template <typename T>
AdaptResult<T> adapt_run(const Model<T>& source, const UnlabeledSet& target, const AdaptConfig& cfg,
                         const EpochProbe<T>& probe = {}) {
  cfg.validate();
  if (target.sample_shape != source.input_shape()) {
    throw ShapeError("adapt: target samples " + to_string(target.sample_shape) + " do not match model input " +
                     to_string(source.input_shape()));
  }
  const std::size_t k = source.num_classes();
  if (target.size() < k) throw ValueError("adapt: target set smaller than K");

  Model<T> model = source.clone();
  model.set_head_trainable(false);
  AdaptResult<T> result{source.clone(), {}, 0, 0, false};
  if (cfg.max_epochs == 0) return result;

  const std::size_t batch = std::max(cfg.batch_size, k);
  std::size_t steps_per_epoch = target.size() / batch;
  if (target.size() % batch >= k) ++steps_per_epoch;
  OptimConfig oc = cfg.optim;
  if (oc.cosine_decay && oc.total_steps == 0) oc.total_steps = std::max<std::size_t>(1, cfg.max_epochs * steps_per_epoch);
  Optimizer<T> opt(model.generator_parameters(), oc);

  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> epoch_losses;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  const std::size_t m = target.sample_size();
  std::vector<float> xs;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5F, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      if (end - start < k) break;  // remainder too small to populate K prototypes
      const std::span<const std::size_t> ids(order.data() + start, end - start);
      xs.clear();
      for (auto id : ids) {
        const auto s = target.sample(id);
        xs.insert(xs.end(), s.begin(), s.end());
      }
      const double lr = opt.current_rate();
      const auto report = adapt_step(model, opt, xs, ids, cfg, step);
      result.log.steps.push_back({step, epoch, report, lr});
      loss_sum += report.total;
      ++n_steps;
      ++step;
    }
    const double mean_total = loss_sum / static_cast<double>(std::max<std::size_t>(1, n_steps));
    epoch_losses.push_back(mean_total);
    EpochRow row{epoch, mean_total, std::nullopt, 0.0};
    if (probe) row.target_accuracy = probe(model);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(row);
    result.epochs_run = epoch + 1;
    if (mean_total < best_loss) {
      best_loss = mean_total;
      result.best_epoch = epoch;
      result.model = model.clone();
    }
    if (converged(epoch_losses, cfg.early_stop_window, cfg.early_stop_tolerance)) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

/// Accuracy after applying `perturbation` once per sample (seeded), eval mode.
template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, Regime perturbation, std::uint64_t seed = 0,
                const AugPolicy& policy = {}) {
  if (data.size() == 0) throw ValueError("evaluate: empty dataset");
  if (perturbation == Regime::none) return accuracy(model, data);
  return accuracy(model, perturb(data, perturbation, seed, policy));
}

}  // namespace faust

#pragma once

// Desk-scale experiment harness: task construction, ablation presets and
// repeated source->target runs. Shared by the CLI and the acceptance checks.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "faust/adapt.hpp"
#include "faust/augment.hpp"
#include "faust/dataset.hpp"
#include "faust/error.hpp"
#include "faust/pretrain.hpp"

namespace faust {

enum class Family { two_moons, blobs, tiny_digits };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::two_moons: return "two-moons";
    case Family::blobs: return "blobs";
    case Family::tiny_digits: return "tiny-digits";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "two-moons") return Family::two_moons;
  if (s == "blobs") return Family::blobs;
  if (s == "tiny-digits") return Family::tiny_digits;
  throw ValueError("unknown dataset family '" + s + "' (expected two-moons, blobs or tiny-digits)");
}

struct TaskSpec {
  Family family = Family::two_moons;
  std::size_t n = 2000;
  double rotation_deg = 40.0;  // two-moons
  double noise = 0.1;          // two-moons
  double shift = 3.0;          // blobs
  std::size_t classes = 4;     // blobs
  std::size_t dim = 8;         // blobs

  std::string name() const {
    std::ostringstream os;
    os << to_string(family);
    if (family == Family::two_moons) os << "-rot" << rotation_deg;
    if (family == Family::blobs) os << "-shift" << shift;
    return os.str();
  }
};

inline DomainPair generate_pair(const TaskSpec& t, std::uint64_t seed) {
  switch (t.family) {
    case Family::two_moons: return gen_two_moons_pair(t.n, t.rotation_deg, t.noise, seed);
    case Family::blobs: return gen_blobs_pair(t.n, t.classes, t.dim, t.shift, seed);
    case Family::tiny_digits: return gen_tiny_digits_pair(t.n, seed);
  }
  throw ValueError("unknown family");
}

/// A labeled target split drawn independently of the adaptation set, used
/// for evaluation only.
inline Dataset generate_target_eval(const TaskSpec& t, std::uint64_t seed) {
  Dataset d;
  switch (t.family) {
    case Family::two_moons: d = two_moons(t.n, t.rotation_deg, t.noise, derive_seed(seed, 2)); break;
    case Family::blobs:
      d = blobs(t.n, blobs_layout(t.classes, t.dim, seed), t.shift, std::sqrt(1.5), derive_seed(seed, 2));
      break;
    case Family::tiny_digits: d = tiny_digits(t.n, Domain::target, derive_seed(seed, 2)); break;
  }
  d.domain = Domain::target;
  return d;
}

struct TaskData {
  Dataset source;
  Dataset target;       // adaptation set; only its unlabeled() view reaches the engine
  Dataset target_eval;  // held-out labeled split for reporting
};

inline TaskData prepare_task(const TaskSpec& t, std::uint64_t seed) {
  auto pair = generate_pair(t, seed);
  return {std::move(pair.source), std::move(pair.target), generate_target_eval(t, seed)};
}

// ---------------------------------------------------------------------------
// Ablation presets, listed in report row order.

enum class Preset { entropy_only, epistemic_only, consistency_only, faust, faust_u };

inline constexpr std::array<Preset, 5> kAblationRows{Preset::entropy_only, Preset::epistemic_only,
                                                      Preset::consistency_only, Preset::faust, Preset::faust_u};

inline std::string to_string(Preset p) {
  switch (p) {
    case Preset::entropy_only: return "entropy-only";
    case Preset::epistemic_only: return "epistemic-only";
    case Preset::consistency_only: return "consistency-only";
    case Preset::faust: return "faust";
    case Preset::faust_u: return "faust-u";
  }
  return "?";
}

/// Row label used in ablation reports.
inline std::string row_label(Preset p) {
  switch (p) {
    case Preset::entropy_only: return "L_e-only";
    case Preset::epistemic_only: return "L_u-only";
    case Preset::consistency_only: return "L_i+L_f";
    case Preset::faust: return "FAUST";
    case Preset::faust_u: return "FAUST+U";
  }
  return "?";
}

inline Preset preset_from_string(const std::string& s) {
  for (auto p : kAblationRows)
    if (to_string(p) == s) return p;
  throw ValueError("unknown preset '" + s +
                   "' (expected entropy-only, epistemic-only, consistency-only, faust or faust-u)");
}

/// Loss weights for a preset. alpha and beta of the base config are kept for
/// the presets that use them.
inline AdaptConfig apply_preset(AdaptConfig cfg, Preset p) {
  auto& w = cfg.weights;
  switch (p) {
    case Preset::entropy_only: w = {0.0, 0.0, 1.0, 0}; break;
    case Preset::epistemic_only: w = {0.0, 0.0, 0.0, 1}; break;
    case Preset::consistency_only: w = {1.0, w.alpha, 0.0, 0}; break;
    case Preset::faust: w = {1.0, w.alpha, w.beta, 0}; break;
    case Preset::faust_u: w = {1.0, w.alpha, w.beta, 1}; break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Trials

struct PerturbedAccuracy {
  double none = 0.0;
  double weak = 0.0;
  double strong = 0.0;
  double drop() const { return none - strong; }
};

template <typename T>
PerturbedAccuracy evaluate_all(const Model<T>& model, const Dataset& d, std::uint64_t seed) {
  return {evaluate(model, d, Regime::none, seed), evaluate(model, d, Regime::weak, seed),
          evaluate(model, d, Regime::strong, seed)};
}

struct TrialResult {
  std::uint64_t seed = 0;
  PerturbedAccuracy source;
  PerturbedAccuracy adapted;
  std::size_t epochs_run = 0;
  double seconds = 0.0;
};

/// Source model for a task and seed; shared by every preset of one seed.
template <typename T>
Model<T> pretrain_for_task(const TaskData& data, const PretrainConfig& base, std::uint64_t seed) {
  PretrainConfig pc = base;
  pc.seed = derive_seed(seed, 0x50);
  return pretrain_source<T>(data.source, pc).model;
}

template <typename T>
TrialResult run_adaptation_trial(const Model<T>& source, const TaskData& data, AdaptConfig cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.seed = derive_seed(seed, 0xAD);
  const auto eval_seed = derive_seed(seed, 0xE7);
  TrialResult r;
  r.seed = seed;
  r.source = evaluate_all(source, data.target_eval, eval_seed);
  auto run = adapt_run(source, data.target.unlabeled(), cfg);
  r.adapted = evaluate_all(run.model, data.target_eval, eval_seed);
  r.epochs_run = run.epochs_run;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// One report row: task, preset label, accuracy mean and std over repeats.
struct ReportRow {
  std::string task;
  std::string preset;
  Summary accuracy;
};

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "task,preset,accuracy_mean,accuracy_std\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : rows) os << r.task << ',' << r.preset << ',' << r.accuracy.mean << ',' << r.accuracy.std << '\n';
  return os.str();
}

}  // namespace faust

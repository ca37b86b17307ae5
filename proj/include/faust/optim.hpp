#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "faust/error.hpp"
#include "faust/tensor.hpp"

namespace faust {

enum class Algorithm { sgd_momentum, adam };

inline const char* to_string(Algorithm a) { return a == Algorithm::adam ? "adam" : "sgd"; }

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "adam") return Algorithm::adam;
  if (s == "sgd" || s == "sgd-momentum") return Algorithm::sgd_momentum;
  throw ValueError("unknown optimizer '" + s + "'");
}

struct OptimConfig {
  Algorithm algorithm = Algorithm::adam;
  double learning_rate = 2e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 5e-4;
  bool cosine_decay = false;
  std::size_t total_steps = 0;  // cosine horizon
};

/// lr0 * (1 + cos(pi * t / total)) / 2, held at 0 beyond the horizon.
inline double cosine_rate(double initial, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return initial;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// SGD with heavy-ball momentum or Adam over a fixed parameter list.
///
/// SGD:  v <- mu v + g + wd theta;  theta <- theta - lr v
/// Adam: g' = g + wd theta, bias-corrected first/second moments.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<Tensor<T>> params, OptimConfig config) : params_(std::move(params)), config_(config) {
    if (config_.cosine_decay && config_.total_steps == 0) throw ValueError("optimizer: cosine decay needs total_steps");
    if (!(config_.learning_rate >= 0.0)) throw ValueError("optimizer: negative learning rate");
    for (const auto& p : params_) {
      first_.emplace_back(p.size(), 0.0);
      if (config_.algorithm == Algorithm::adam) second_.emplace_back(p.size(), 0.0);
    }
  }

  const OptimConfig& config() const { return config_; }
  std::size_t steps_taken() const { return step_; }

  /// Rate applied by the next step().
  double current_rate() const {
    return config_.cosine_decay ? cosine_rate(config_.learning_rate, step_, config_.total_steps) : config_.learning_rate;
  }

  void step() {
    for (const auto& p : params_) {
      if (!p.has_grad()) throw Error("optimizer: step before backward (parameter without gradient)");
    }
    const double lr = current_rate();
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto theta = params_[k].mutable_data();
      const auto grad = params_[k].grad();
      auto& m = first_[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = static_cast<double>(grad[i]) + config_.weight_decay * static_cast<double>(theta[i]);
        if (config_.algorithm == Algorithm::sgd_momentum) {
          m[i] = config_.momentum * m[i] + g;
          theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * m[i]);
        } else {
          auto& v = second_[k];
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * mhat / (std::sqrt(vhat) + config_.adam_epsilon));
        }
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  OptimConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

}  // namespace faust

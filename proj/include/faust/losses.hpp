#pragma once

// Adaptation objectives. Shapes: features z (batch, d), predictions p
// (batch, K), view stacks (v, batch, ...), MC stacks (n, batch, K).
// Every batch-level loss is an arithmetic mean over the mini-batch.

#include <cmath>
#include <string>

#include "faust/error.hpp"
#include "faust/ops.hpp"
#include "faust/tensor.hpp"

namespace faust {

/// Default sharpening temperature for pseudo-labels.
inline constexpr double kPseudoLabelTemperature = 0.025;

/// 1 - <a, b> / (||a|| ||b||) over the last axis, with floored norms.
template <typename T>
Tensor<T> cosine_dissimilarity(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("cosine_dissimilarity", a.shape(), b.shape());
  auto sim = sum_last(mul(l2_normalize(a), l2_normalize(b)));
  return add_scalar(neg(sim), T{1});
}

/// Intra-space consistency: mean over views and samples of D(z, z_view).
template <typename T>
Tensor<T> intra_loss(const Tensor<T>& z, const Tensor<T>& z_views) {
  detail::require_rank("intra_loss", z.shape(), 2);
  detail::require_rank("intra_loss", z_views.shape(), 3);
  if (z_views.dim(1) != z.dim(0) || z_views.dim(2) != z.dim(1)) detail::shape_mismatch("intra_loss", z.shape(), z_views.shape());
  return mean(cosine_dissimilarity(repeat(z, z_views.dim(0)), z_views));
}

/// Confidence-weighted prototypes, one row per class: c_k = sum_j p_jk z_j.
/// Returned as (K, d); the columns of the conventional prototype matrix C.
template <typename T>
Tensor<T> compute_prototypes(const Tensor<T>& z, const Tensor<T>& p) {
  detail::require_rank("compute_prototypes", z.shape(), 2);
  detail::require_rank("compute_prototypes", p.shape(), 2);
  if (z.dim(0) != p.dim(0)) detail::shape_mismatch("compute_prototypes", z.shape(), p.shape());
  return matmul(transpose(p), z);
}

/// Soft nearest-prototype labels: softmax of cosine similarities between the
/// normalized features and normalized prototypes, divided by `temperature`.
template <typename T>
Tensor<T> pseudo_labels(const Tensor<T>& z, const Tensor<T>& prototypes, T temperature = static_cast<T>(kPseudoLabelTemperature)) {
  detail::require_rank("pseudo_labels", z.shape(), 2);
  detail::require_rank("pseudo_labels", prototypes.shape(), 2);
  if (prototypes.dim(0) < 2) throw ValueError("pseudo_labels: need at least 2 prototypes");
  if (prototypes.dim(1) != z.dim(1)) detail::shape_mismatch("pseudo_labels", z.shape(), prototypes.shape());
  if (!(temperature > T{0})) throw ValueError("pseudo_labels: temperature must be positive");
  auto sims = matmul(l2_normalize(z), transpose(l2_normalize(prototypes)));
  return softmax(sims, temperature);
}

/// Inter-space consistency: mean over views and samples of the cross-entropy
/// -sum_k s_k log p_k, with log arguments floored at 1e-12.
template <typename T>
Tensor<T> inter_loss(const Tensor<T>& s, const Tensor<T>& p_views) {
  detail::require_rank("inter_loss", s.shape(), 2);
  detail::require_rank("inter_loss", p_views.shape(), 3);
  if (p_views.dim(1) != s.dim(0) || p_views.dim(2) != s.dim(1)) detail::shape_mismatch("inter_loss", s.shape(), p_views.shape());
  auto ce = sum_last(mul(repeat(s, p_views.dim(0)), log_clamped(p_views)));
  return neg(mean(ce));
}

/// Mean Shannon entropy (nats) of the rows of p.
template <typename T>
Tensor<T> entropy_loss(const Tensor<T>& p) {
  detail::require_rank("entropy_loss", p.shape(), 2);
  return neg(mean(sum_last(mul(p, log_clamped(p)))));
}

/// Epistemic uncertainty: batch mean of the L2 norm of the per-class sample
/// standard deviation across the MC axis.
template <typename T>
Tensor<T> epistemic_loss(const Tensor<T>& p_mc) {
  detail::require_rank("epistemic_loss", p_mc.shape(), 3);
  if (p_mc.dim(0) < 2) throw ValueError("epistemic_loss: need at least 2 MC samples, got " + std::to_string(p_mc.dim(0)));
  return mean(l2_norm(std_first(p_mc)));
}

/// Weights of the adaptation objective
///   inter * L_i + alpha * L_f + beta * L_e + gamma * L_u.
/// `inter` is 1 for the method itself; ablations switch it off.
struct LossWeights {
  double inter = 1.0;
  double alpha = 0.5;
  double beta = 0.5;
  int gamma = 0;

  void validate() const {
    if (!(alpha >= 0.0)) throw ValueError("loss weights: alpha must be non-negative, got " + std::to_string(alpha));
    if (!(beta >= 0.0)) throw ValueError("loss weights: beta must be non-negative, got " + std::to_string(beta));
    if (gamma != 0 && gamma != 1) throw ValueError("loss weights: gamma must be 0 or 1, got " + std::to_string(gamma));
    if (!(inter >= 0.0)) throw ValueError("loss weights: inter weight must be non-negative");
  }
};

/// Scalar values of one step's objective.
struct LossReport {
  double inter = 0.0;       // L_i
  double intra = 0.0;       // L_f
  double entropy = 0.0;     // L_e
  double epistemic = 0.0;   // L_u (0 when gamma = 0)
  double total = 0.0;
  LossWeights weights;
  std::size_t mc_passes = 0;  // stochastic forward passes drawn for L_u
};

/// Loss terms still on the tape.
template <typename T>
struct LossTerms {
  Tensor<T> inter;
  Tensor<T> intra;
  Tensor<T> entropy;
  Tensor<T> epistemic;  // scalar zero when gamma = 0
  Tensor<T> total;
};

/// Weighted sum of the four terms. With gamma = 0 the epistemic term is not
/// read, so callers may leave it unevaluated.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& inter, const Tensor<T>& intra, const Tensor<T>& entropy, const Tensor<T>& epistemic,
                     const LossWeights& w) {
  w.validate();
  auto total = scale(inter, static_cast<T>(w.inter));
  total = add(total, scale(intra, static_cast<T>(w.alpha)));
  total = add(total, scale(entropy, static_cast<T>(w.beta)));
  if (w.gamma == 1) total = add(total, epistemic);
  return total;
}

}  // namespace faust

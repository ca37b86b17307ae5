#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "faust/tensor.hpp"

namespace faust {

/// Floor applied to L2-norm denominators.
inline constexpr double kNormEpsilon = 1e-12;
/// Floor applied to arguments of log in entropy-type losses.
inline constexpr double kLogFloor = 1e-12;

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_mismatch(op, a, b);
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " + to_string(s));
  }
}

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major matrix view over contiguous storage.
template <typename T>
auto cmat(T* p, std::size_t rows, std::size_t cols) {
  using M = std::conditional_t<std::is_const_v<T>, const RowMajorMatrix<std::remove_const_t<T>>, RowMajorMatrix<T>>;
  return Eigen::Map<M>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
auto crow(T* p, std::size_t n) {
  using V = Eigen::Matrix<std::remove_const_t<T>, 1, Eigen::Dynamic>;
  using M = std::conditional_t<std::is_const_v<T>, const V, V>;
  return Eigen::Map<M>(p, static_cast<Eigen::Index>(n));
}

template <typename T>
auto ccol(T* p, std::size_t n) {
  using V = Eigen::Matrix<std::remove_const_t<T>, Eigen::Dynamic, 1>;
  using M = std::conditional_t<std::is_const_v<T>, const V, V>;
  return Eigen::Map<M>(p, static_cast<Eigen::Index>(n));
}

inline Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D dfdx) {
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return Tensor<T>::from_op(op, x.shape(), std::move(out), {xn}, [xn, dfdx](Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xn->data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      auto g = n->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op("mul", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary<T>("scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T{-1});
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

/// log(max(x, floor)); the gradient is zero where the floor is active.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor = static_cast<T>(kLogFloor)) {
  return detail::unary<T>(
      "log_clamped", x, [floor](T v) { return std::log(v > floor ? v : floor); },
      [floor](T v, T) { return v > floor ? T{1} / v : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  return Tensor<T>::from_op("sum", Shape{}, {acc}, {xn}, [xn](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  const T inv = T{1} / static_cast<T>(x.size());
  auto xn = x.node();
  return Tensor<T>::from_op("mean", Shape{}, {acc * inv}, {xn}, [xn, inv](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    for (auto& gi : g) gi += self.grad[0] * inv;
  });
}

/// Sum over the last axis.
template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<T> out(rows, T{0});
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r] += in[r * d + j];
  }
  auto xn = x.node();
  return Tensor<T>::from_op("sum_last", detail::drop_last(x.shape()), std::move(out), {xn},
                            [xn, d, rows](detail::Node<T>& self) {
                              auto g = xn->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r];
                              }
                            });
}

/// Sample standard deviation across axis 0 (divisor n - 1).
template <typename T>
Tensor<T> std_first(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(0) < 2) {
    throw ValueError("std_first: need at least 2 entries along axis 0, got shape " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t m = x.size() / n;
  const auto in = x.data();
  std::vector<T> mu(m, T{0}), out(m, T{0});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < m; ++j) mu[j] += in[s * m + j];
  }
  for (auto& v : mu) v /= static_cast<T>(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < m; ++j) {
      const T dv = in[s * m + j] - mu[j];
      out[j] += dv * dv;
    }
  }
  for (auto& v : out) v = std::sqrt(v / static_cast<T>(n - 1));
  auto xn = x.node();
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return Tensor<T>::from_op("std", std::move(shape), std::move(out), {xn},
                            [xn, n, m, mu = std::move(mu)](detail::Node<T>& self) {
                              auto g = xn->grad_buffer();
                              for (std::size_t j = 0; j < m; ++j) {
                                // d std / d x_s = (x_s - mean) / ((n - 1) std); zero where std == 0
                                if (self.data[j] <= T{0}) continue;
                                const T c = self.grad[j] / (static_cast<T>(n - 1) * self.data[j]);
                                for (std::size_t s = 0; s < n; ++s) g[s * m + j] += c * (xn->data[s * m + j] - mu[j]);
                              }
                            });
}

/// Euclidean norm over the last axis, max(||v||, eps) floored.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("l2_norm: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  const auto in = x.data();
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) acc += in[r * d + j] * in[r * d + j];
    out[r] = std::sqrt(acc);
  }
  auto xn = x.node();
  return Tensor<T>::from_op("l2_norm", detail::drop_last(x.shape()), std::move(out), {xn},
                            [xn, d, rows](detail::Node<T>& self) {
                              auto g = xn->grad_buffer();
                              const T eps = static_cast<T>(kNormEpsilon);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T norm = self.data[r];
                                if (norm <= eps) continue;  // subgradient 0 at the origin
                                const T c = self.grad[r] / norm;
                                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += c * xn->data[r * d + j];
                              }
                            });
}

/// Rescales each last-axis vector to unit length: v / max(||v||, eps).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("l2_normalize: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  const auto in = x.data();
  const T eps = static_cast<T>(kNormEpsilon);
  std::vector<T> out(x.size()), denom(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) acc += in[r * d + j] * in[r * d + j];
    const T norm = std::sqrt(acc);
    denom[r] = norm > eps ? norm : eps;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / denom[r];
  }
  auto xn = x.node();
  return Tensor<T>::from_op(
      "l2_normalize", x.shape(), std::move(out), {xn}, [xn, d, rows, eps, denom = std::move(denom)](detail::Node<T>& self) {
        auto g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = &self.data[r * d];
          const T* gy = &self.grad[r * d];
          if (denom[r] <= eps) {
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[j] / eps;
            continue;
          }
          // (I - y y^T) gy / ||v||
          T dot{0};
          for (std::size_t j = 0; j < d; ++j) dot += y[j] * gy[j];
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (gy[j] - y[j] * dot) / denom[r];
        }
      });
}

/// Softmax over the last axis of x / temperature, evaluated with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T temperature = T{1}) {
  if (!(temperature > T{0})) throw ValueError("softmax: temperature must be positive, got " + std::to_string(temperature));
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &in[r * k];
    T hi = row[0];
    for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, row[j]);
    T total{0};
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp((row[j] - hi) / temperature);
      total += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= total;
  }
  auto xn = x.node();
  return Tensor<T>::from_op("softmax", x.shape(), std::move(out), {xn}, [xn, k, rows, temperature](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = &self.data[r * k];
      const T* gy = &self.grad[r * k];
      T dot{0};
      for (std::size_t j = 0; j < k; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (gy[j] - dot) / temperature;
    }
  });
}

/// log(softmax(x)) over the last axis, computed as x - max - log(sum(exp(x - max))).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax: scalar input");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &in[r * k];
    T hi = row[0];
    for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, row[j]);
    T total{0};
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - hi);
    const T lse = hi + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = row[j] - lse;
  }
  auto xn = x.node();
  return Tensor<T>::from_op("log_softmax", x.shape(), std::move(out), {xn}, [xn, k, rows](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      T gsum{0};
      for (std::size_t j = 0; j < k; ++j) gsum += self.grad[r * k + j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += self.grad[r * k + j] - std::exp(self.data[r * k + j]) * gsum;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) detail::shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n);
  detail::cmat(out.data(), m, n).noalias() = detail::cmat(a.data().data(), m, k) * detail::cmat(b.data().data(), k, n);
  auto an = a.node(), bn = b.node();
  return Tensor<T>::from_op("matmul", Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node<T>& self) {
    const auto G = detail::cmat(self.grad.data(), m, n);
    if (an->requires_grad) {
      detail::cmat(an->grad_buffer().data(), m, k).noalias() += G * detail::cmat(bn->data.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      detail::cmat(bn->grad_buffer().data(), k, n).noalias() += detail::cmat(an->data.data(), m, k).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  auto an = a.node();
  return Tensor<T>::from_op("transpose", Shape{n, m}, std::move(out), {an}, [an, m, n](detail::Node<T>& self) {
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

/// Affine map x W^T + b for x (batch, in), W (out, in), b (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("linear", x.shape(), 2);
  detail::require_rank("linear", w.shape(), 2);
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) detail::shape_mismatch("linear", x.shape(), w.shape());
  if (b.shape() != Shape{out_dim}) detail::shape_mismatch("linear", w.shape(), b.shape());
  std::vector<T> out(batch * out_dim);
  auto O = detail::cmat(out.data(), batch, out_dim);
  O.noalias() = detail::cmat(x.data().data(), batch, in) * detail::cmat(w.data().data(), out_dim, in).transpose();
  O.rowwise() += detail::crow(b.data().data(), out_dim);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Tensor<T>::from_op(
      "linear", Shape{batch, out_dim}, std::move(out), {xn, wn, bn}, [xn, wn, bn, batch, in, out_dim](detail::Node<T>& self) {
        const auto G = detail::cmat(self.grad.data(), batch, out_dim);
        if (xn->requires_grad) {
          detail::cmat(xn->grad_buffer().data(), batch, in).noalias() += G * detail::cmat(wn->data.data(), out_dim, in);
        }
        if (wn->requires_grad) {
          detail::cmat(wn->grad_buffer().data(), out_dim, in).noalias() +=
              G.transpose() * detail::cmat(xn->data.data(), batch, in);
        }
        if (bn->requires_grad) detail::crow(bn->grad_buffer().data(), out_dim) += G.colwise().sum();
      });
}

namespace detail {

/// Unfolds one (ci, h, w) image into a (ci * kh * kw, oh * ow) patch matrix.
template <typename T>
void im2col(const T* img, std::size_t ci, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, T* cols) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t u = 0; u < kh; ++u)
      for (std::size_t v = 0; v < kw; ++v) {
        T* dst = cols + ((c * kh + u) * kw + v) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const T* src = img + (c * h + y + u) * w + v;
          std::copy(src, src + ow, dst + y * ow);
        }
      }
}

/// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
template <typename T>
void col2im_add(const T* cols, std::size_t ci, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, T* img) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t u = 0; u < kh; ++u)
      for (std::size_t v = 0; v < kw; ++v) {
        const T* src = cols + ((c * kh + u) * kw + v) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          T* dst = img + (c * h + y + u) * w + v;
          for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] += src[y * ow + xx];
        }
      }
}

}  // namespace detail

/// Valid (unpadded) stride-1 cross-correlation.
/// x (batch, in_ch, h, w), weight (out_ch, in_ch, kh, kw), bias (out_ch).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank("conv2d", x.shape(), 4);
  detail::require_rank("conv2d", weight.shape(), 4);
  const std::size_t nb = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != ci || kh > h || kw > w) detail::shape_mismatch("conv2d", x.shape(), weight.shape());
  if (bias.shape() != Shape{co}) detail::shape_mismatch("conv2d", weight.shape(), bias.shape());
  const std::size_t oh = h - kh + 1, ow = w - kw + 1, patch = ci * kh * kw, npix = oh * ow;
  std::vector<T> out(nb * co * npix);
  std::vector<T> cols(patch * npix);
  const auto W = detail::cmat(weight.data().data(), co, patch);
  const auto B = detail::ccol(bias.data().data(), co);
  for (std::size_t b = 0; b < nb; ++b) {
    detail::im2col(x.data().data() + b * ci * h * w, ci, h, w, kh, kw, cols.data());
    auto O = detail::cmat(out.data() + b * co * npix, co, npix);
    O.noalias() = W * detail::cmat(cols.data(), patch, npix);
    O.colwise() += B;
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return Tensor<T>::from_op(
      "conv2d", Shape{nb, co, oh, ow}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, nb, ci, h, w, co, kh, kw, patch, npix](detail::Node<T>& self) {
        std::vector<T> cols(patch * npix);
        const auto Wm = detail::cmat(wn->data.data(), co, patch);
        for (std::size_t b = 0; b < nb; ++b) {
          const auto G = detail::cmat(self.grad.data() + b * co * npix, co, npix);
          if (bn->requires_grad) detail::ccol(bn->grad_buffer().data(), co) += G.rowwise().sum();
          if (wn->requires_grad) {
            detail::im2col(xn->data.data() + b * ci * h * w, ci, h, w, kh, kw, cols.data());
            detail::cmat(wn->grad_buffer().data(), co, patch).noalias() +=
                G * detail::cmat(cols.data(), patch, npix).transpose();
          }
          if (xn->requires_grad) {
            detail::cmat(cols.data(), patch, npix).noalias() = Wm.transpose() * G;
            detail::col2im_add(cols.data(), ci, h, w, kh, kw, xn->grad_buffer().data() + b * ci * h * w);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) detail::shape_mismatch("reshape", x.shape(), shape);
  auto xn = x.node();
  return Tensor<T>::from_op("reshape", std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {xn},
                            [xn](detail::Node<T>& self) {
                              auto g = xn->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                            });
}

/// Concatenation along axis 0; trailing extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat: scalar inputs");
  std::size_t rows = 0;
  std::vector<T> out;
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      detail::shape_mismatch("concat", shape, p.shape());
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  shape[0] = rows;
  return Tensor<T>::from_op("concat", std::move(shape), std::move(out), nodes, [nodes](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        auto g = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += n->data.size();
    }
  });
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  std::vector<Tensor<T>> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    detail::require_same("stack", parts.front().shape(), p.shape());
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted);
}

/// n copies of x along a new leading axis; gradients of the copies are summed.
template <typename T>
Tensor<T> repeat(const Tensor<T>& x, std::size_t n) {
  if (n == 0) throw ShapeError("repeat: zero copies");
  Shape shape{n};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  std::vector<T> out;
  out.reserve(n * x.size());
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), x.data().begin(), x.data().end());
  auto xn = x.node();
  return Tensor<T>::from_op("repeat", std::move(shape), std::move(out), {xn}, [xn, n](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    const std::size_t m = g.size();
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t i = 0; i < m; ++i) g[i] += self.grad[c * m + i];
  });
}

/// Slice [begin, end) along axis 0.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for shape " +
                     to_string(x.shape()));
  }
  const std::size_t row = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> out(x.data().begin() + begin * row, x.data().begin() + end * row);
  auto xn = x.node();
  return Tensor<T>::from_op("slice", std::move(shape), std::move(out), {xn}, [xn, begin, row](detail::Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * row + i] += self.grad[i];
  });
}

}  // namespace faust

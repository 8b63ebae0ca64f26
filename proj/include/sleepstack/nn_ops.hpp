#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sleepstack/batchnorm.hpp"
#include "sleepstack/rng.hpp"
#include "sleepstack/tensor.hpp"

namespace sleepstack::nn {

struct WidthTooSmall : InternalError {
  explicit WidthTooSmall(const std::string& m) : InternalError(m) {}
};
struct NonFiniteLogit : InternalError {
  explicit NonFiniteLogit(const std::string& m) : InternalError(m) {}
};

// ---- max pooling (size 2, stride 2) ----------------------------------------
// Output width is floor(in/2); a trailing odd sample is dropped. Ties go to
// the earlier index.

struct PoolResult {
  Tensor y;
  std::vector<int32_t> argmax;  // winning input row per output element
};

inline PoolResult maxpool_forward(const Tensor& x) {
  if (x.width() < 2) throw WidthTooSmall("maxpool needs width >= 2");
  const int T = x.width(), C = x.channels(), TO = T / 2;
  PoolResult r{Tensor(TO, C), std::vector<int32_t>(static_cast<size_t>(TO) * C)};
  for (int t = 0; t < TO; ++t) {
    for (int c = 0; c < C; ++c) {
      const double a = x.at(2 * t, c), b = x.at(2 * t + 1, c);
      const bool first = a >= b;
      r.y.at(t, c) = first ? a : b;
      r.argmax[static_cast<size_t>(t) * C + c] = first ? 2 * t : 2 * t + 1;
    }
  }
  return r;
}

inline Tensor maxpool_backward(const std::vector<int32_t>& argmax,
                               const Tensor& grad_y, int in_width) {
  const int C = grad_y.channels();
  Tensor gx(in_width, C);
  for (int t = 0; t < grad_y.width(); ++t) {
    for (int c = 0; c < C; ++c) {
      gx.at(argmax[static_cast<size_t>(t) * C + c], c) += grad_y.at(t, c);
    }
  }
  return gx;
}

// ---- relu -------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Gradient mask is 1 for x > 0, 0 at and below zero.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
  if (!x.same_shape(grad_y)) throw ShapeMismatch("relu_backward");
  Tensor gx(x.width(), x.channels());
  for (size_t j = 0; j < x.size(); ++j)
    gx.values()[j] = x.values()[j] > 0.0 ? grad_y.values()[j] : 0.0;
  return gx;
}

// ---- per-channel scale (the trainable affine that BatchNorm omits) ----------

struct ScaleParams {
  std::vector<double> gamma, beta;

  explicit ScaleParams(int channels = 0)
      : gamma(channels, 1.0), beta(channels, 0.0) {}

  int channels() const { return static_cast<int>(gamma.size()); }
  size_t param_count() const { return gamma.size() + beta.size(); }
};

inline Tensor scale_forward(const Tensor& x, const ScaleParams& p) {
  if (x.channels() != p.channels()) throw ChannelMismatch("scale_forward");
  Tensor y(x.width(), x.channels());
  const int C = x.channels();
  for (int t = 0; t < x.width(); ++t)
    for (int c = 0; c < C; ++c) y.at(t, c) = p.gamma[c] * x.at(t, c) + p.beta[c];
  return y;
}

struct ScaleGrads {
  Tensor grad_x;
  std::vector<double> grad_gamma, grad_beta;
};

inline ScaleGrads scale_backward(const Tensor& x, const ScaleParams& p,
                                 const Tensor& grad_y) {
  if (x.channels() != p.channels() || !x.same_shape(grad_y))
    throw ChannelMismatch("scale_backward");
  const int C = x.channels();
  ScaleGrads g{Tensor(x.width(), C), std::vector<double>(C, 0.0),
               std::vector<double>(C, 0.0)};
  for (int t = 0; t < x.width(); ++t) {
    for (int c = 0; c < C; ++c) {
      const double gy = grad_y.at(t, c);
      g.grad_x.at(t, c) = p.gamma[c] * gy;
      g.grad_gamma[c] += x.at(t, c) * gy;
      g.grad_beta[c] += gy;
    }
  }
  return g;
}

// ---- dropout ----------------------------------------------------------------
// Inverted dropout: in TRAIN, survivors are scaled by 1/keep_prob so EVAL is
// the exact identity.

struct DropoutResult {
  Tensor y;
  std::vector<uint8_t> mask;  // 1 = kept (empty in EVAL mode)
};

inline DropoutResult dropout(const Tensor& x, double keep_prob, Mode mode, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw InternalError("dropout keep_prob must be in (0, 1]");
  if (mode == Mode::EVAL || keep_prob == 1.0) return {x, {}};
  DropoutResult r{Tensor(x.width(), x.channels()),
                  std::vector<uint8_t>(x.size())};
  const double inv = 1.0 / keep_prob;
  for (size_t j = 0; j < x.size(); ++j) {
    const bool keep = rng.uniform() < keep_prob;
    r.mask[j] = keep;
    r.y.values()[j] = keep ? x.values()[j] * inv : 0.0;
  }
  return r;
}

inline Tensor dropout_backward(const std::vector<uint8_t>& mask, double keep_prob,
                               const Tensor& grad_y) {
  if (mask.empty()) return grad_y;  // EVAL / keep_prob == 1 pass-through
  Tensor gx(grad_y.width(), grad_y.channels());
  const double inv = 1.0 / keep_prob;
  for (size_t j = 0; j < grad_y.size(); ++j)
    gx.values()[j] = mask[j] ? grad_y.values()[j] * inv : 0.0;
  return gx;
}

// ---- residual add -----------------------------------------------------------

inline Tensor residual_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("residual_add");
  Tensor y = a;
  for (size_t j = 0; j < y.size(); ++j) y.values()[j] += b.values()[j];
  return y;
}

// ---- dense ------------------------------------------------------------------
// Weights row-major (inputs, outputs): logits = x^T W + b.

struct DenseParams {
  int in_dim = 0, out_dim = 0;
  std::vector<double> weights, bias;

  DenseParams() = default;
  DenseParams(int in, int out)
      : in_dim(in), out_dim(out),
        weights(static_cast<size_t>(in) * out, 0.0), bias(out, 0.0) {}

  size_t param_count() const { return weights.size() + bias.size(); }
};

inline std::vector<double> dense_forward(const std::vector<double>& x,
                                         const DenseParams& p) {
  if (static_cast<int>(x.size()) != p.in_dim) throw ShapeMismatch("dense_forward input");
  std::vector<double> logits(p.bias);
  for (int j = 0; j < p.in_dim; ++j) {
    const double xj = x[j];
    const double* wrow = p.weights.data() + static_cast<size_t>(j) * p.out_dim;
    for (int o = 0; o < p.out_dim; ++o) logits[o] += xj * wrow[o];
  }
  return logits;
}

struct DenseGrads {
  std::vector<double> grad_x, grad_weights, grad_bias;
};

inline DenseGrads dense_backward(const std::vector<double>& x, const DenseParams& p,
                                 const std::vector<double>& grad_logits) {
  if (static_cast<int>(grad_logits.size()) != p.out_dim)
    throw ShapeMismatch("dense_backward grad size");
  DenseGrads g{std::vector<double>(p.in_dim, 0.0),
               std::vector<double>(p.weights.size(), 0.0), grad_logits};
  for (int j = 0; j < p.in_dim; ++j) {
    const double* wrow = p.weights.data() + static_cast<size_t>(j) * p.out_dim;
    double* gwrow = g.grad_weights.data() + static_cast<size_t>(j) * p.out_dim;
    double acc = 0.0;
    for (int o = 0; o < p.out_dim; ++o) {
      acc += wrow[o] * grad_logits[o];
      gwrow[o] = x[j] * grad_logits[o];
    }
    g.grad_x[j] = acc;
  }
  return g;
}

// ---- weighted softmax cross-entropy -----------------------------------------

using ClassWeights = std::vector<double>;

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

// loss = -w_label * ln p_label, grad = w_label * (p - onehot(label)).
inline LossResult weighted_softmax_ce(const std::vector<double>& logits, int label,
                                      const ClassWeights& weights) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw InternalError("label out of range");
  if (weights.size() != logits.size())
    throw InternalError("class weights must cover all classes");
  for (double v : logits)
    if (!std::isfinite(v)) throw NonFiniteLogit("non-finite logit");
  const double w = weights[label];
  LossResult r;
  r.grad_logits = softmax(logits);
  r.loss = -w * std::log(std::max(r.grad_logits[label], 1e-300));
  for (auto& g : r.grad_logits) g *= w;
  r.grad_logits[label] -= w;
  return r;
}

}  // namespace sleepstack::nn

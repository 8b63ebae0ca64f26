#pragma once

#include <cmath>
#include <vector>

#include "sleepstack/tensor.hpp"

namespace sleepstack::nn {

enum class Mode { TRAIN, EVAL };

struct BatchTooSmall : InternalError {
  explicit BatchTooSmall(const std::string& m) : InternalError(m) {}
};

// Normalization state: 4 stored values per channel (running and batch mean /
// variance). Normalization carries no affine term here; the trainable gain
// and shift live in the separate Scale layer, so a BatchNorm row accounts for
// exactly 4*C values and a Scale row for 2*C.
struct NormState {
  int channels = 0;
  double epsilon = 1e-5;
  double momentum = 0.99;  // keep-rate of the running average
  std::vector<double> running_mean, running_var;
  std::vector<double> batch_mean, batch_var;

  explicit NormState(int c = 0)
      : channels(c), running_mean(c, 0.0), running_var(c, 1.0),
        batch_mean(c, 0.0), batch_var(c, 0.0) {}

  size_t stored_value_count() const { return 4 * static_cast<size_t>(channels); }

  // Flat snapshot in a fixed order, used by checkpoints.
  std::vector<double> snapshot() const {
    std::vector<double> s;
    s.reserve(stored_value_count());
    for (const auto* v : {&running_mean, &running_var, &batch_mean, &batch_var})
      s.insert(s.end(), v->begin(), v->end());
    return s;
  }

  void restore(const std::vector<double>& s) {
    if (s.size() != stored_value_count())
      throw ShapeMismatch("norm state snapshot size");
    const size_t c = channels;
    running_mean.assign(s.begin(), s.begin() + c);
    running_var.assign(s.begin() + c, s.begin() + 2 * c);
    batch_mean.assign(s.begin() + 2 * c, s.begin() + 3 * c);
    batch_var.assign(s.begin() + 3 * c, s.begin() + 4 * c);
  }
};

// Normalizes `rows` rows of C channels in place of a batch laid out
// row-major. TRAIN normalizes by the batch moments over all rows and folds
// them into the running averages; EVAL normalizes by the running averages.
inline void batchnorm_forward_raw(const double* x, double* y, size_t rows,
                                  NormState& state, Mode mode) {
  const int C = state.channels;
  if (mode == Mode::TRAIN) {
    if (rows < 2) throw BatchTooSmall("batchnorm TRAIN needs at least 2 rows");
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (size_t r = 0; r < rows; ++r) sum += x[r * C + c];
      const double mean = sum / static_cast<double>(rows);
      double sq = 0.0;
      for (size_t r = 0; r < rows; ++r) {
        const double d = x[r * C + c] - mean;
        sq += d * d;
      }
      const double var = sq / static_cast<double>(rows);
      state.batch_mean[c] = mean;
      state.batch_var[c] = var;
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
      const double inv = 1.0 / std::sqrt(var + state.epsilon);
      for (size_t r = 0; r < rows; ++r) y[r * C + c] = (x[r * C + c] - mean) * inv;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      const double mean = state.running_mean[c];
      const double inv = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
      for (size_t r = 0; r < rows; ++r) y[r * C + c] = (x[r * C + c] - mean) * inv;
    }
  }
}

// Gradient of TRAIN-mode normalization, accumulated (+=) into gx. Takes the
// normalized output y_hat (which the forward pass already produced) plus the
// saved batch variance.
inline void batchnorm_backward_raw(const double* y_hat, const double* gy,
                                   double* gx, size_t rows,
                                   const NormState& state) {
  const int C = state.channels;
  const double n = static_cast<double>(rows);
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(state.batch_var[c] + state.epsilon);
    double sum_g = 0.0, sum_gy = 0.0;
    for (size_t r = 0; r < rows; ++r) {
      sum_g += gy[r * C + c];
      sum_gy += gy[r * C + c] * y_hat[r * C + c];
    }
    const double mean_g = sum_g / n;
    const double mean_gy = sum_gy / n;
    for (size_t r = 0; r < rows; ++r) {
      gx[r * C + c] += inv * (gy[r * C + c] - mean_g - y_hat[r * C + c] * mean_gy);
    }
  }
}

// Tensor-batch wrappers used by the op-level tests.
inline std::vector<Tensor> batchnorm_forward(const std::vector<Tensor>& batch,
                                             NormState& state, Mode mode) {
  if (batch.empty()) throw BatchTooSmall("empty batch");
  const int W = batch[0].width(), C = batch[0].channels();
  if (C != state.channels) throw ChannelMismatch("batchnorm state channels");
  if (mode == Mode::TRAIN && batch.size() < 2)
    throw BatchTooSmall("batchnorm TRAIN needs batch size >= 2");
  std::vector<double> xs;
  xs.reserve(batch.size() * batch[0].size());
  for (const auto& t : batch) {
    if (t.width() != W || t.channels() != C) throw ShapeMismatch("batchnorm batch");
    xs.insert(xs.end(), t.values().begin(), t.values().end());
  }
  std::vector<double> ys(xs.size());
  batchnorm_forward_raw(xs.data(), ys.data(), xs.size() / C, state, mode);
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    Tensor t(W, C);
    std::copy(ys.begin() + b * t.size(), ys.begin() + (b + 1) * t.size(),
              t.values().begin());
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Tensor> batchnorm_backward(const std::vector<Tensor>& y_hat,
                                              const std::vector<Tensor>& grad_y,
                                              const NormState& state) {
  const int W = y_hat[0].width(), C = y_hat[0].channels();
  std::vector<double> yh, gy;
  for (const auto& t : y_hat) yh.insert(yh.end(), t.values().begin(), t.values().end());
  for (const auto& t : grad_y) gy.insert(gy.end(), t.values().begin(), t.values().end());
  if (yh.size() != gy.size()) throw ShapeMismatch("batchnorm_backward sizes");
  std::vector<double> gx(yh.size());
  batchnorm_backward_raw(yh.data(), gy.data(), gx.data(), yh.size() / C, state);
  std::vector<Tensor> out;
  for (size_t b = 0; b < y_hat.size(); ++b) {
    Tensor t(W, C);
    std::copy(gx.begin() + b * t.size(), gx.begin() + (b + 1) * t.size(),
              t.values().begin());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace sleepstack::nn

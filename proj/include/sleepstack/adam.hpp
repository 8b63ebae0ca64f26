#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::nn {

// Adam with bias correction. One state per parameter tensor; `lr` is mutable
// so a schedule can adjust it between steps.
struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<double> m, v;

  explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(double* params, const double* grads, size_t n, AdamState& s) {
  if (s.m.size() != n || s.v.size() != n)
    throw InternalError("adam state size mismatch");
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& s) {
  if (params.size() != grads.size()) throw InternalError("adam grads size mismatch");
  adam_step(params.data(), grads.data(), params.size(), s);
}

}  // namespace sleepstack::nn

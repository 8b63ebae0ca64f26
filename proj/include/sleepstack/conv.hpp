#pragma once

#include <cstdlib>
#include <vector>

#if __has_include(<cblas-openblas.h>)
#include <cblas-openblas.h>
#else
#include <cblas.h>
#endif
#if defined(__GNUC__) && defined(__x86_64__)
#include <cpuid.h>
#endif

#include "sleepstack/tensor.hpp"

namespace sleepstack::nn {

#if defined(__GNUC__) && defined(__x86_64__)
// OpenBLAS core autodetection fails on VMs that mask the cpuid model string
// and falls back to a slow generic kernel. Detection runs in the library's
// own constructor, so the core must be pinned before that: OpenBLAS is
// linked statically and this priority-101 constructor is sorted ahead of
// its default-priority one. An explicit OPENBLAS_CORETYPE wins.
__attribute__((constructor(101))) inline void pin_blas_coretype() {
  if (std::getenv("OPENBLAS_CORETYPE")) return;
  unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
  if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return;
  if (ebx & (1u << 16)) setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
  else if (ebx & (1u << 5)) setenv("OPENBLAS_CORETYPE", "HASWELL", 1);
}
#endif

// BLAS threading is disabled: the library does its own partitioning and
// nested threads would break the fixed summation order.
inline void blas_init() {
  static const bool done = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}

// 1-D convolution parameters. Weights are row-major over
// (kernel, in_channel, out_channel): weights[(k*in + i)*out + o].
struct ConvParams {
  int kernel_size = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;  // empty when the layer has no bias term

  bool has_bias() const { return !bias.empty(); }

  size_t param_count() const {
    return weights.size() + bias.size();
  }

  void validate() const {
    const size_t expect =
        static_cast<size_t>(kernel_size) * in_channels * out_channels;
    if (weights.size() != expect)
      throw ShapeMismatch("conv weights size");
    if (!bias.empty() && bias.size() != static_cast<size_t>(out_channels))
      throw ShapeMismatch("conv bias size");
  }
};

// SAME zero padding for stride 1: pad (K-1)/2 on the left, the remainder on
// the right, so output width always equals input width.
inline int conv_pad_left(int kernel_size) { return (kernel_size - 1) / 2; }

// Reference forward pass. Accumulation per output element is k-major then
// i-minor in plain double sums; the test oracle uses the identical order, so
// the two must agree bit for bit.
inline Tensor conv1d_forward(const Tensor& x, const ConvParams& p) {
  p.validate();
  if (x.channels() != p.in_channels)
    throw ChannelMismatch("conv1d_forward: input has " + std::to_string(x.channels()) +
                          " channels, expected " + std::to_string(p.in_channels));
  const int T = x.width(), K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  const int pad = conv_pad_left(K);
  Tensor y(T, O);
  const double* xv = x.data();
  const double* w = p.weights.data();
  double* yv = y.data();
  for (int t = 0; t < T; ++t) {
    double* yrow = yv + static_cast<size_t>(t) * O;
    if (p.has_bias()) {
      for (int o = 0; o < O; ++o) yrow[o] = p.bias[o];
    }
    for (int k = 0; k < K; ++k) {
      const int s = t + k - pad;
      if (s < 0 || s >= T) continue;
      const double* xrow = xv + static_cast<size_t>(s) * I;
      const double* wk = w + static_cast<size_t>(k) * I * O;
      for (int i = 0; i < I; ++i) {
        const double xs = xrow[i];
        const double* wo = wk + static_cast<size_t>(i) * O;
        for (int o = 0; o < O; ++o) yrow[o] += xs * wo[o];
      }
    }
  }
  return y;
}

struct ConvGrads {
  Tensor grad_x;
  std::vector<double> grad_weights;
  std::vector<double> grad_bias;
};

inline ConvGrads conv1d_backward(const Tensor& x, const ConvParams& p,
                                 const Tensor& grad_y) {
  p.validate();
  if (x.channels() != p.in_channels) throw ChannelMismatch("conv1d_backward input");
  if (grad_y.channels() != p.out_channels || grad_y.width() != x.width())
    throw ChannelMismatch("conv1d_backward grad_y");
  const int T = x.width(), K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  const int pad = conv_pad_left(K);
  ConvGrads g{Tensor(T, I), std::vector<double>(p.weights.size(), 0.0),
              std::vector<double>(p.bias.size(), 0.0)};
  const double* xv = x.data();
  const double* gy = grad_y.data();
  const double* w = p.weights.data();
  double* gx = g.grad_x.data();
  double* gw = g.grad_weights.data();
  for (int t = 0; t < T; ++t) {
    const double* gyrow = gy + static_cast<size_t>(t) * O;
    if (p.has_bias()) {
      for (int o = 0; o < O; ++o) g.grad_bias[o] += gyrow[o];
    }
    for (int k = 0; k < K; ++k) {
      const int s = t + k - pad;
      if (s < 0 || s >= T) continue;
      const double* xrow = xv + static_cast<size_t>(s) * I;
      double* gxrow = gx + static_cast<size_t>(s) * I;
      const double* wk = w + static_cast<size_t>(k) * I * O;
      double* gwk = gw + static_cast<size_t>(k) * I * O;
      for (int i = 0; i < I; ++i) {
        const double xs = xrow[i];
        const double* wo = wk + static_cast<size_t>(i) * O;
        double* gwo = gwk + static_cast<size_t>(i) * O;
        double acc = 0.0;
        for (int o = 0; o < O; ++o) {
          const double gyo = gyrow[o];
          acc += gyo * wo[o];
          gwo[o] += xs * gyo;
        }
        gxrow[i] += acc;
      }
    }
  }
  return g;
}

// ---- GEMM-backed fast path ------------------------------------------------
//
// y(T,O) = col(T,K*I) * W(K*I,O), where col holds the padded input windows
// and W is the weight buffer reinterpreted as a matrix (the layouts already
// agree). Used by the model executor; unit tests pin it to the reference
// path within 1e-12.

inline void im2col(const double* x, int T, int I, int K, double* col) {
  const int pad = conv_pad_left(K);
  for (int t = 0; t < T; ++t) {
    double* crow = col + static_cast<size_t>(t) * K * I;
    for (int k = 0; k < K; ++k) {
      const int s = t + k - pad;
      double* dst = crow + static_cast<size_t>(k) * I;
      if (s < 0 || s >= T) {
        for (int i = 0; i < I; ++i) dst[i] = 0.0;
      } else {
        const double* src = x + static_cast<size_t>(s) * I;
        for (int i = 0; i < I; ++i) dst[i] = src[i];
      }
    }
  }
}

// Scatter-add of the column-space gradient back onto the input signal.
inline void col2im_add(const double* col, int T, int I, int K, double* gx) {
  const int pad = conv_pad_left(K);
  for (int t = 0; t < T; ++t) {
    const double* crow = col + static_cast<size_t>(t) * K * I;
    for (int k = 0; k < K; ++k) {
      const int s = t + k - pad;
      if (s < 0 || s >= T) continue;
      const double* src = crow + static_cast<size_t>(k) * I;
      double* dst = gx + static_cast<size_t>(s) * I;
      for (int i = 0; i < I; ++i) dst[i] += src[i];
    }
  }
}

// Forward via dgemm. `scratch` must hold T*K*I doubles (unused when K == 1).
inline void conv_forward_gemm(const double* x, int T, const ConvParams& p,
                              double* y, std::vector<double>& scratch) {
  blas_init();
  const int K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  const double* col = x;
  if (K != 1) {
    scratch.resize(static_cast<size_t>(T) * K * I);
    im2col(x, T, I, K, scratch.data());
    col = scratch.data();
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, T, O, K * I, 1.0, col,
              K * I, p.weights.data(), O, 0.0, y, O);
  if (p.has_bias()) {
    for (int t = 0; t < T; ++t) {
      double* yrow = y + static_cast<size_t>(t) * O;
      for (int o = 0; o < O; ++o) yrow[o] += p.bias[o];
    }
  }
}

// Parameter gradients via dgemm, accumulated (+=) so a batch folds item by
// item in a fixed order: gw(K*I,O) += col^T(K*I,T) * gy(T,O).
inline void conv_backward_params_gemm(const double* x, int T, const ConvParams& p,
                                      const double* gy, double* gw, double* gb,
                                      std::vector<double>& scratch) {
  blas_init();
  const int K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  const double* col = x;
  if (K != 1) {
    scratch.resize(static_cast<size_t>(T) * K * I);
    im2col(x, T, I, K, scratch.data());
    col = scratch.data();
  }
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K * I, O, T, 1.0, col,
              K * I, gy, O, 1.0, gw, O);
  if (gb != nullptr && p.has_bias()) {
    for (int t = 0; t < T; ++t) {
      const double* gyrow = gy + static_cast<size_t>(t) * O;
      for (int o = 0; o < O; ++o) gb[o] += gyrow[o];
    }
  }
}

// Input gradient via dgemm, accumulated (+=) into gx.
inline void conv_backward_input_gemm(const ConvParams& p, int T, const double* gy,
                                     double* gx, std::vector<double>& scratch) {
  blas_init();
  const int K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  if (K == 1) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, T, I, O, 1.0, gy, O,
                p.weights.data(), O, 1.0, gx, I);
  } else {
    // gcol(T,K*I) = gy(T,O) * W^T(O,K*I), then scatter back onto the input.
    scratch.resize(static_cast<size_t>(T) * K * I);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, T, K * I, O, 1.0, gy,
                O, p.weights.data(), O, 0.0, scratch.data(), K * I);
    col2im_add(scratch.data(), T, I, K, gx);
  }
}

}  // namespace sleepstack::nn

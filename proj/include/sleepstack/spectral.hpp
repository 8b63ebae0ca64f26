#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "sleepstack/common.hpp"

namespace sleepstack::analysis {

struct ZeroSignal : DataError {
  explicit ZeroSignal(const std::string& m) : DataError(m) {}
};

enum class Window { hann, rect };

namespace detail {

// One cached FFTW r2c plan per length. Plan creation is not thread-safe;
// execution on private buffers is.
class FftPlans {
public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }

  // std::complex<double> is layout-compatible with fftw_complex
  void execute(std::vector<double>& in, std::vector<std::complex<double>>& out) {
    const size_t n = in.size();
    fftw_plan plan;
    {
      std::lock_guard lk(mu_);
      auto it = plans_.find(n);
      if (it == plans_.end()) {
        // planning with FFTW_ESTIMATE leaves the input intact
        std::vector<double> tmp_in(n);
        std::vector<std::complex<double>> tmp_out(n / 2 + 1);
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), tmp_in.data(),
                                    reinterpret_cast<fftw_complex*>(tmp_out.data()),
                                    FFTW_ESTIMATE);
        plans_[n] = plan;
      } else {
        plan = it->second;
      }
    }
    out.resize(n / 2 + 1);
    fftw_execute_dft_r2c(plan, in.data(),
                         reinterpret_cast<fftw_complex*>(out.data()));
  }

private:
  FftPlans() = default;
  std::mutex mu_;
  std::map<size_t, fftw_plan> plans_;
};

}  // namespace detail

// One-sided magnitude-squared spectrum; bin k maps to k*fs/N Hz.
inline std::vector<double> power_spectrum(const std::vector<double>& x,
                                          Window window = Window::hann) {
  using std::numbers::pi;
  std::vector<double> in = x;
  if (window == Window::hann) {
    const double denom = static_cast<double>(x.size() - 1);
    for (size_t i = 0; i < in.size(); ++i)
      in[i] *= 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(i) / denom));
  }
  std::vector<std::complex<double>> out;
  detail::FftPlans::instance().execute(in, out);
  std::vector<double> p(out.size());
  for (size_t k = 0; k < out.size(); ++k) p[k] = std::norm(out[k]);
  return p;
}

// Smallest bin frequency below which `fraction` of the spectral energy lies.
inline double spectral_rolloff(const std::vector<double>& x, double fs,
                               double fraction = 0.85,
                               Window window = Window::hann) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("rolloff fraction");
  const auto p = power_spectrum(x, window);
  double total = 0.0;
  for (double v : p) total += v;
  if (total <= 0.0) throw ZeroSignal("rolloff of an all-zero signal");
  const double target = fraction * total;
  double cum = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    cum += p[k];
    if (cum >= target) return static_cast<double>(k) * fs / static_cast<double>(x.size());
  }
  return static_cast<double>(p.size() - 1) * fs / static_cast<double>(x.size());
}

// Standard deviation of the power spectrum about its centroid, in Hz.
inline double spectral_spread(const std::vector<double>& x, double fs,
                              Window window = Window::hann) {
  const auto p = power_spectrum(x, window);
  double total = 0.0, centroid = 0.0;
  const double df = fs / static_cast<double>(x.size());
  for (size_t k = 0; k < p.size(); ++k) {
    total += p[k];
    centroid += p[k] * static_cast<double>(k) * df;
  }
  if (total <= 0.0) throw ZeroSignal("spread of an all-zero signal");
  centroid /= total;
  double var = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    const double d = static_cast<double>(k) * df - centroid;
    var += p[k] * d * d;
  }
  return std::sqrt(var / total);
}

}  // namespace sleepstack::analysis

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::baseline {

struct UnstableDesign : InternalError {
  explicit UnstableDesign(const std::string& m) : InternalError("filter design: " + m) {}
};

enum class Band { delta, theta, alpha, beta, gamma };

inline const char* band_name(Band b) {
  switch (b) {
    case Band::delta: return "delta";
    case Band::theta: return "theta";
    case Band::alpha: return "alpha";
    case Band::beta: return "beta";
    case Band::gamma: return "gamma";
  }
  return "?";
}

struct BandSpec {
  Band name = Band::delta;
  double low_hz = 0.5;
  double high_hz = 4.0;
  int order = 4;
};

// Conventional clinical band edges; the gamma band stops just under the
// 50 Hz Nyquist limit of the 100 Hz recordings.
inline std::vector<BandSpec> default_bands() {
  return {{Band::delta, 0.5, 4.0, 4},
          {Band::theta, 4.0, 8.0, 4},
          {Band::alpha, 8.0, 13.0, 4},
          {Band::beta, 13.0, 30.0, 4},
          {Band::gamma, 30.0, 49.9, 4}};
}

// One second-order section, direct form II transposed.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;  // denominator, a0 normalized to 1
};

struct BiquadChain {
  std::vector<Biquad> sections;

  std::complex<double> response(double theta) const {
    const std::complex<double> z = std::polar(1.0, theta);
    const std::complex<double> zi = 1.0 / z;
    std::complex<double> h = 1.0;
    for (const auto& s : sections) {
      h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) /
           (1.0 + s.a1 * zi + s.a2 * zi * zi);
    }
    return h;
  }

  double magnitude(double freq_hz, double fs) const {
    return std::abs(response(2.0 * std::numbers::pi * freq_hz / fs));
  }
};

// Butterworth bandpass of the configured order via the analog prototype,
// lowpass-to-bandpass transform, and bilinear mapping with frequency
// pre-warping. Factored into second-order sections; any pole on or outside
// the unit circle refuses the design.
inline BiquadChain design_bandpass(const BandSpec& spec, double fs) {
  using cd = std::complex<double>;
  using std::numbers::pi;
  if (!(spec.low_hz > 0.0 && spec.low_hz < spec.high_hz && spec.high_hz < fs / 2.0))
    throw UsageError("band edges must satisfy 0 < low < high < fs/2");
  const int N = spec.order;
  if (N < 1 || N > 12) throw UsageError("filter order out of range");

  // analog prototype poles on the unit circle, left half-plane
  std::vector<cd> proto;
  for (int k = 0; k < N; ++k) {
    const double angle = pi * (2.0 * k + N + 1.0) / (2.0 * N);
    proto.emplace_back(std::cos(angle), std::sin(angle));
  }

  const double w1 = 2.0 * fs * std::tan(pi * spec.low_hz / fs);
  const double w2 = 2.0 * fs * std::tan(pi * spec.high_hz / fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // lowpass -> bandpass: each prototype pole splits into two
  std::vector<cd> poles;
  for (const cd& p : proto) {
    const cd s = p * (bw / 2.0);
    const cd d = std::sqrt(s * s - w0 * w0);
    poles.push_back(s + d);
    poles.push_back(s - d);
  }

  // bilinear transform
  std::vector<cd> zpoles;
  for (const cd& s : poles) zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));
  for (const cd& zp : zpoles) {
    if (std::abs(zp) >= 1.0)
      throw UnstableDesign(band_name(spec.name) + std::string(" band pole at |z| = ") +
                           std::to_string(std::abs(zp)));
  }

  // pair conjugate poles into sections; zeros are N at z=+1 and N at z=-1,
  // one of each per section: numerator (z-1)(z+1) = z^2 - 1
  std::vector<cd> upper, real;
  for (const cd& zp : zpoles) {
    if (zp.imag() > 1e-12) upper.push_back(zp);
    else if (std::abs(zp.imag()) <= 1e-12) real.push_back(zp);
  }
  std::sort(upper.begin(), upper.end(),
            [](const cd& a, const cd& b) { return a.real() < b.real(); });
  std::sort(real.begin(), real.end(),
            [](const cd& a, const cd& b) { return a.real() < b.real(); });

  BiquadChain chain;
  for (const cd& p : upper) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    chain.sections.push_back(s);
  }
  for (size_t i = 0; i + 1 < real.size(); i += 2) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -(real[i].real() + real[i + 1].real());
    s.a2 = real[i].real() * real[i + 1].real();
    chain.sections.push_back(s);
  }
  if (chain.sections.size() != static_cast<size_t>(N))
    throw UnstableDesign("pole pairing produced a wrong section count");

  // unit gain at the geometric band center
  const double fc = std::sqrt(spec.low_hz * spec.high_hz);
  const double mag = chain.magnitude(fc, fs);
  if (!(mag > 0.0)) throw UnstableDesign("zero response at band center");
  const double g = std::pow(1.0 / mag, 1.0 / N);
  for (auto& s : chain.sections) {
    s.b0 *= g;
    s.b1 *= g;
    s.b2 *= g;
  }
  return chain;
}

// Causal single pass through the cascade, zero initial conditions.
inline std::vector<double> filter_signal(const std::vector<double>& x,
                                         const BiquadChain& chain) {
  std::vector<double> y = x;
  for (const auto& s : chain.sections) {
    double s1 = 0.0, s2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + s1;
      s1 = s.b1 * in - s.a1 * out + s2;
      s2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

inline std::vector<double> filter_signal(const std::vector<float>& x,
                                         const BiquadChain& chain) {
  std::vector<double> xd(x.begin(), x.end());
  return filter_signal(xd, chain);
}

}  // namespace sleepstack::baseline

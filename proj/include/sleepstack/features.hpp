#pragma once

#include <cmath>

#include "sleepstack/epochs.hpp"
#include "sleepstack/filters.hpp"

namespace sleepstack::baseline {

// Maximum-minimum distance: per window, the Euclidean distance between the
// extrema treated as (sample index, amplitude) points, summed over windows.
// First occurrence wins ties, so a constant window contributes zero. The
// mixed units (sample counts vs microvolts) are inherited from the source
// method.
inline double mmd(const std::vector<double>& x, int window_len = 100) {
  if (window_len < 1 || x.size() % window_len != 0)
    throw UsageError("mmd: window length must divide the signal length");
  double total = 0.0;
  for (size_t w = 0; w < x.size(); w += window_len) {
    int i_max = 0, i_min = 0;
    for (int i = 1; i < window_len; ++i) {
      if (x[w + i] > x[w + i_max]) i_max = i;
      if (x[w + i] < x[w + i_min]) i_min = i;
    }
    const double di = static_cast<double>(i_max - i_min);
    const double dx = x[w + i_max] - x[w + i_min];
    total += std::sqrt(di * di + dx * dx);
  }
  return total;
}

// Band-signal energy over the whole epoch.
inline double energy_sis(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// 10-entry feature vector: (MMD, EnergySis) per band in fixed band order.
struct FeatureVector {
  std::array<double, 10> values{};
  int label = 0;
  std::string recording_id;
  int position_index = 0;
};

inline std::vector<BiquadChain> design_band_filters(
    const std::vector<BandSpec>& bands = default_bands(),
    double fs = data::kSamplingRateHz) {
  std::vector<BiquadChain> chains;
  chains.reserve(bands.size());
  for (const auto& b : bands) chains.push_back(design_bandpass(b, fs));
  return chains;
}

inline FeatureVector extract_features(const data::Epoch& epoch,
                                      const std::vector<BiquadChain>& chains,
                                      int mmd_window = 100) {
  if (epoch.samples.size() != data::kEpochSamples)
    throw UsageError("extract_features: epoch must hold 3000 samples");
  if (chains.size() != 5) throw UsageError("extract_features: 5 band filters required");
  FeatureVector f;
  f.label = epoch.label;
  f.recording_id = epoch.recording_id;
  f.position_index = epoch.position_index;
  for (size_t b = 0; b < chains.size(); ++b) {
    const auto banded = filter_signal(epoch.samples, chains[b]);
    f.values[2 * b] = mmd(banded, mmd_window);
    f.values[2 * b + 1] = energy_sis(banded);
  }
  for (double v : f.values)
    if (!std::isfinite(v)) throw InternalError("non-finite feature value");
  return f;
}

}  // namespace sleepstack::baseline

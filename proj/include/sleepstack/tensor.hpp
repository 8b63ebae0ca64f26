#pragma once

#include <cstddef>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::nn {

struct ShapeMismatch : InternalError {
  explicit ShapeMismatch(const std::string& m) : InternalError("shape mismatch: " + m) {}
};
struct ChannelMismatch : InternalError {
  explicit ChannelMismatch(const std::string& m) : InternalError("channel mismatch: " + m) {}
};

// Rank-2 signal tensor, row-major over (width, channels): values[t*channels + c].
class Tensor {
public:
  Tensor() = default;
  Tensor(int width, int channels, double fill = 0.0)
      : width_(width), channels_(channels),
        values_(static_cast<size_t>(width) * channels, fill) {
    if (width < 1 || channels < 1) throw ShapeMismatch("tensor dims must be >= 1");
  }

  int width() const { return width_; }
  int channels() const { return channels_; }
  size_t size() const { return values_.size(); }

  double& at(int t, int c) { return values_[static_cast<size_t>(t) * channels_ + c]; }
  double at(int t, int c) const { return values_[static_cast<size_t>(t) * channels_ + c]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& o) const {
    return width_ == o.width_ && channels_ == o.channels_;
  }

private:
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

}  // namespace sleepstack::nn

#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sleepstack/arch.hpp"
#include "sleepstack/conv.hpp"
#include "sleepstack/nn_ops.hpp"
#include "sleepstack/rng.hpp"

namespace sleepstack::net {

struct BadInputWidth : InternalError {
  explicit BadInputWidth(const std::string& m) : InternalError(m) {}
};

// The residual network, parameterized by its architecture table. Layer
// parameters are indexed by table row; construction re-derives every shape
// from the wiring and refuses to proceed on any disagreement with the table.
class Model {
public:
  ArchitectureSpec spec;
  std::map<int, nn::ConvParams> conv;
  std::map<int, std::vector<double>> conv_grad_w, conv_grad_b;
  std::map<int, nn::ScaleParams> scale;
  std::map<int, std::vector<double>> scale_grad_gamma, scale_grad_beta;
  std::map<int, nn::NormState> norm;
  nn::DenseParams dense;
  std::vector<double> dense_grad_w, dense_grad_b;
  int dense_row = -1;

  struct Meta {
    uint64_t seed = 0;
    int trained_epochs = 0;
    double last_lr = 0.0;
  } meta;

  int num_classes() const { return spec.num_classes; }
  int input_width() const { return spec.rows.front().width; }

  static Model build(int num_classes, uint64_t seed,
                     const std::string& csv_path = default_arch_csv_path()) {
    Model m;
    m.spec = ArchitectureSpec::load_file(csv_path, num_classes);
    m.meta.seed = seed;
    for (size_t i = 0; i < m.spec.rows.size(); ++i) {
      const auto& r = m.spec.rows[i];
      Rng layer_rng(Rng::child_seed(seed, "init:" + r.name));
      switch (r.kind) {
        case LayerKind::Conv1D: {
          nn::ConvParams p;
          p.kernel_size = r.kernel_size;
          p.in_channels = r.in_channels;
          p.out_channels = r.channels;
          p.weights.resize(static_cast<size_t>(p.kernel_size) * p.in_channels *
                           p.out_channels);
          // He fan-in init suits the ReLU body.
          const double sd = std::sqrt(2.0 / (p.kernel_size * p.in_channels));
          for (auto& w : p.weights) w = layer_rng.normal(0.0, sd);
          if (r.has_bias) p.bias.assign(p.out_channels, 0.0);
          m.conv_grad_w[i].assign(p.weights.size(), 0.0);
          m.conv_grad_b[i].assign(p.bias.size(), 0.0);
          m.conv.emplace(static_cast<int>(i), std::move(p));
          break;
        }
        case LayerKind::BatchNorm:
          m.norm.emplace(static_cast<int>(i), nn::NormState(r.channels));
          break;
        case LayerKind::Scale: {
          m.scale.emplace(static_cast<int>(i), nn::ScaleParams(r.channels));
          m.scale_grad_gamma[i].assign(r.channels, 0.0);
          m.scale_grad_beta[i].assign(r.channels, 0.0);
          break;
        }
        case LayerKind::Dense: {
          m.dense = nn::DenseParams(r.in_channels, r.width);
          const double sd = std::sqrt(2.0 / r.in_channels);
          for (auto& w : m.dense.weights) w = layer_rng.normal(0.0, sd);
          m.dense_grad_w.assign(m.dense.weights.size(), 0.0);
          m.dense_grad_b.assign(m.dense.bias.size(), 0.0);
          m.dense_row = static_cast<int>(i);
          break;
        }
        default:
          break;
      }
    }
    return m;
  }

  // One (layer, parameter count) pair per parameterized row, computed from
  // the tensors actually held, in table order.
  std::vector<std::pair<std::string, long long>> param_report() const {
    std::vector<std::pair<std::string, long long>> out;
    for (size_t i = 0; i < spec.rows.size(); ++i) {
      const auto& r = spec.rows[i];
      long long n = 0;
      switch (r.kind) {
        case LayerKind::Conv1D: n = static_cast<long long>(conv.at(i).param_count()); break;
        case LayerKind::BatchNorm: n = static_cast<long long>(norm.at(i).stored_value_count()); break;
        case LayerKind::Scale: n = static_cast<long long>(scale.at(i).param_count()); break;
        case LayerKind::Dense: n = static_cast<long long>(dense.param_count()); break;
        default: break;
      }
      out.emplace_back(r.name, n);
    }
    return out;
  }

  // Trainable tensors in declared order, paired with their gradient buffers.
  struct TensorRef {
    std::string name;
    std::vector<double>* values;
    std::vector<double>* grad;
  };

  std::vector<TensorRef> trainable_tensors() {
    std::vector<TensorRef> out;
    for (size_t i = 0; i < spec.rows.size(); ++i) {
      const auto& r = spec.rows[i];
      switch (r.kind) {
        case LayerKind::Conv1D: {
          auto& p = conv.at(i);
          out.push_back({r.name + ".weights", &p.weights, &conv_grad_w.at(i)});
          if (p.has_bias()) out.push_back({r.name + ".bias", &p.bias, &conv_grad_b.at(i)});
          break;
        }
        case LayerKind::Scale: {
          auto& p = scale.at(i);
          out.push_back({r.name + ".gamma", &p.gamma, &scale_grad_gamma.at(i)});
          out.push_back({r.name + ".beta", &p.beta, &scale_grad_beta.at(i)});
          break;
        }
        case LayerKind::Dense:
          out.push_back({r.name + ".weights", &dense.weights, &dense_grad_w});
          out.push_back({r.name + ".bias", &dense.bias, &dense_grad_b});
          break;
        default:
          break;
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& [i, g] : conv_grad_w) std::fill(g.begin(), g.end(), 0.0);
    for (auto& [i, g] : conv_grad_b) std::fill(g.begin(), g.end(), 0.0);
    for (auto& [i, g] : scale_grad_gamma) std::fill(g.begin(), g.end(), 0.0);
    for (auto& [i, g] : scale_grad_beta) std::fill(g.begin(), g.end(), 0.0);
    std::fill(dense_grad_w.begin(), dense_grad_w.end(), 0.0);
    std::fill(dense_grad_b.begin(), dense_grad_b.end(), 0.0);
  }

  uint64_t fingerprint() const { return spec.fingerprint(); }
};

}  // namespace sleepstack::net

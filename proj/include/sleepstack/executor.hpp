#pragma once

#include <cstring>
#include <vector>

#include "sleepstack/model.hpp"
#include "sleepstack/parallel.hpp"

namespace sleepstack::net {

// Batched forward/backward over the layer graph. The table's row order is a
// topological order, so forward walks it top to bottom and backward walks it
// in reverse, freeing each row's gradient once the row has been consumed.
//
// Determinism contract: all cross-item reductions (batch-norm moments,
// parameter gradients) are accumulated in fixed item/channel order, never
// split across threads, so results are bit-identical for any thread count.
class Executor {
public:
  explicit Executor(Model& model, ThreadPool* pool = nullptr)
      : m_(model), pool_(pool) {
    const size_t n = m_.spec.rows.size();
    act_.resize(n);
    grad_.resize(n);
    mask_.resize(n);
    argmax_.resize(n);
    stride_.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const auto& r = m_.spec.rows[i];
      stride_[i] = (r.channels > 0)
                       ? static_cast<size_t>(r.width) * r.channels
                       : static_cast<size_t>(r.width);  // Flatten/Dense rows
    }
  }

  // x holds `batch` examples of input_width samples, contiguous. Returns the
  // logits buffer (batch * num_classes). In TRAIN mode an RNG must be given
  // when keep_prob < 1.
  const std::vector<double>& forward(const double* x, int batch, nn::Mode mode,
                                     double keep_prob = 1.0, Rng* rng = nullptr) {
    nn::blas_init();
    if (batch < 1) throw InternalError("empty batch");
    if (mode == nn::Mode::TRAIN && batch < 2)
      throw nn::BatchTooSmall("TRAIN mode needs batch size >= 2");
    if (mode == nn::Mode::TRAIN && keep_prob < 1.0 && rng == nullptr)
      throw InternalError("dropout needs an RNG in TRAIN mode");
    batch_ = batch;
    mode_ = mode;
    keep_prob_ = keep_prob;

    for (size_t i = 0; i < m_.spec.rows.size(); ++i) {
      const auto& r = m_.spec.rows[i];
      auto& out = act_[i];
      out.assign(static_cast<size_t>(batch) * stride_[i], 0.0);
      switch (r.kind) {
        case LayerKind::Input:
          std::memcpy(out.data(), x, out.size() * sizeof(double));
          break;
        case LayerKind::Conv1D: {
          const int in = r.input_idx[0];
          const auto& p = m_.conv.at(i);
          parallel_items([&](int b, std::vector<double>& scratch) {
            nn::conv_forward_gemm(act_[in].data() + b * stride_[in], r.width, p,
                                  out.data() + b * stride_[i], scratch);
          });
          break;
        }
        case LayerKind::BatchNorm: {
          const int in = r.input_idx[0];
          nn::batchnorm_forward_raw(act_[in].data(), out.data(),
                                    out.size() / r.channels, m_.norm.at(i), mode);
          break;
        }
        case LayerKind::Scale: {
          const int in = r.input_idx[0];
          const auto& p = m_.scale.at(i);
          const int C = r.channels;
          parallel_rows(out.size() / C, [&](size_t row) {
            const double* xi = act_[in].data() + row * C;
            double* yo = out.data() + row * C;
            for (int c = 0; c < C; ++c) yo[c] = p.gamma[c] * xi[c] + p.beta[c];
          });
          break;
        }
        case LayerKind::Activation: {
          const auto& xin = act_[r.input_idx[0]];
          parallel_rows(out.size(), [&](size_t j) {
            out[j] = xin[j] > 0.0 ? xin[j] : 0.0;
          });
          break;
        }
        case LayerKind::Dropout: {
          const auto& xin = act_[r.input_idx[0]];
          if (mode == nn::Mode::TRAIN && keep_prob < 1.0) {
            auto& mask = mask_[i];
            mask.resize(out.size());
            for (size_t j = 0; j < mask.size(); ++j)
              mask[j] = rng->uniform() < keep_prob;  // serial: thread-count independent
            const double inv = 1.0 / keep_prob;
            parallel_rows(out.size(), [&](size_t j) {
              out[j] = mask[j] ? xin[j] * inv : 0.0;
            });
          } else {
            std::memcpy(out.data(), xin.data(), out.size() * sizeof(double));
          }
          break;
        }
        case LayerKind::Add: {
          const auto& a = act_[r.input_idx[0]];
          const auto& b = act_[r.input_idx[1]];
          parallel_rows(out.size(), [&](size_t j) { out[j] = a[j] + b[j]; });
          break;
        }
        case LayerKind::MaxPooling1D: {
          const int in = r.input_idx[0];
          const int C = r.channels, TO = r.width;
          auto& arg = argmax_[i];
          arg.resize(out.size());
          parallel_items([&](int b, std::vector<double>&) {
            const double* xi = act_[in].data() + b * stride_[in];
            double* yo = out.data() + b * stride_[i];
            int32_t* ao = arg.data() + b * stride_[i];
            for (int t = 0; t < TO; ++t) {
              for (int c = 0; c < C; ++c) {
                const double v0 = xi[(2 * t) * C + c], v1 = xi[(2 * t + 1) * C + c];
                const bool first = v0 >= v1;
                yo[t * C + c] = first ? v0 : v1;
                ao[t * C + c] = (first ? 2 * t : 2 * t + 1) * C + c;
              }
            }
          });
          break;
        }
        case LayerKind::Flatten:
          std::memcpy(out.data(), act_[r.input_idx[0]].data(),
                      out.size() * sizeof(double));
          break;
        case LayerKind::Dense: {
          const int in = r.input_idx[0];
          const auto& p = m_.dense;
          parallel_items([&](int b, std::vector<double>&) {
            const double* xi = act_[in].data() + b * stride_[in];
            double* yo = out.data() + b * stride_[i];
            for (int o = 0; o < p.out_dim; ++o) yo[o] = p.bias[o];
            for (int j = 0; j < p.in_dim; ++j) {
              const double xj = xi[j];
              const double* wr = p.weights.data() + static_cast<size_t>(j) * p.out_dim;
              for (int o = 0; o < p.out_dim; ++o) yo[o] += xj * wr[o];
            }
          });
          break;
        }
      }
    }
    forward_done_ = true;
    return act_[m_.dense_row];
  }

  const std::vector<double>& logits() const { return act_[m_.dense_row]; }
  const std::vector<double>& activation(int row) const { return act_[row]; }
  int batch() const { return batch_; }

  // Accumulates parameter gradients into the model's gradient buffers (call
  // model.zero_grad() first) and discards per-row gradients as it goes.
  void backward(const std::vector<double>& grad_logits) {
    if (!forward_done_ || mode_ != nn::Mode::TRAIN)
      throw InternalError("backward requires a preceding TRAIN forward");
    if (grad_logits.size() != static_cast<size_t>(batch_) * m_.dense.out_dim)
      throw nn::ShapeMismatch("grad_logits size");
    grad_[m_.dense_row] = grad_logits;

    for (int i = static_cast<int>(m_.spec.rows.size()) - 1; i >= 0; --i) {
      auto& gy = grad_[i];
      if (gy.empty()) continue;
      const auto& r = m_.spec.rows[i];
      switch (r.kind) {
        case LayerKind::Input:
          break;
        case LayerKind::Conv1D: {
          const int in = r.input_idx[0];
          const auto& p = m_.conv.at(i);
          // Input gradient: per item, disjoint output slices.
          if (m_.spec.rows[in].kind != LayerKind::Input) {
            auto& gx = grad_buf(in);
            parallel_items([&](int b, std::vector<double>& scratch) {
              nn::conv_backward_input_gemm(p, r.width, gy.data() + b * stride_[i],
                                           gx.data() + b * stride_[in], scratch);
            });
          }
          // Parameter gradient: items folded serially in fixed order.
          {
            auto& gw = m_.conv_grad_w.at(i);
            auto& gb = m_.conv_grad_b.at(i);
            std::vector<double> scratch;
            for (int b = 0; b < batch_; ++b) {
              nn::conv_backward_params_gemm(
                  act_[in].data() + b * stride_[in], r.width, p,
                  gy.data() + b * stride_[i], gw.data(),
                  p.has_bias() ? gb.data() : nullptr, scratch);
            }
          }
          break;
        }
        case LayerKind::BatchNorm: {
          auto& gx = grad_buf(r.input_idx[0]);
          nn::batchnorm_backward_raw(act_[i].data(), gy.data(), gx.data(),
                                     gy.size() / r.channels, m_.norm.at(i));
          break;
        }
        case LayerKind::Scale: {
          const int in = r.input_idx[0];
          const auto& p = m_.scale.at(i);
          const int C = r.channels;
          auto& gx = grad_buf(in);
          parallel_rows(gy.size() / C, [&](size_t row) {
            const double* g = gy.data() + row * C;
            double* o = gx.data() + row * C;
            for (int c = 0; c < C; ++c) o[c] += p.gamma[c] * g[c];
          });
          auto& gg = m_.scale_grad_gamma.at(i);
          auto& gb = m_.scale_grad_beta.at(i);
          const size_t rows = gy.size() / C;
          const double* xin = act_[in].data();
          parallel_channels(C, [&](int c) {
            double sg = 0.0, sb = 0.0;
            for (size_t row = 0; row < rows; ++row) {
              const double g = gy[row * C + c];
              sg += xin[row * C + c] * g;
              sb += g;
            }
            gg[c] += sg;
            gb[c] += sb;
          });
          break;
        }
        case LayerKind::Activation: {
          auto& gx = grad_buf(r.input_idx[0]);
          const auto& y = act_[i];
          parallel_rows(gy.size(), [&](size_t j) {
            if (y[j] > 0.0) gx[j] += gy[j];
          });
          break;
        }
        case LayerKind::Dropout: {
          auto& gx = grad_buf(r.input_idx[0]);
          const auto& mask = mask_[i];
          if (mask.empty()) {
            parallel_rows(gy.size(), [&](size_t j) { gx[j] += gy[j]; });
          } else {
            const double inv = 1.0 / keep_prob_;
            parallel_rows(gy.size(), [&](size_t j) {
              if (mask[j]) gx[j] += gy[j] * inv;
            });
          }
          break;
        }
        case LayerKind::Add: {
          auto& ga = grad_buf(r.input_idx[0]);
          parallel_rows(gy.size(), [&](size_t j) { ga[j] += gy[j]; });
          auto& gb = grad_buf(r.input_idx[1]);
          parallel_rows(gy.size(), [&](size_t j) { gb[j] += gy[j]; });
          break;
        }
        case LayerKind::MaxPooling1D: {
          const int in = r.input_idx[0];
          auto& gx = grad_buf(in);
          const auto& arg = argmax_[i];
          parallel_items([&](int b, std::vector<double>&) {
            const double* g = gy.data() + b * stride_[i];
            const int32_t* a = arg.data() + b * stride_[i];
            double* o = gx.data() + b * stride_[in];
            for (size_t j = 0; j < stride_[i]; ++j) o[a[j]] += g[j];
          });
          break;
        }
        case LayerKind::Flatten: {
          auto& gx = grad_buf(r.input_idx[0]);
          parallel_rows(gy.size(), [&](size_t j) { gx[j] += gy[j]; });
          break;
        }
        case LayerKind::Dense: {
          const int in = r.input_idx[0];
          const auto& p = m_.dense;
          auto& gx = grad_buf(in);
          parallel_items([&](int b, std::vector<double>&) {
            const double* g = gy.data() + b * stride_[i];
            double* o = gx.data() + b * stride_[in];
            for (int j = 0; j < p.in_dim; ++j) {
              const double* wr = p.weights.data() + static_cast<size_t>(j) * p.out_dim;
              double acc = 0.0;
              for (int oo = 0; oo < p.out_dim; ++oo) acc += wr[oo] * g[oo];
              o[j] += acc;
            }
          });
          for (int b = 0; b < batch_; ++b) {  // parameter grads in item order
            const double* g = gy.data() + b * stride_[i];
            const double* xi = act_[in].data() + b * stride_[in];
            for (int j = 0; j < p.in_dim; ++j) {
              double* gw = m_.dense_grad_w.data() + static_cast<size_t>(j) * p.out_dim;
              for (int oo = 0; oo < p.out_dim; ++oo) gw[oo] += xi[j] * g[oo];
            }
            for (int oo = 0; oo < p.out_dim; ++oo) m_.dense_grad_b[oo] += g[oo];
          }
          break;
        }
      }
      release(gy);
    }
    forward_done_ = false;
  }

private:
  std::vector<double>& grad_buf(int row) {
    auto& g = grad_[row];
    if (g.empty()) g.assign(static_cast<size_t>(batch_) * stride_[row], 0.0);
    return g;
  }

  static void release(std::vector<double>& v) {
    std::vector<double>().swap(v);
  }

  void parallel_items(const std::function<void(int, std::vector<double>&)>& fn) {
    if (pool_ && pool_->size() > 1) {
      pool_->parallel_ranges(batch_, [&](size_t b0, size_t b1) {
        std::vector<double> scratch;
        for (size_t b = b0; b < b1; ++b) fn(static_cast<int>(b), scratch);
      });
    } else {
      std::vector<double> scratch;
      for (int b = 0; b < batch_; ++b) fn(b, scratch);
    }
  }

  void parallel_rows(size_t n, const std::function<void(size_t)>& fn) {
    if (pool_ && pool_->size() > 1) {
      pool_->parallel_ranges(n, [&](size_t a, size_t b) {
        for (size_t j = a; j < b; ++j) fn(j);
      });
    } else {
      for (size_t j = 0; j < n; ++j) fn(j);
    }
  }

  void parallel_channels(int C, const std::function<void(int)>& fn) {
    if (pool_ && pool_->size() > 1) {
      pool_->parallel_ranges(C, [&](size_t a, size_t b) {
        for (size_t c = a; c < b; ++c) fn(static_cast<int>(c));
      });
    } else {
      for (int c = 0; c < C; ++c) fn(c);
    }
  }

  Model& m_;
  ThreadPool* pool_;
  int batch_ = 0;
  nn::Mode mode_ = nn::Mode::EVAL;
  double keep_prob_ = 1.0;
  bool forward_done_ = false;
  std::vector<std::vector<double>> act_, grad_;
  std::vector<std::vector<uint8_t>> mask_;
  std::vector<std::vector<int32_t>> argmax_;
  std::vector<size_t> stride_;
};

// Single-example inference; EVAL is deterministic and TRAIN-mode single
// examples are rejected by batch-norm as specified.
inline std::vector<double> model_forward(Model& m, std::span<const double> samples,
                                         nn::Mode mode = nn::Mode::EVAL,
                                         double keep_prob = 1.0, Rng* rng = nullptr) {
  if (static_cast<int>(samples.size()) != m.input_width())
    throw BadInputWidth("expected " + std::to_string(m.input_width()) +
                        " samples, got " + std::to_string(samples.size()));
  Executor ex(m);
  const auto& logits = ex.forward(samples.data(), 1, mode, keep_prob, rng);
  return nn::softmax(logits);
}

}  // namespace sleepstack::net

#include <catch2/catch_amalgamated.hpp>

#include "sleepstack/adam.hpp"
#include "sleepstack/batchnorm.hpp"
#include "sleepstack/conv.hpp"
#include "sleepstack/nn_ops.hpp"
#include "testutil.hpp"

using namespace sleepstack;
using namespace sleepstack::nn;
using testutil::fd_grad;
using testutil::random_tensor;
using testutil::rel_close;

namespace {

// Independent brute-force convolution: direct summation straight from the
// definition, k-major then i per output element, zero outside bounds.
Tensor conv_oracle(const Tensor& x, const ConvParams& p) {
  const int T = x.width(), K = p.kernel_size, I = p.in_channels, O = p.out_channels;
  const int pad = (K - 1) / 2;
  Tensor y(T, O);
  for (int t = 0; t < T; ++t) {
    for (int o = 0; o < O; ++o) {
      double acc = p.has_bias() ? p.bias[o] : 0.0;
      for (int k = 0; k < K; ++k) {
        const int s = t + k - pad;
        if (s < 0 || s >= T) continue;
        for (int i = 0; i < I; ++i) acc += x.at(s, i) * p.weights[(k * I + i) * O + o];
      }
      y.at(t, o) = acc;
    }
  }
  return y;
}

ConvParams random_conv(int K, int I, int O, Rng& rng, bool bias) {
  ConvParams p;
  p.kernel_size = K;
  p.in_channels = I;
  p.out_channels = O;
  p.weights.resize(static_cast<size_t>(K) * I * O);
  for (auto& w : p.weights) w = rng.uniform(-1.0, 1.0);
  if (bias) {
    p.bias.resize(O);
    for (auto& b : p.bias) b = rng.uniform(-1.0, 1.0);
  }
  return p;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_grads(const std::vector<double>& analytic, const std::vector<double>& fd,
                 double tol = 1e-4) {
  REQUIRE(analytic.size() == fd.size());
  for (size_t i = 0; i < analytic.size(); ++i) {
    INFO("gradient entry " << i);
    REQUIRE(rel_close(analytic[i], fd[i], tol));
  }
}

}  // namespace

TEST_CASE("conv1d forward: zero input yields bias") {
  Rng rng(11);
  auto p = random_conv(16, 3, 5, rng, true);
  Tensor x(10, 3);
  const Tensor y = conv1d_forward(x, p);
  for (int t = 0; t < 10; ++t)
    for (int o = 0; o < 5; ++o) REQUIRE(y.at(t, o) == p.bias[o]);
}

TEST_CASE("conv1d parameter count matches the published first layer") {
  Rng rng(12);
  auto p = random_conv(16, 1, 64, rng, true);
  REQUIRE(p.param_count() == 1088);
}

TEST_CASE("conv1d forward equals the brute-force oracle bit for bit") {
  Rng rng(13);
  auto p = random_conv(3, 2, 2, rng, true);
  const Tensor x = random_tensor(7, 2, rng);
  const Tensor y = conv1d_forward(x, p);
  const Tensor o = conv_oracle(x, p);
  for (size_t j = 0; j < y.size(); ++j) REQUIRE(y.values()[j] == o.values()[j]);

  for (int trial = 0; trial < 50; ++trial) {
    const int K = std::vector<int>{1, 2, 3, 5, 16}[rng.uniform_u64(5)];
    const int I = 1 + static_cast<int>(rng.uniform_u64(3));
    const int O = 1 + static_cast<int>(rng.uniform_u64(4));
    const int T = 1 + static_cast<int>(rng.uniform_u64(24));
    auto pp = random_conv(K, I, O, rng, trial % 2 == 0);
    const Tensor xx = random_tensor(T, I, rng);
    const Tensor yy = conv1d_forward(xx, pp);
    REQUIRE(yy.width() == T);  // SAME padding preserves width
    const Tensor oo = conv_oracle(xx, pp);
    for (size_t j = 0; j < yy.size(); ++j) REQUIRE(yy.values()[j] == oo.values()[j]);
  }
}

TEST_CASE("conv1d GEMM path matches the reference within 1e-12") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = trial % 2 == 0 ? 16 : 1;
    const int I = 1 + static_cast<int>(rng.uniform_u64(4));
    const int O = 1 + static_cast<int>(rng.uniform_u64(6));
    const int T = 4 + static_cast<int>(rng.uniform_u64(40));
    auto p = random_conv(K, I, O, rng, trial % 3 == 0);
    const Tensor x = random_tensor(T, I, rng);
    const Tensor ref = conv1d_forward(x, p);
    std::vector<double> y(ref.size()), scratch;
    conv_forward_gemm(x.data(), T, p, y.data(), scratch);
    for (size_t j = 0; j < y.size(); ++j)
      REQUIRE(rel_close(y[j], ref.values()[j], 1e-12));
  }
}

TEST_CASE("conv1d backward: zero upstream grad gives zero gradients") {
  Rng rng(15);
  auto p = random_conv(3, 2, 3, rng, true);
  const Tensor x = random_tensor(6, 2, rng);
  const auto g = conv1d_backward(x, p, Tensor(6, 3));
  for (double v : g.grad_x.values()) REQUIRE(v == 0.0);
  for (double v : g.grad_weights) REQUIRE(v == 0.0);
  for (double v : g.grad_bias) REQUIRE(v == 0.0);
}

TEST_CASE("conv1d backward matches finite differences") {
  Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    const int K = trial % 2 == 0 ? 3 : 16;
    auto p = random_conv(K, 2, 2, rng, true);
    Tensor x = random_tensor(7, 2, rng);
    Tensor c = random_tensor(7, 2, rng);  // fixed linear functional
    auto loss = [&] { return dot(conv1d_forward(x, p).values(), c.values()); };
    const auto g = conv1d_backward(x, p, c);
    check_grads(g.grad_x.values(), fd_grad(x.values(), loss));
    check_grads(g.grad_weights, fd_grad(p.weights, loss));
    check_grads(g.grad_bias, fd_grad(p.bias, loss));
  }
}

TEST_CASE("conv1d backward: bias gradient is the column sum of grad_y") {
  Rng rng(17);
  auto p = random_conv(3, 1, 2, rng, true);
  const Tensor x = random_tensor(9, 1, rng);
  const Tensor gy = random_tensor(9, 2, rng);
  const auto g = conv1d_backward(x, p, gy);
  for (int o = 0; o < 2; ++o) {
    double s = 0.0;
    for (int t = 0; t < 9; ++t) s += gy.at(t, o);
    REQUIRE(rel_close(g.grad_bias[o], s, 1e-12));
  }
}

TEST_CASE("conv1d GEMM backward matches the reference backward") {
  Rng rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const int K = trial % 2 == 0 ? 16 : 1;
    const int I = 1 + static_cast<int>(rng.uniform_u64(3));
    const int O = 1 + static_cast<int>(rng.uniform_u64(4));
    const int T = 4 + static_cast<int>(rng.uniform_u64(30));
    auto p = random_conv(K, I, O, rng, true);
    const Tensor x = random_tensor(T, I, rng);
    const Tensor gy = random_tensor(T, O, rng);
    const auto ref = conv1d_backward(x, p, gy);
    std::vector<double> gx(x.size(), 0.0), gw(p.weights.size(), 0.0),
        gb(p.bias.size(), 0.0), s1, s2;
    conv_backward_params_gemm(x.data(), T, p, gy.data(), gw.data(), gb.data(), s1);
    conv_backward_input_gemm(p, T, gy.data(), gx.data(), s2);
    for (size_t j = 0; j < gx.size(); ++j)
      REQUIRE(rel_close(gx[j], ref.grad_x.values()[j], 1e-12));
    for (size_t j = 0; j < gw.size(); ++j)
      REQUIRE(rel_close(gw[j], ref.grad_weights[j], 1e-12));
    for (size_t j = 0; j < gb.size(); ++j)
      REQUIRE(rel_close(gb[j], ref.grad_bias[j], 1e-12));
  }
}

TEST_CASE("maxpool widths follow the floor law") {
  Rng rng(20);
  REQUIRE(maxpool_forward(random_tensor(375, 1, rng)).y.width() == 187);
  REQUIRE(maxpool_forward(random_tensor(23, 1, rng)).y.width() == 11);
  // the full published width chain
  const int widths[] = {3000, 1500, 750, 375, 187, 93, 46, 23, 11};
  for (int i = 0; i + 1 < 9; ++i)
    REQUIRE(maxpool_forward(random_tensor(widths[i], 1, rng)).y.width() == widths[i + 1]);
}

TEST_CASE("maxpool picks pair maxima, ties to the earlier index") {
  Tensor x(4, 1);
  x.at(0, 0) = 1;
  x.at(1, 0) = 3;
  x.at(2, 0) = 2;
  x.at(3, 0) = 0;
  const auto r = maxpool_forward(x);
  REQUIRE(r.y.at(0, 0) == 3.0);
  REQUIRE(r.y.at(1, 0) == 2.0);

  Tensor tie(2, 1);
  tie.at(0, 0) = tie.at(1, 0) = 5.0;
  REQUIRE(maxpool_forward(tie).argmax[0] == 0);

  Tensor gy(2, 1);
  gy.at(0, 0) = gy.at(1, 0) = 1.0;
  const Tensor gx = maxpool_backward(r.argmax, gy, 4);
  REQUIRE(gx.at(0, 0) == 0.0);
  REQUIRE(gx.at(1, 0) == 1.0);
  REQUIRE(gx.at(2, 0) == 1.0);
  REQUIRE(gx.at(3, 0) == 0.0);
}

TEST_CASE("maxpool backward conserves gradient mass and matches finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(8, 2, rng);
    // resample until no pooled pair is close enough to cross under fd steps
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < 2; ++c)
        while (std::abs(x.at(2 * t, c) - x.at(2 * t + 1, c)) < 1e-3)
          x.at(2 * t + 1, c) = rng.uniform(-1.0, 1.0);
    Tensor c = random_tensor(4, 2, rng);
    auto loss = [&] { return dot(maxpool_forward(x).y.values(), c.values()); };
    const auto r = maxpool_forward(x);
    const Tensor gx = maxpool_backward(r.argmax, c, 8);
    check_grads(gx.values(), fd_grad(x.values(), loss));

    double in_mass = 0.0, out_mass = 0.0;
    for (double v : gx.values()) in_mass += v;
    for (double v : c.values()) out_mass += v;
    REQUIRE(rel_close(in_mass, out_mass, 1e-12));
  }
}

TEST_CASE("batchnorm TRAIN normalizes to zero mean unit variance") {
  Rng rng(22);
  NormState st(3);
  std::vector<Tensor> batch;
  for (int b = 0; b < 4; ++b) batch.push_back(random_tensor(6, 3, rng, -2.0, 5.0));
  const auto out = batchnorm_forward(batch, st, Mode::TRAIN);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (const auto& t : out)
      for (int w = 0; w < 6; ++w) mean += t.at(w, c);
    mean /= 24.0;
    for (const auto& t : out)
      for (int w = 0; w < 6; ++w) var += (t.at(w, c) - mean) * (t.at(w, c) - mean);
    var /= 24.0;
    REQUIRE(std::abs(mean) < 1e-5);
    REQUIRE(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm EVAL with identity stats is the identity up to epsilon") {
  Rng rng(23);
  NormState st(2);  // running mean 0, running var 1 by construction
  std::vector<Tensor> batch{random_tensor(5, 2, rng)};
  const auto out = batchnorm_forward(batch, st, Mode::EVAL);
  for (size_t j = 0; j < batch[0].size(); ++j)
    REQUIRE(std::abs(out[0].values()[j] - batch[0].values()[j]) < 1e-5);
}

TEST_CASE("batchnorm TRAIN maps a constant channel to zero") {
  NormState st(1);
  std::vector<Tensor> batch{Tensor(4, 1, 3.25), Tensor(4, 1, 3.25)};
  const auto out = batchnorm_forward(batch, st, Mode::TRAIN);
  for (const auto& t : out)
    for (double v : t.values()) REQUIRE(v == 0.0);  // (c - c) / sqrt(0 + eps)
}

TEST_CASE("batchnorm rejects TRAIN batches smaller than two") {
  NormState st(1);
  std::vector<Tensor> batch{Tensor(4, 1, 1.0)};
  REQUIRE_THROWS_AS(batchnorm_forward(batch, st, Mode::TRAIN), BatchTooSmall);
}

TEST_CASE("batchnorm backward matches finite differences and sums to zero") {
  Rng rng(24);
  const int B = 3, W = 4, C = 2;
  std::vector<double> x(static_cast<size_t>(B) * W * C);
  for (auto& v : x) v = rng.uniform(-2.0, 2.0);
  std::vector<double> c(x.size());
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);

  auto run = [&](std::vector<double>& out) {
    NormState st(C);
    out.resize(x.size());
    batchnorm_forward_raw(x.data(), out.data(), x.size() / C, st, Mode::TRAIN);
    return st;
  };
  auto loss = [&] {
    std::vector<double> y;
    run(y);
    return dot(y, c);
  };
  std::vector<double> y;
  const NormState st = run(y);
  std::vector<double> gx(x.size(), 0.0);
  batchnorm_backward_raw(y.data(), c.data(), gx.data(), x.size() / C, st);
  check_grads(gx, fd_grad(x, loss));

  // zero upstream grad
  std::vector<double> gz(x.size(), 0.0), zeros(x.size(), 0.0);
  batchnorm_backward_raw(y.data(), zeros.data(), gz.data(), x.size() / C, st);
  for (double v : gz) REQUIRE(v == 0.0);

  // normalization removes the mean direction per channel
  for (int ch = 0; ch < C; ++ch) {
    double s = 0.0;
    for (size_t r = 0; r < x.size() / C; ++r) s += gx[r * C + ch];
    REQUIRE(std::abs(s) < 1e-8);
  }
}

TEST_CASE("scale layer basics") {
  Rng rng(25);
  ScaleParams p(64);
  REQUIRE(p.param_count() == 128);

  const Tensor x = random_tensor(5, 64, rng);
  const Tensor y = scale_forward(x, p);  // gamma 1, beta 0
  for (size_t j = 0; j < x.size(); ++j) REQUIRE(y.values()[j] == x.values()[j]);

  ScaleParams q(2);
  for (auto& g : q.gamma) g = rng.uniform(0.5, 2.0);
  for (auto& b : q.beta) b = rng.uniform(-1.0, 1.0);
  Tensor xx = random_tensor(6, 2, rng);
  Tensor c = random_tensor(6, 2, rng);
  auto loss = [&] { return dot(scale_forward(xx, q).values(), c.values()); };
  const auto g = scale_backward(xx, q, c);
  check_grads(g.grad_x.values(), fd_grad(xx.values(), loss));
  check_grads(g.grad_gamma, fd_grad(q.gamma, loss));
  check_grads(g.grad_beta, fd_grad(q.beta, loss));

  for (int ch = 0; ch < 2; ++ch) {
    double s = 0.0;
    for (int t = 0; t < 6; ++t) s += xx.at(t, ch) * c.at(t, ch);
    REQUIRE(rel_close(g.grad_gamma[ch], s, 1e-12));
  }
}

TEST_CASE("relu and its gradient mask") {
  Tensor x(3, 1);
  x.at(0, 0) = -1;
  x.at(1, 0) = 0;
  x.at(2, 0) = 2;
  const Tensor y = relu(x);
  REQUIRE(y.at(0, 0) == 0.0);
  REQUIRE(y.at(1, 0) == 0.0);
  REQUIRE(y.at(2, 0) == 2.0);

  Tensor ones(3, 1, 1.0);
  const Tensor g = relu_backward(x, ones);
  REQUIRE(g.at(0, 0) == 0.0);
  REQUIRE(g.at(1, 0) == 0.0);  // zero at exactly zero
  REQUIRE(g.at(2, 0) == 1.0);

  Rng rng(26);
  const Tensor r = random_tensor(16, 2, rng);
  const Tensor once = relu(r);
  const Tensor twice = relu(once);
  for (size_t j = 0; j < r.size(); ++j) REQUIRE(once.values()[j] == twice.values()[j]);
}

TEST_CASE("dropout is identity in EVAL mode and at keep_prob one") {
  Rng rng(27);
  const Tensor x = random_tensor(20, 3, rng);
  Rng r1(1);
  const auto eval = dropout(x, 0.5, Mode::EVAL, r1);
  for (size_t j = 0; j < x.size(); ++j)
    REQUIRE(eval.y.values()[j] == x.values()[j]);
  const auto keep_all = dropout(x, 1.0, Mode::TRAIN, r1);
  for (size_t j = 0; j < x.size(); ++j)
    REQUIRE(keep_all.y.values()[j] == x.values()[j]);
}

TEST_CASE("inverted dropout keeps the mean within one percent on 1e6 units") {
  Rng rng(28);
  Tensor x(100000, 10, 1.0);
  const auto r = dropout(x, 0.5, Mode::TRAIN, rng);
  double mean = 0.0;
  for (double v : r.y.values()) mean += v;
  mean /= static_cast<double>(r.y.size());
  REQUIRE(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("residual add") {
  Rng rng(29);
  const Tensor a = random_tensor(7, 2, rng);
  const Tensor zero(7, 2);
  const Tensor sum = residual_add(a, zero);
  for (size_t j = 0; j < a.size(); ++j) REQUIRE(sum.values()[j] == a.values()[j]);

  const Tensor b = random_tensor(7, 2, rng);
  const Tensor ab = residual_add(a, b);
  const Tensor ba = residual_add(b, a);
  for (size_t j = 0; j < ab.size(); ++j) REQUIRE(ab.values()[j] == ba.values()[j]);

  REQUIRE_THROWS_AS(residual_add(a, Tensor(7, 3)), ShapeMismatch);
}

TEST_CASE("dense layer: parameter count, zero weights, finite differences") {
  DenseParams big(5632, 5);
  REQUIRE(big.param_count() == 28165);

  Rng rng(30);
  DenseParams p(8, 3);
  for (auto& b : p.bias) b = rng.uniform(-1.0, 1.0);
  std::vector<double> x(8);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  const auto logits = dense_forward(x, p);  // zero weights
  for (int o = 0; o < 3; ++o) REQUIRE(logits[o] == p.bias[o]);

  for (auto& w : p.weights) w = rng.uniform(-1.0, 1.0);
  std::vector<double> c{0.3, -0.7, 1.1};
  auto loss = [&] { return dot(dense_forward(x, p), c); };
  const auto g = dense_backward(x, p, c);
  check_grads(g.grad_x, fd_grad(x, loss));
  check_grads(g.grad_weights, fd_grad(p.weights, loss));
  check_grads(g.grad_bias, fd_grad(p.bias, loss));
}

TEST_CASE("weighted softmax cross-entropy") {
  const std::vector<double> uniform(5, 0.7);
  const ClassWeights unit(5, 1.0);
  const auto r = weighted_softmax_ce(uniform, 2, unit);
  REQUIRE(rel_close(r.loss, std::log(5.0), 1e-12));

  Rng rng(31);
  std::vector<double> logits(5);
  for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
  ClassWeights w(5);
  for (auto& v : w) v = rng.uniform(0.2, 3.0);
  const int label = 3;

  const auto a = weighted_softmax_ce(logits, label, w);
  ClassWeights w2 = w;
  w2[label] *= 2.0;
  const auto b = weighted_softmax_ce(logits, label, w2);
  REQUIRE(rel_close(b.loss, 2.0 * a.loss, 1e-12));
  for (int c = 0; c < 5; ++c)
    REQUIRE(rel_close(b.grad_logits[c], 2.0 * a.grad_logits[c], 1e-12));

  auto loss = [&] { return weighted_softmax_ce(logits, label, w).loss; };
  check_grads(a.grad_logits, fd_grad(logits, loss), 1e-6);

  std::vector<double> bad = logits;
  bad[1] = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(weighted_softmax_ce(bad, label, w), NonFiniteLogit);

  // unit weights equal unweighted cross-entropy to machine precision
  const auto unitr = weighted_softmax_ce(logits, label, unit);
  const auto probs = softmax(logits);
  REQUIRE(unitr.loss == -std::log(probs[label]));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<double> params{1.0, -2.0, 0.5};
  const std::vector<double> zero(3, 0.0);
  AdamState s(3);
  adam_step(params, zero, s);
  REQUIRE(params[0] == 1.0);
  REQUIRE(params[1] == -2.0);
  REQUIRE(params[2] == 0.5);
}

TEST_CASE("adam: first step moves by about lr in the gradient's direction") {
  // With bias correction, mhat/sqrt(vhat) == sign(g) exactly on step one, so
  // the update is -lr * g / (|g| + eps') which is within eps of -lr*sign(g).
  std::vector<double> params{0.0};
  const std::vector<double> g{0.5};
  AdamState s(1);
  s.lr = 0.001;
  adam_step(params, g, s);
  REQUIRE(rel_close(params[0], -0.001, 1e-4));
}

TEST_CASE("adam: repeated identical gradients stay finite") {
  Rng rng(32);
  for (int trial = 0; trial < 32; ++trial) {
    std::vector<double> params{rng.uniform(-2.0, 2.0)};
    const std::vector<double> g{rng.uniform(-5.0, 5.0)};
    AdamState s(1);
    adam_step(params, g, s);
    const double p1 = params[0];
    adam_step(params, g, s);
    REQUIRE(std::isfinite(params[0]));
    REQUIRE(std::abs(params[0] - p1) >= 0.0);
  }
}

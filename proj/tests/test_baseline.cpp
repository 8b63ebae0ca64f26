#include <catch2/catch_amalgamated.hpp>

#include <numbers>

#include "sleepstack/features.hpp"
#include "sleepstack/filters.hpp"
#include "sleepstack/tree.hpp"
#include "testutil.hpp"

using namespace sleepstack;
using namespace sleepstack::baseline;
using testutil::rel_close;

namespace {

constexpr double kFs = 100.0;

std::vector<double> tone(double hz, int n = 3000, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / kFs + phase);
  return x;
}

double tail_amplitude(const std::vector<double>& y, size_t tail = 1000) {
  double m = 0.0;
  for (size_t i = y.size() - tail; i < y.size(); ++i) m = std::max(m, std::abs(y[i]));
  return m;
}

// Brute-force MMD straight from the definition, independent of the library
// loop structure.
double mmd_oracle(const std::vector<double>& x, int w) {
  double total = 0.0;
  for (size_t start = 0; start < x.size(); start += w) {
    double best_max = -1e300, best_min = 1e300;
    int arg_max = 0, arg_min = 0;
    for (int i = 0; i < w; ++i) {
      if (x[start + i] > best_max) {
        best_max = x[start + i];
        arg_max = i;
      }
      if (x[start + i] < best_min) {
        best_min = x[start + i];
        arg_min = i;
      }
    }
    const double di = static_cast<double>(arg_max - arg_min);
    const double dx = best_max - best_min;
    total += std::sqrt(di * di + dx * dx);
  }
  return total;
}

// Exhaustive root split: all features, all midpoints between distinct sorted
// values, weighted Gini; same tie convention (first feature, then lowest
// threshold).
struct OracleSplit {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double score = 1e300;
};

OracleSplit oracle_root(const std::vector<std::vector<double>>& X,
                        const std::vector<int>& y, int k, int min_leaf) {
  OracleSplit best;
  const int nf = static_cast<int>(X[0].size());
  for (int f = 0; f < nf; ++f) {
    std::vector<double> vals;
    for (const auto& row : X) vals.push_back(row[f]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (size_t t = 0; t + 1 < vals.size(); ++t) {
      const double thr = 0.5 * (vals[t] + vals[t + 1]);
      std::vector<long long> lc(k, 0), rc(k, 0);
      long long nl = 0, nr = 0;
      for (size_t i = 0; i < X.size(); ++i) {
        if (X[i][f] < thr) {
          lc[y[i]]++;
          nl++;
        } else {
          rc[y[i]]++;
          nr++;
        }
      }
      if (nl < min_leaf || nr < min_leaf) continue;
      auto gini = [&](const std::vector<long long>& c, long long n) {
        double g = 1.0;
        for (long long v : c) {
          const double p = static_cast<double>(v) / static_cast<double>(n);
          g -= p * p;
        }
        return g;
      };
      const double score =
          (static_cast<double>(nl) * gini(lc, nl) + static_cast<double>(nr) * gini(rc, nr)) /
          static_cast<double>(X.size());
      if (!best.found || score < best.score) {
        best = {true, f, thr, score};
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("bandpass design: passband center and DC rejection") {
  for (const auto& spec : default_bands()) {
    const auto chain = design_bandpass(spec, kFs);
    REQUIRE(chain.sections.size() == 4);

    // every pole strictly inside the unit circle
    for (const auto& s : chain.sections) {
      const std::complex<double> disc =
          std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
      REQUIRE(std::abs((-s.a1 + disc) / 2.0) < 1.0);
      REQUIRE(std::abs((-s.a1 - disc) / 2.0) < 1.0);
    }

    // center no more than 3 dB under the peak
    const double center = std::sqrt(spec.low_hz * spec.high_hz);
    double peak = 0.0;
    for (double f = 0.05; f < 49.9; f += 0.05)
      peak = std::max(peak, chain.magnitude(f, kFs));
    REQUIRE(chain.magnitude(center, kFs) >= peak * std::pow(10.0, -3.0 / 20.0));

    // a bandpass kills DC
    REQUIRE(chain.magnitude(0.0, kFs) < 1e-9);
    const auto dc = filter_signal(std::vector<double>(3000, 1.0), chain);
    REQUIRE(tail_amplitude(dc) < 1e-3);
  }
}

TEST_CASE("alpha band passes 10 Hz and rejects 40 Hz") {
  const auto chain = design_bandpass({Band::alpha, 8.0, 13.0, 4}, kFs);
  REQUIRE(tail_amplitude(filter_signal(tone(10.0), chain)) >= 0.7);
  REQUIRE(tail_amplitude(filter_signal(tone(40.0), chain)) < 0.1);
}

TEST_CASE("filter_signal: zeros, linearity, unrolled impulse response") {
  const auto chain = design_bandpass({Band::theta, 4.0, 8.0, 4}, kFs);
  const auto zeros = filter_signal(std::vector<double>(100, 0.0), chain);
  for (double v : zeros) REQUIRE(v == 0.0);

  Rng rng(55);
  std::vector<double> x(400);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  const auto y1 = filter_signal(x, chain);
  std::vector<double> x3 = x;
  for (auto& v : x3) v *= 3.5;
  const auto y3 = filter_signal(x3, chain);
  for (size_t i = 0; i < x.size(); ++i)
    REQUIRE(rel_close(y3[i], 3.5 * y1[i], 1e-10));

  // single random biquad, first three impulse-response samples by hand
  BiquadChain one;
  Biquad b{0.7, -0.3, 0.2, -0.4, 0.15};
  one.sections = {b};
  std::vector<double> impulse(8, 0.0);
  impulse[0] = 1.0;
  const auto h = filter_signal(impulse, one);
  REQUIRE(rel_close(h[0], b.b0, 1e-15));
  REQUIRE(rel_close(h[1], b.b1 - b.b0 * b.a1, 1e-15));
  REQUIRE(rel_close(h[2], b.b2 - b.b1 * b.a1 - b.b0 * (b.a2 - b.a1 * b.a1), 1e-15));
}

TEST_CASE("bandpass design rejects invalid bands") {
  REQUIRE_THROWS_AS(design_bandpass({Band::delta, 0.0, 4.0, 4}, kFs), UsageError);
  REQUIRE_THROWS_AS(design_bandpass({Band::gamma, 30.0, 50.0, 4}, kFs), UsageError);
  REQUIRE_THROWS_AS(design_bandpass({Band::delta, 8.0, 4.0, 4}, kFs), UsageError);
}

TEST_CASE("design is stable across random valid bands") {
  Rng rng(56);
  for (int trial = 0; trial < 50; ++trial) {
    BandSpec s;
    s.low_hz = rng.uniform(0.1, 40.0);
    s.high_hz = s.low_hz + rng.uniform(0.5, 49.0 - s.low_hz);
    s.order = 2 + static_cast<int>(rng.uniform_u64(4));
    REQUIRE_NOTHROW(design_bandpass(s, kFs));  // instability throws by contract
  }
}

TEST_CASE("mmd: constants, tiny window, oracle equivalence, offset invariance") {
  REQUIRE(mmd(std::vector<double>(300, 4.2), 100) == 0.0);
  REQUIRE(rel_close(mmd(std::vector<double>{0.0, 1.0}, 2), std::sqrt(2.0), 1e-15));

  Rng rng(57);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(3000);
    for (auto& v : x) v = rng.uniform(-30.0, 30.0);
    const int w = std::vector<int>{50, 100, 150}[trial % 3];
    REQUIRE(mmd(x, w) == mmd_oracle(x, w));
    const double base = mmd(x, w);
    std::vector<double> shifted = x;
    for (auto& v : shifted) v += 17.25;
    REQUIRE(rel_close(mmd(shifted, w), base, 1e-9));
  }
  REQUIRE_THROWS_AS(mmd(std::vector<double>(10, 0.0), 3), UsageError);
}

TEST_CASE("energy_sis basics") {
  REQUIRE(energy_sis(std::vector<double>(100, 0.0)) == 0.0);
  REQUIRE(energy_sis({3.0, 4.0}) == 25.0);
  Rng rng(58);
  std::vector<double> x(500);
  for (auto& v : x) v = rng.uniform(-2.0, 2.0);
  REQUIRE(rel_close(energy_sis([&] {
            auto y = x;
            for (auto& v : y) v *= 2.5;
            return y;
          }()),
          2.5 * 2.5 * energy_sis(x), 1e-12));
}

TEST_CASE("extract_features: zero epoch, length, alpha dominance for a 10 Hz tone") {
  const auto chains = design_band_filters();
  data::Epoch zero;
  zero.samples.assign(3000, 0.0f);
  const auto fz = extract_features(zero, chains);
  REQUIRE(fz.values.size() == 10);
  for (double v : fz.values) REQUIRE(v == 0.0);

  data::Epoch alpha;
  alpha.samples.resize(3000);
  const auto t = tone(10.0, 3000, 25.0);
  for (int i = 0; i < 3000; ++i) alpha.samples[i] = static_cast<float>(t[i]);
  const auto f = extract_features(alpha, chains);
  const double alpha_energy = f.values[2 * 2 + 1];
  for (int b = 0; b < 5; ++b) {
    if (b == 2) continue;
    REQUIRE(alpha_energy > f.values[2 * b + 1]);
  }
}

TEST_CASE("CART: pure input collapses to one leaf") {
  const std::vector<std::vector<double>> X{{0.0}, {1.0}, {5.0}};
  const auto t = train_tree(X, {2, 2, 2}, 3, {});
  REQUIRE(t.nodes.size() == 1);
  REQUIRE(t.nodes[0].leaf_class == 2);
}

TEST_CASE("CART: the published 1-D example splits perfectly between 1 and 2") {
  const std::vector<std::vector<double>> X{{0.0}, {1.0}, {2.0}, {3.0}};
  const std::vector<int> y{0, 0, 1, 1};
  TreeConfig cfg;
  cfg.min_leaf = 1;
  const auto t = train_tree(X, y, 2, cfg);
  REQUIRE_FALSE(t.nodes[0].is_leaf());
  REQUIRE(t.nodes[0].threshold > 1.0);
  REQUIRE(t.nodes[0].threshold < 2.0);
  // weighted child Gini 0 against a parent impurity of 0.5: gain one half
  const auto root = oracle_root(X, y, 2, 1);
  REQUIRE(root.score == 0.0);
  REQUIRE(t.predict({0.5}) == 0);
  REQUIRE(t.predict({2.5}) == 1);
}

TEST_CASE("CART: identical features with mixed labels force a majority leaf") {
  const std::vector<std::vector<double>> X{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}};
  const auto t = train_tree(X, {1, 0, 1}, 2, {});
  REQUIRE(t.nodes.size() == 1);
  REQUIRE(t.nodes[0].leaf_class == 1);
}

TEST_CASE("CART root split equals the exhaustive oracle on random data") {
  Rng rng(59);
  TreeConfig cfg;
  cfg.min_leaf = 1;
  cfg.max_depth = 1;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_u64(45));
    const int nf = 1 + static_cast<int>(rng.uniform_u64(3));
    const int k = 2 + static_cast<int>(rng.uniform_u64(2));
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    bool two_classes = false;
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(nf);
      for (auto& v : row) v = rng.uniform(-2.0, 2.0);
      X.push_back(row);
      y.push_back(static_cast<int>(rng.uniform_u64(k)));
      if (y.back() != y.front()) two_classes = true;
    }
    if (!two_classes) y.back() = (y.front() + 1) % k;
    const auto tree = train_tree(X, y, k, cfg);
    const auto oracle = oracle_root(X, y, k, 1);
    if (!oracle.found) {
      REQUIRE(tree.nodes[0].is_leaf());
      continue;
    }
    REQUIRE_FALSE(tree.nodes[0].is_leaf());
    REQUIRE(tree.nodes[0].feature == oracle.feature);
    REQUIRE(tree.nodes[0].threshold == oracle.threshold);
  }
}

TEST_CASE("balanced bagging: 71 trees, equal per-class bags, determinism") {
  Rng data_rng(60);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  // imbalanced three-class data
  const int counts[3] = {40, 12, 7};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < counts[c]; ++i) {
      X.push_back({data_rng.normal(c * 2.0, 0.5), data_rng.normal(-c, 0.5)});
      y.push_back(c);
    }
  }
  Rng rng1(99), rng2(99);
  const auto e1 = balanced_bagging_train(X, y, 3, rng1);
  REQUIRE(e1.trees.size() == 71);
  REQUIRE(e1.bag_class_counts.size() == 71);
  for (const auto& bag : e1.bag_class_counts) {
    REQUIRE(bag.size() == 3);
    REQUIRE(bag[0] == 7);  // the smallest class count
    REQUIRE(bag[1] == 7);
    REQUIRE(bag[2] == 7);
  }

  const auto e2 = balanced_bagging_train(X, y, 3, rng2);
  Rng probe(61);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> q{probe.uniform(-2.0, 6.0), probe.uniform(-4.0, 2.0)};
    REQUIRE(e1.predict(q) == e2.predict(q));

    // vote equals a hand recount of individual tree predictions
    std::vector<int> votes(3, 0);
    for (const auto& t : e1.trees) votes[t.predict(q)]++;
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (votes[c] > votes[best]) best = c;
    REQUIRE(e1.predict(q) == best);
  }

  SECTION("balanced input gives ordinary bootstrap-sized bags") {
    std::vector<std::vector<double>> bx;
    std::vector<int> by;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 10; ++i) {
        bx.push_back({static_cast<double>(c), 0.0});
        by.push_back(c);
      }
    Rng r(7);
    const auto e = balanced_bagging_train(bx, by, 3, r, 5);
    for (const auto& bag : e.bag_class_counts) {
      long long total = 0;
      for (long long v : bag) total += v;
      REQUIRE(total == static_cast<long long>(bx.size()));
    }
  }

  SECTION("an empty class refuses to train") {
    REQUIRE_THROWS_AS(balanced_bagging_train(X, y, 4, rng1), EmptyClass);
  }

  SECTION("JSON round trip preserves predictions and descriptors") {
    const auto j = e1.to_json();
    const auto back = BaggingEnsemble::from_json(j);
    REQUIRE(back.bag_class_counts == e1.bag_class_counts);
    Rng p2(62);
    for (int trial = 0; trial < 30; ++trial) {
      const std::vector<double> q{p2.uniform(-2.0, 6.0), p2.uniform(-4.0, 2.0)};
      REQUIRE(back.predict(q) == e1.predict(q));
    }
  }
}

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::analysis {

struct GroupTooSmall : DataError {
  explicit GroupTooSmall(const std::string& m) : DataError(m) {}
};
struct DegenerateSamples : DataError {
  explicit DegenerateSamples(const std::string& m) : DataError(m) {}
};

// ---- regularized incomplete beta -------------------------------------------

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz), iterated well
// past 1e-10 relative error.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw InternalError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// I_x(a, b), the regularized incomplete beta function.
inline double incbeta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw UsageError("incbeta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::betacf(a, b, x) / a;
  }
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// Right tail of the F distribution: Q(f; d1, d2) = P(F > f).
inline double f_survival(double f, double df1, double df2) {
  if (f <= 0.0) return 1.0;
  return incbeta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

inline double f_cdf(double f, double df1, double df2) {
  return 1.0 - f_survival(f, df1, df2);
}

// ---- one-way ANOVA ------------------------------------------------------------

struct AnovaResult {
  double F = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p_value = 1.0;
  bool zero_within_variance = false;  // SSW == 0 with SSB > 0; p forced to 0
};

inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw GroupTooSmall("ANOVA needs at least two groups");
  size_t n = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw GroupTooSmall("every ANOVA group needs >= 2 samples");
    n += g.size();
  }
  double grand = 0.0;
  for (const auto& g : groups)
    for (double v : g) grand += v;
  grand /= static_cast<double>(n);

  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    ssb += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
    for (double v : g) ssw += (v - mean) * (v - mean);
  }

  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(n - groups.size());
  if (ssw == 0.0) {
    if (ssb > 0.0) {
      r.zero_within_variance = true;
      r.F = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    } else {
      r.F = 0.0;
      r.p_value = 1.0;
    }
    return r;
  }
  r.F = (ssb / r.df_between) / (ssw / r.df_within);
  r.p_value = f_survival(r.F, r.df_between, r.df_within);
  return r;
}

// ---- kernel density estimate ---------------------------------------------------

struct KdeCurve {
  std::vector<double> xs;
  std::vector<double> density;
  double bandwidth = 0.0;
};

inline double silverman_bandwidth(const std::vector<double>& samples) {
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  return 1.06 * std::sqrt(var) * std::pow(n, -0.2);
}

// Gaussian-kernel estimate on an explicit grid; bandwidth <= 0 selects
// Silverman's rule.
inline KdeCurve kde(const std::vector<double>& samples, double bandwidth,
                    double grid_min, double grid_max, int grid_points) {
  if (samples.size() < 2) throw DegenerateSamples("KDE needs at least 2 samples");
  if (grid_points < 2 || !(grid_max > grid_min)) throw UsageError("bad KDE grid");
  KdeCurve c;
  c.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples);
  if (!(c.bandwidth > 0.0))
    throw DegenerateSamples("zero-variance samples have no density estimate");
  const double inv = 1.0 / (c.bandwidth * std::sqrt(2.0 * 3.14159265358979323846));
  c.xs.resize(grid_points);
  c.density.resize(grid_points);
  const double step = (grid_max - grid_min) / static_cast<double>(grid_points - 1);
  for (int i = 0; i < grid_points; ++i) {
    const double x = grid_min + step * i;
    double d = 0.0;
    for (double s : samples) {
      const double u = (x - s) / c.bandwidth;
      d += std::exp(-0.5 * u * u);
    }
    c.xs[i] = x;
    c.density[i] = d * inv / static_cast<double>(samples.size());
  }
  return c;
}

// Grid spanning the samples plus four bandwidths on each side.
inline KdeCurve kde_auto(const std::vector<double>& samples, int grid_points = 512) {
  if (samples.size() < 2) throw DegenerateSamples("KDE needs at least 2 samples");
  const double bw = silverman_bandwidth(samples);
  if (!(bw > 0.0)) throw DegenerateSamples("zero-variance samples");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  return kde(samples, bw, *lo - 4.0 * bw, *hi + 4.0 * bw, grid_points);
}

inline double trapezoid_integral(const KdeCurve& c) {
  double s = 0.0;
  for (size_t i = 1; i < c.xs.size(); ++i)
    s += 0.5 * (c.density[i] + c.density[i - 1]) * (c.xs[i] - c.xs[i - 1]);
  return s;
}

}  // namespace sleepstack::analysis

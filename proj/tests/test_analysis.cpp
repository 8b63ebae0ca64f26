#include <catch2/catch_amalgamated.hpp>

#include <numbers>

#include "sleepstack/metrics.hpp"
#include "sleepstack/report.hpp"
#include "sleepstack/spectral.hpp"
#include "sleepstack/stats.hpp"
#include "testutil.hpp"

using namespace sleepstack;
using namespace sleepstack::analysis;
using testutil::rel_close;

namespace {

std::vector<double> tone(double hz, int n = 3000, double amp = 1.0) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / 100.0);
  return x;
}

// F density via lgamma, integrated with composite Simpson; df1 == 1 uses the
// x = u^2 substitution to remove the endpoint singularity.
double f_pdf(double x, double d1, double d2) {
  if (x <= 0.0) return 0.0;
  const double lg = std::lgamma((d1 + d2) / 2.0) - std::lgamma(d1 / 2.0) -
                    std::lgamma(d2 / 2.0) + (d1 / 2.0) * std::log(d1 / d2) +
                    (d1 / 2.0 - 1.0) * std::log(x) -
                    ((d1 + d2) / 2.0) * std::log1p(d1 * x / d2);
  return std::exp(lg);
}

double f_cdf_by_integration(double F, double d1, double d2) {
  const int n = 200000;  // even
  double sum = 0.0;
  if (d1 == 1.0) {
    // x = u^2 removes the endpoint singularity; in closed form the
    // substituted integrand is 2 e^{lg0} u^{d1-1} (1 + d1 u^2/d2)^{-(d1+d2)/2},
    // finite and smooth at u = 0.
    const double lg0 = std::lgamma((d1 + d2) / 2.0) - std::lgamma(d1 / 2.0) -
                       std::lgamma(d2 / 2.0) + (d1 / 2.0) * std::log(d1 / d2);
    auto g = [&](double u) {
      return 2.0 * std::exp(lg0) *
             std::pow(1.0 + d1 * u * u / d2, -(d1 + d2) / 2.0);
    };
    const double umax = std::sqrt(F);
    const double h = umax / n;
    sum = g(0.0) + g(umax);
    for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * g(h * i);
    return sum * h / 3.0;
  }
  const double h = F / n;
  auto g = [&](double x) { return f_pdf(x, d1, d2); };
  sum = g(0.0) + g(F);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * g(h * i);
  return sum * h / 3.0;
}

// Minimal XML well-formedness check: tags balance and nest properly.
bool xml_well_formed(const std::string& s) {
  std::vector<std::string> stack;
  size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const size_t end = s.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?') continue;  // declaration
    if (tag[0] == '/') {
      if (stack.empty()) return false;
      if (stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    if (tag.back() == '/') continue;  // self-closing
    const auto name_end = tag.find_first_of(" \t\n");
    stack.push_back(tag.substr(0, name_end));
  }
  return stack.empty();
}

MetricsReport example_report() {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 8;
  cm.at(0, 1) = 2;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 9;
  std::vector<RecordingResult> recs{{"R1", "S1", "SC", 8, 10},
                                    {"R2", "S2", "SC", 9, 10}};
  return metrics(cm, recs);
}

}  // namespace

TEST_CASE("confusion matrix: diagonal, totals, length mismatch") {
  const std::vector<int> labels{0, 1, 2, 1, 0};
  const auto cm = confusion(labels, labels, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (r != c) REQUIRE(cm.at(r, c) == 0);
  REQUIRE(cm.total() == 5);
  REQUIRE(cm.trace() == 5);

  REQUIRE_THROWS_AS(confusion({0, 1}, {0}, 2), LengthMismatch);

  // row-percent convention used by the published confusion matrix
  ConfusionMatrix m(2);
  m.at(0, 0) = 3;
  m.at(0, 1) = 1;
  const auto pct = m.row_percent(0);
  REQUIRE(pct[0] == 75.0);
  REQUIRE(pct[1] == 25.0);
}

TEST_CASE("metrics: worked two-class example") {
  const auto r = example_report();
  REQUIRE(rel_close(r.sensitivity[0], 80.0, 1e-12));
  REQUIRE(rel_close(r.sensitivity[1], 90.0, 1e-12));
  REQUIRE(rel_close(r.specificity[0], 90.0, 1e-12));
  REQUIRE(rel_close(r.specificity[1], 80.0, 1e-12));
  REQUIRE(rel_close(r.epoch_wise_acc, 85.0, 1e-12));
  REQUIRE(rel_close(r.avg_sensitivity, 85.0, 1e-12));
}

TEST_CASE("metrics: identity predictions give perfect scores") {
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(i % 3);
  const auto cm = confusion(labels, labels, 3);
  const auto r = metrics(cm, {{"R", "S", "SC", 60, 60}});
  for (int c = 0; c < 3; ++c) {
    REQUIRE(r.sensitivity[c] == 100.0);
    REQUIRE(r.specificity[c] == 100.0);
  }
  REQUIRE(r.epoch_wise_acc == 100.0);
  REQUIRE(r.patient_wise_acc == 100.0);
}

TEST_CASE("metrics: epoch order does not matter") {
  Rng rng(70);
  std::vector<int> labels, preds;
  for (int i = 0; i < 200; ++i) {
    labels.push_back(static_cast<int>(rng.uniform_u64(4)));
    preds.push_back(static_cast<int>(rng.uniform_u64(4)));
  }
  const auto base = confusion(preds, labels, 4);
  std::vector<size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<int> labels2, preds2;
  for (size_t i : order) {
    labels2.push_back(labels[i]);
    preds2.push_back(preds[i]);
  }
  const auto shuffled = confusion(preds2, labels2, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) REQUIRE(base.at(r, c) == shuffled.at(r, c));

  // exact identity: accuracy is the row-weighted mean of sensitivities
  const auto rep = metrics(base, {});
  double weighted = 0.0;
  for (int c = 0; c < 4; ++c)
    weighted += static_cast<double>(base.row_total(c)) /
                static_cast<double>(base.total()) * rep.sensitivity[c];
  REQUIRE(rel_close(weighted, rep.epoch_wise_acc, 1e-12));
}

TEST_CASE("metrics: absent classes are excluded from macro means and flagged") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 4;  // class 2 never appears
  const auto r = metrics(cm, {});
  REQUIRE_FALSE(r.class_in_test[2]);
  REQUIRE(rel_close(r.avg_sensitivity, (100.0 + 80.0) / 2.0, 1e-12));
}

TEST_CASE("patient-wise pooling versus recording average") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 8;
  cm.at(1, 1) = 4;
  cm.at(1, 0) = 4;
  std::vector<RecordingResult> recs{
      {"A", "subj1", "SC", 4, 4},  // subject 1, two nights: 4/4 then 0/4
      {"B", "subj1", "SC", 0, 4},
      {"C", "subj2", "SC", 8, 8},
  };
  const auto r = metrics(cm, recs);
  REQUIRE(rel_close(r.patient_wise_acc, (50.0 + 100.0) / 2.0, 1e-12));
  REQUIRE(rel_close(r.recording_wise_acc, (100.0 + 0.0 + 100.0) / 3.0, 1e-12));
}

TEST_CASE("spectral rolloff: single bin, two bins, scale invariance") {
  const auto single = tone(10.0);
  for (double frac : {0.1, 0.5, 0.9})
    REQUIRE(rel_close(spectral_rolloff(single, 100.0, frac, Window::rect), 10.0, 1e-12));

  // equal-energy tones at 10 and 20 Hz: 85% of the energy needs both
  std::vector<double> two = tone(10.0);
  const auto t20 = tone(20.0);
  for (int i = 0; i < 3000; ++i) two[i] += t20[i];
  REQUIRE(rel_close(spectral_rolloff(two, 100.0, 0.85, Window::rect), 20.0, 1e-12));
  REQUIRE(rel_close(spectral_rolloff(two, 100.0), 20.0, 1e-9));  // Hann window

  std::vector<double> scaled = two;
  for (auto& v : scaled) v *= 37.0;
  REQUIRE(spectral_rolloff(scaled, 100.0) == spectral_rolloff(two, 100.0));

  REQUIRE_THROWS_AS(spectral_rolloff(std::vector<double>(3000, 0.0), 100.0), ZeroSignal);
}

TEST_CASE("spectral spread: single bin zero, two-bin hand value, scale invariance") {
  REQUIRE(spectral_spread(tone(10.0), 100.0, Window::rect) < 1e-6);

  std::vector<double> two = tone(10.0);
  const auto t20 = tone(20.0);
  for (int i = 0; i < 3000; ++i) two[i] += t20[i];
  REQUIRE(rel_close(spectral_spread(two, 100.0, Window::rect), 5.0, 1e-9));
  REQUIRE(rel_close(spectral_spread(two, 100.0), 5.0, 1e-3));

  std::vector<double> scaled = two;
  for (auto& v : scaled) v *= 0.02;
  REQUIRE(rel_close(spectral_spread(scaled, 100.0), spectral_spread(two, 100.0), 1e-9));

  REQUIRE_THROWS_AS(spectral_spread(std::vector<double>(3000, 0.0), 100.0), ZeroSignal);
}

TEST_CASE("one-way ANOVA: identical groups, worked example, invariances") {
  const std::vector<double> g{1.0, 2.0, 3.0};
  const auto same = one_way_anova({g, g});
  REQUIRE(same.F == 0.0);
  REQUIRE(same.p_value == 1.0);

  const auto r = one_way_anova({{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}});
  REQUIRE(r.F == 1.5);  // SSB 1.5 over df 1, SSW 4 over df 4
  REQUIRE(r.df_between == 1);
  REQUIRE(r.df_within == 4);

  // invariant under shifting everything and under scaling everything
  const auto shifted = one_way_anova({{101.0, 102.0, 103.0}, {102.0, 103.0, 104.0}});
  REQUIRE(rel_close(shifted.F, r.F, 1e-9));
  const auto scaled = one_way_anova({{3.0, 6.0, 9.0}, {6.0, 9.0, 12.0}});
  REQUIRE(rel_close(scaled.F, r.F, 1e-9));
  REQUIRE(rel_close(scaled.p_value, r.p_value, 1e-9));

  REQUIRE_THROWS_AS(one_way_anova({{1.0, 2.0}}), GroupTooSmall);
  REQUIRE_THROWS_AS(one_way_anova({{1.0}, {2.0, 3.0}}), GroupTooSmall);

  const auto degenerate = one_way_anova({{1.0, 1.0}, {2.0, 2.0}});
  REQUIRE(degenerate.zero_within_variance);
  REQUIRE(degenerate.p_value == 0.0);
}

TEST_CASE("F tail probabilities match direct numeric integration") {
  for (double d1 : {1.0, 4.0, 10.0}) {
    for (double d2 : {1.0, 4.0, 10.0}) {
      for (double F : {0.5, 1.5, 3.0}) {
        const double via_beta = f_cdf(F, d1, d2);
        const double via_quad = f_cdf_by_integration(F, d1, d2);
        INFO("d1=" << d1 << " d2=" << d2 << " F=" << F);
        REQUIRE(std::abs(via_beta - via_quad) < 1e-6);
      }
    }
  }
  // the worked ANOVA example's p-value, same two routes
  const auto r = one_way_anova({{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}});
  REQUIRE(std::abs((1.0 - r.p_value) - f_cdf_by_integration(1.5, 1, 4)) < 1e-6);
}

TEST_CASE("kernel density estimate: positivity, normalization, peak location") {
  Rng rng(71);
  std::vector<double> samples;
  for (int i = 0; i < 10000; ++i) samples.push_back(rng.normal(0.0, 1.0));
  const auto curve = kde_auto(samples);
  for (double d : curve.density) REQUIRE(d >= 0.0);
  REQUIRE(std::abs(trapezoid_integral(curve) - 1.0) < 0.02);

  double peak_x = 0.0, peak = -1.0;
  for (size_t i = 0; i < curve.xs.size(); ++i) {
    if (curve.density[i] > peak) {
      peak = curve.density[i];
      peak_x = curve.xs[i];
    }
  }
  REQUIRE(std::abs(peak_x) < 0.1);

  // Silverman bandwidth formula
  REQUIRE(rel_close(curve.bandwidth, silverman_bandwidth(samples), 1e-12));
  REQUIRE_THROWS_AS(kde_auto(std::vector<double>(50, 3.0)), DegenerateSamples);
  REQUIRE_THROWS_AS(kde_auto(std::vector<double>{1.0}), DegenerateSamples);
}

TEST_CASE("report emission: deterministic bytes, well-formed SVG, empty refused") {
  const auto rep = example_report();
  const std::vector<std::string> names{"A", "B"};
  REQUIRE(metrics_csv(rep, names) == metrics_csv(rep, names));

  const std::vector<RecordingResult> recs{{"R1", "S1", "SC", 8, 10},
                                          {"R2", "S2", "ST", 9, 10}};
  const auto svg1 = per_recording_svg(recs, "title");
  REQUIRE(svg1 == per_recording_svg(recs, "title"));
  REQUIRE(xml_well_formed(svg1));

  Rng rng(72);
  std::vector<double> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(rng.normal(0.0, 1.0));
    b.push_back(rng.normal(1.0, 1.5));
  }
  const auto svg2 = kde_svg({{"SC", kde_auto(a)}, {"ST", kde_auto(b)}}, "curves");
  REQUIRE(xml_well_formed(svg2));
  REQUIRE(svg2 == kde_svg({{"SC", kde_auto(a)}, {"ST", kde_auto(b)}}, "curves"));

  MetricsReport empty;
  REQUIRE_THROWS_AS(metrics_csv(empty, {}), IoFailure);
  REQUIRE_THROWS_AS(per_recording_svg({}, "t"), IoFailure);
}

TEST_CASE("anova csv clamps minuscule p-values and keeps 20-row shape upstream") {
  AnovaRow row;
  row.feature = "mmd";
  row.band = "delta";
  row.result.F = 1000.0;
  row.result.df_between = 1;
  row.result.df_within = 100;
  row.result.p_value = 1e-310;
  const auto csv = anova_csv({row});
  REQUIRE(csv.find("1e-300") != std::string::npos);
  REQUIRE(p_value_text(1e-310) == "<1e-300");
  REQUIRE(p_value_text(0.5) == "0.5");
}

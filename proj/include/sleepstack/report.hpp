#pragma once

#include <fstream>
#include <functional>
#include <sstream>

#include "sleepstack/features.hpp"
#include "sleepstack/metrics.hpp"
#include "sleepstack/spectral.hpp"
#include "sleepstack/stats.hpp"

namespace sleepstack::analysis {

struct IoFailure : DataError {
  explicit IoFailure(const std::string& m) : DataError(m) {}
};

namespace detail {

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path);
  out << content;
  if (!out) throw IoFailure("short write to " + path);
}

}  // namespace detail

// ---- CSV emission -----------------------------------------------------------

inline std::string metrics_csv(const MetricsReport& r,
                               const std::vector<std::string>& class_names) {
  if (r.num_classes == 0) throw IoFailure("refusing to write an empty metrics report");
  std::ostringstream os;
  os << "metric,class,value\n";
  for (int c = 0; c < r.num_classes; ++c) {
    if (!r.class_in_test[c]) {
      os << "excluded_from_macro," << class_names[c] << ",1\n";
      continue;
    }
    os << "sensitivity," << class_names[c] << "," << detail::fmt(r.sensitivity[c]) << "\n";
  }
  for (int c = 0; c < r.num_classes; ++c) {
    if (!r.class_in_test[c]) continue;
    os << "specificity," << class_names[c] << "," << detail::fmt(r.specificity[c]) << "\n";
  }
  os << "avg_sensitivity,," << detail::fmt(r.avg_sensitivity) << "\n";
  os << "avg_specificity,," << detail::fmt(r.avg_specificity) << "\n";
  os << "epoch_wise_acc,," << detail::fmt(r.epoch_wise_acc) << "\n";
  os << "patient_wise_acc,," << detail::fmt(r.patient_wise_acc) << "\n";
  os << "recording_wise_acc,," << detail::fmt(r.recording_wise_acc) << "\n";
  return os.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm,
                                 const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "true\\pred";
  for (int c = 0; c < cm.num_classes(); ++c) os << "," << class_names[c];
  os << ",row_percents\n";
  for (int r = 0; r < cm.num_classes(); ++r) {
    os << class_names[r];
    for (int c = 0; c < cm.num_classes(); ++c) os << "," << cm.at(r, c);
    const auto pct = cm.row_percent(r);
    os << ",";
    for (int c = 0; c < cm.num_classes(); ++c)
      os << (c ? " " : "") << detail::fmt(pct[c]);
    os << "\n";
  }
  return os.str();
}

inline std::string per_recording_csv(const std::vector<RecordingResult>& rows) {
  std::ostringstream os;
  os << "recording_id,subject_id,subset,accuracy\n";
  for (const auto& r : rows)
    os << r.recording_id << "," << r.subject_id << "," << r.subset << ","
       << detail::fmt(r.accuracy()) << "\n";
  return os.str();
}

// ---- SVG emission -----------------------------------------------------------
// Minimal deterministic SVG 1.1: fixed canvas, fixed precision, no
// timestamps, so identical inputs give identical bytes.

namespace detail {

class Svg {
public:
  Svg(int w, int h) : w_(w), h_(h) {
    os_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\""
        << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h
        << "\">\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    os_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\""
        << fmt(w) << "\" height=\"" << fmt(h) << "\" fill=\"" << fill << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
    os_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\""
        << fmt(x2) << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << stroke
        << "\" stroke-width=\"1\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& stroke) {
    os_ << "<polyline fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < pts.size(); ++i)
      os_ << (i ? " " : "") << fmt(pts[i].first) << "," << fmt(pts[i].second);
    os_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 10) {
    os_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\""
        << size << "\" font-family=\"sans-serif\">" << escape(s) << "</text>\n";
  }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

private:
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '&') out += "&amp;";
      else if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else out += c;
    }
    return out;
  }

  int w_, h_;
  std::ostringstream os_;
};

}  // namespace detail

// Per-recording accuracy bars, one bar per test recording.
inline std::string per_recording_svg(const std::vector<RecordingResult>& rows,
                                     const std::string& title) {
  if (rows.empty()) throw IoFailure("no per-recording results to plot");
  const int W = 900, H = 420, left = 60, bottom = 70, top = 40;
  detail::Svg svg(W, H);
  svg.text(left, top - 16, title, 13);
  const double plot_w = W - left - 20, plot_h = H - top - bottom;
  svg.line(left, top, left, top + plot_h, "black");
  svg.line(left, top + plot_h, left + plot_w, top + plot_h, "black");
  for (int pct = 0; pct <= 100; pct += 20) {
    const double y = top + plot_h * (1.0 - pct / 100.0);
    svg.line(left - 4, y, left, y, "black");
    svg.text(left - 38, y + 4, std::to_string(pct) + "%", 9);
  }
  const double bw = plot_w / static_cast<double>(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    const double acc = rows[i].accuracy();
    const double h = plot_h * acc / 100.0;
    const std::string fill = rows[i].subset == "ST" ? "#d08060" : "#4878a8";
    svg.rect(left + bw * i + bw * 0.125, top + plot_h - h, bw * 0.75, h, fill);
    svg.text(left + bw * i + bw * 0.2, top + plot_h + 12 + 10 * (i % 2),
             rows[i].recording_id, 8);
  }
  svg.text(left, H - 12, "blue: SC recordings, orange: ST recordings", 10);
  return svg.finish();
}

// Kernel-density curves for one feature, one curve per named group.
inline std::string kde_svg(const std::vector<std::pair<std::string, KdeCurve>>& curves,
                           const std::string& title) {
  if (curves.empty()) throw IoFailure("no density curves to plot");
  const int W = 700, H = 420, left = 60, bottom = 50, top = 40;
  const double plot_w = W - left - 20, plot_h = H - top - bottom;
  double xmin = 1e300, xmax = -1e300, ymax = 0.0;
  for (const auto& [name, c] : curves) {
    xmin = std::min(xmin, c.xs.front());
    xmax = std::max(xmax, c.xs.back());
    for (double d : c.density) ymax = std::max(ymax, d);
  }
  if (!(ymax > 0.0)) throw IoFailure("degenerate density curves");

  detail::Svg svg(W, H);
  svg.text(left, top - 16, title, 13);
  svg.line(left, top, left, top + plot_h, "black");
  svg.line(left, top + plot_h, left + plot_w, top + plot_h, "black");
  static const char* palette[] = {"#4878a8", "#d08060", "#60a860", "#a860a8"};
  int ci = 0;
  for (const auto& [name, c] : curves) {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(c.xs.size());
    for (size_t i = 0; i < c.xs.size(); ++i) {
      const double px = left + plot_w * (c.xs[i] - xmin) / (xmax - xmin);
      const double py = top + plot_h * (1.0 - c.density[i] / ymax);
      pts.emplace_back(px, py);
    }
    const std::string color = palette[ci % 4];
    svg.polyline(pts, color);
    svg.rect(left + 10, top + 10 + 16 * ci, 10, 10, color);
    svg.text(left + 26, top + 19 + 16 * ci, name, 10);
    ++ci;
  }
  svg.text(left + plot_w / 2 - 40, H - 14, "scaled feature value", 10);
  return svg.finish();
}

// ---- subset heterogeneity analysis -------------------------------------------

// Per-epoch, per-band features: MMD, EnergySis, spectral rolloff, spectral
// spread, each computed on the band-filtered epoch.
struct BandFeatures {
  // [band][feature] with features ordered mmd, energy_sis, rolloff, spread
  std::array<std::array<double, 4>, 5> values{};
  data::Subset subset = data::Subset::SC;
};

inline const char* band_feature_name(int f) {
  static const char* names[] = {"mmd", "energy_sis", "spectral_rolloff",
                                "spectral_spread"};
  return names[f];
}

inline BandFeatures band_features(const data::Epoch& epoch,
                                  const std::vector<baseline::BiquadChain>& chains,
                                  int mmd_window = 100) {
  BandFeatures out;
  out.subset = epoch.subset;
  for (size_t b = 0; b < chains.size(); ++b) {
    const auto banded = baseline::filter_signal(epoch.samples, chains[b]);
    out.values[b][0] = baseline::mmd(banded, mmd_window);
    out.values[b][1] = baseline::energy_sis(banded);
    out.values[b][2] = spectral_rolloff(banded, data::kSamplingRateHz);
    out.values[b][3] = spectral_spread(banded, data::kSamplingRateHz);
  }
  return out;
}

struct AnovaRow {
  std::string feature;
  std::string band;
  AnovaResult result;
};

// One-way ANOVA of SC versus ST for each of the 20 (feature, band) pairs.
inline std::vector<AnovaRow> subset_anova(const std::vector<BandFeatures>& rows) {
  std::vector<AnovaRow> table;
  const auto bands = baseline::default_bands();
  for (int f = 0; f < 4; ++f) {
    for (int b = 0; b < 5; ++b) {
      std::vector<double> sc, st;
      for (const auto& r : rows)
        (r.subset == data::Subset::SC ? sc : st).push_back(r.values[b][f]);
      AnovaRow row;
      row.feature = band_feature_name(f);
      row.band = baseline::band_name(bands[b].name);
      row.result = one_way_anova({sc, st});
      table.push_back(std::move(row));
    }
  }
  return table;
}

inline std::string anova_csv(const std::vector<AnovaRow>& table) {
  std::ostringstream os;
  os << "feature,band,F,df_b,df_w,p\n";
  for (const auto& r : table) {
    // p-values below 1e-300 are clamped; text output renders them as a bound
    const double p = std::max(r.result.p_value, r.result.p_value == 0.0 ? 0.0 : 1e-300);
    os << r.feature << "," << r.band << "," << detail::fmt(r.result.F) << ","
       << r.result.df_between << "," << r.result.df_within << ","
       << detail::fmt(p) << "\n";
  }
  return os.str();
}

inline std::string p_value_text(double p) {
  if (p < 1e-300) return "<1e-300";
  return detail::fmt(p);
}

// Min-max scaling to [0,1] over the pooled population, as used for the
// density figures.
inline std::vector<double> minmax_scale(std::vector<double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  if (span == 0.0) throw DegenerateSamples("constant feature cannot be scaled");
  for (auto& x : v) x = (x - *lo) / span;
  return v;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  detail::write_file(path, content);
}

}  // namespace sleepstack::analysis

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "sleepstack/checkpoint.hpp"
#include "sleepstack/report.hpp"
#include "sleepstack/store.hpp"
#include "sleepstack/trainer.hpp"
#include "sleepstack/tree.hpp"

namespace sleepstack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration resolution -------------------------------------------------
// Precedence: command-line flag > JSON config file > SLEEPSTACK_* environment
// variable > built-in default. The effective configuration is echoed to
// run_config.json in the output directory, and a rerun from that echo
// reproduces the run.

class ConfigResolver {
public:
  ConfigResolver(json config_file, std::function<const char*(const char*)> getenv_fn =
                                       [](const char* k) { return std::getenv(k); })
      : cfg_(std::move(config_file)), getenv_(std::move(getenv_fn)) {}

  template <typename T>
  T resolve(const std::string& key, bool flag_set, T flag_value, T fallback) const {
    if (flag_set) return flag_value;
    if (cfg_.contains(key)) {
      try {
        return cfg_.at(key).get<T>();
      } catch (const json::exception& e) {
        throw UsageError("config key '" + key + "': " + e.what());
      }
    }
    std::string env = "SLEEPSTACK_";
    for (char c : key) env += static_cast<char>(c == '-' ? '_' : std::toupper(c));
    if (const char* v = getenv_(env.c_str())) return parse_env<T>(env, v);
    return fallback;
  }

private:
  template <typename T>
  static T parse_env(const std::string& name, const std::string& v) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return v;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw UsageError("boolean env " + name + " must be 0/1/true/false");
      } else if constexpr (std::is_floating_point_v<T>) {
        return static_cast<T>(std::stod(v));
      } else {
        return static_cast<T>(std::stoll(v));
      }
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception&) {
      throw UsageError("cannot parse env " + name + "='" + v + "'");
    }
  }

  json cfg_;
  std::function<const char*(const char*)> getenv_;
};

inline json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw UsageError(std::string("cannot open ") + what + " " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad JSON in ") + path + ": " + e.what());
  }
  return j;
}

inline data::SplitManifest load_manifest(const std::string& path) {
  return data::SplitManifest::from_json(load_json_file(path, "manifest"));
}

inline void write_run_config(const fs::path& out_dir, const json& effective) {
  std::ofstream out(out_dir / "run_config.json", std::ios::trunc);
  if (!out) throw analysis::IoFailure("cannot write run_config.json");
  out << effective.dump(2) << "\n";
}

// ---- ingest ---------------------------------------------------------------------

struct IngestOptions {
  std::string data_dir;
  std::string manifest;   // optional: restrict to the manifest's recordings
  int scheme = 6;
  std::string channel = "EEG Fpz-Cz";
  std::string out_dir;
};

struct IngestSummary {
  data::LabelScheme scheme;
  long long total = 0;
  // per subset: class counts and subject sets
  std::map<std::string, std::vector<long long>> subset_counts;
  std::map<std::string, std::set<std::string>> subset_subjects;
  std::vector<std::string> recordings;
};

namespace detail {

inline std::vector<uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

// PSG/hypnogram pairing by the corpus convention: the hypnogram file shares
// the recording id's first 7 characters.
inline fs::path find_hypnogram(const fs::path& dir, const std::string& rec_id) {
  const std::string prefix = rec_id.substr(0, std::min<size_t>(7, rec_id.size()));
  std::vector<fs::path> hits;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 &&
        (name.ends_with("-Hypnogram.edf") || name.ends_with("-Hypnogram.tsv")))
      hits.push_back(e.path());
  }
  if (hits.empty())
    throw DataError("no hypnogram found for recording " + rec_id);
  if (hits.size() > 1)
    throw DataError("ambiguous hypnograms for recording " + rec_id);
  return hits.front();
}

}  // namespace detail

// Parses one recording pair into labelled epochs.
inline std::vector<data::Epoch> ingest_recording(const fs::path& psg_path,
                                                 const fs::path& hyp_path,
                                                 const data::LabelScheme& scheme,
                                                 const std::string& channel) {
  const auto psg_bytes = detail::read_bytes(psg_path);
  const auto header = edf::parse_edf_header(psg_bytes);
  const int sig = edf::find_signal(header, channel);
  const double rate = header.sampling_rate(header.signals[sig]);
  if (rate != data::kSamplingRateHz)
    throw DataError(psg_path.filename().string() + ": channel '" + channel +
                    "' runs at " + std::to_string(rate) +
                    " Hz; this pipeline requires exactly 100 Hz");
  const auto signal = edf::read_signal(psg_bytes, header, channel);
  const auto hyp = edf::parse_hypnogram(detail::read_bytes(hyp_path));

  std::string rec_id = psg_path.filename().string();
  if (const auto pos = rec_id.find("-PSG"); pos != std::string::npos)
    rec_id = rec_id.substr(0, pos);
  return data::segment_epochs(signal, hyp, scheme, data::recording_meta(rec_id));
}

inline std::string summary_csv(const IngestSummary& s) {
  std::ostringstream os;
  const auto& scheme = s.scheme;
  // Table-style column order: stages first, wake and total last.
  std::vector<int> class_order;
  if (scheme.mode == data::SchemeMode::SIX_STAGE) class_order = {1, 2, 3, 4, 5, 0};
  else class_order = {1, 2, 3, 4, 0};
  os << "subset,subjects";
  for (int c : class_order) os << "," << data::class_name(c, scheme);
  os << ",total\n";
  std::vector<long long> grand(scheme.num_classes(), 0);
  std::set<std::string> all_subjects;
  for (const auto& [subset, counts] : s.subset_counts) {
    os << subset << "," << s.subset_subjects.at(subset).size();
    long long row = 0;
    for (int c : class_order) {
      os << "," << counts[c];
    }
    for (int c = 0; c < scheme.num_classes(); ++c) {
      row += counts[c];
      grand[c] += counts[c];
    }
    all_subjects.insert(s.subset_subjects.at(subset).begin(),
                        s.subset_subjects.at(subset).end());
    os << "," << row << "\n";
  }
  os << "total," << all_subjects.size();
  long long g = 0;
  for (int c : class_order) os << "," << grand[c];
  for (long long v : grand) g += v;
  os << "," << g << "\n";
  return os.str();
}

inline IngestSummary cmd_ingest(const IngestOptions& opt) {
  const auto scheme = data::LabelScheme::from_classes(opt.scheme);
  if (!fs::is_directory(opt.data_dir))
    throw UsageError("data dir " + opt.data_dir + " does not exist");

  // enumerate PSG files
  std::map<std::string, fs::path> psgs;
  for (const auto& e : fs::directory_iterator(opt.data_dir)) {
    const std::string name = e.path().filename().string();
    if (name.ends_with("-PSG.edf"))
      psgs[name.substr(0, name.size() - 8)] = e.path();
  }

  std::vector<std::string> wanted;
  if (!opt.manifest.empty()) {
    const auto man = load_manifest(opt.manifest);
    wanted = man.train_recordings;
    wanted.insert(wanted.end(), man.test_recordings.begin(), man.test_recordings.end());
    std::vector<std::string> missing;
    for (const auto& id : wanted)
      if (!psgs.count(id)) missing.push_back(id);
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw DataError("recordings missing from " + opt.data_dir + ": " + list);
    }
  } else {
    for (const auto& [id, p] : psgs) wanted.push_back(id);
  }
  if (wanted.empty()) throw DataError("no recordings found in " + opt.data_dir);

  std::vector<data::Epoch> all;
  for (const auto& id : wanted) {
    const auto hyp = detail::find_hypnogram(opt.data_dir, id);
    auto eps = ingest_recording(psgs.at(id), hyp, scheme, opt.channel);
    std::move(eps.begin(), eps.end(), std::back_inserter(all));
  }

  fs::create_directories(opt.out_dir);
  data::write_store((fs::path(opt.out_dir) / "epochs.bin").string(), all, scheme);

  IngestSummary s;
  s.scheme = scheme;
  s.total = static_cast<long long>(all.size());
  s.recordings = wanted;
  for (const auto& e : all) {
    const std::string subset = data::subset_name(e.subset);
    auto& counts = s.subset_counts[subset];
    if (counts.empty()) counts.assign(scheme.num_classes(), 0);
    counts[e.label]++;
    s.subset_subjects[subset].insert(e.subject_id);
  }
  analysis::write_text_file((fs::path(opt.out_dir) / "summary.csv").string(),
                            summary_csv(s));
  return s;
}

// ---- train ----------------------------------------------------------------------

struct TrainOptions {
  std::string store;
  std::string manifest;
  int scheme = 6;
  training::TrainConfig train;
  std::string out_dir;
  bool dry_run = false;
  int threads = 0;
};

inline std::string param_report_csv(net::Model& m) {
  std::ostringstream os;
  os << "layer,params\n";
  long long total = 0;
  for (const auto& [name, count] : m.param_report()) {
    os << name << "," << count << "\n";
    total += count;
  }
  os << "total," << total << "\n";
  return os.str();
}

inline void cmd_train(const TrainOptions& opt) {
  fs::create_directories(opt.out_dir);
  if (opt.dry_run) {
    net::Model m = net::Model::build(opt.scheme, opt.train.seed);
    const auto csv = param_report_csv(m);
    analysis::write_text_file((fs::path(opt.out_dir) / "param_report.csv").string(), csv);
    std::cout << csv;
    return;
  }
  auto store = data::read_store(opt.store);
  if (store.scheme.num_classes() != opt.scheme)
    throw UsageError("store was ingested with " +
                     std::to_string(store.scheme.num_classes()) +
                     " classes but --scheme says " + std::to_string(opt.scheme));
  const auto manifest = load_manifest(opt.manifest);
  auto split = data::build_split(std::move(store.epochs), manifest);
  if (split.train.empty()) throw DataError("manifest selects no training epochs");

  ThreadPool pool(opt.threads ? opt.threads : 0);
  net::Model model = net::Model::build(opt.scheme, opt.train.seed);
  const auto history = training::train(model, split.train, opt.train, nullptr, &pool);

  net::save_checkpoint(model, (fs::path(opt.out_dir) / "model.ckpt").string());
  std::ostringstream hist;
  history.write_csv(hist);
  analysis::write_text_file((fs::path(opt.out_dir) / "history.csv").string(), hist.str());
}

// ---- eval -----------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string store;
  std::string manifest;
  std::string out_dir;
  int batch_size = 64;
  int threads = 0;
};

struct EvalOutcome {
  analysis::MetricsReport report;
  analysis::ConfusionMatrix cm{0};
};

inline std::vector<analysis::RecordingResult> per_recording_results(
    const std::vector<data::Epoch>& epochs, const std::vector<int>& preds) {
  std::map<std::string, analysis::RecordingResult> by_rec;
  for (size_t i = 0; i < epochs.size(); ++i) {
    auto& r = by_rec[epochs[i].recording_id];
    if (r.recording_id.empty()) {
      r.recording_id = epochs[i].recording_id;
      r.subject_id = epochs[i].subject_id;
      r.subset = data::subset_name(epochs[i].subset);
    }
    r.total++;
    if (preds[i] == epochs[i].label) r.correct++;
  }
  std::vector<analysis::RecordingResult> out;
  for (auto& [id, r] : by_rec) out.push_back(std::move(r));
  return out;
}

inline std::vector<std::string> scheme_class_names(const data::LabelScheme& scheme) {
  std::vector<std::string> names;
  for (int c = 0; c < scheme.num_classes(); ++c)
    names.push_back(data::class_name(c, scheme));
  return names;
}

inline EvalOutcome evaluate_predictions(const std::vector<data::Epoch>& test,
                                        const std::vector<int>& preds,
                                        const data::LabelScheme& scheme,
                                        const fs::path& out_dir,
                                        const std::string& prefix) {
  std::vector<int> labels(test.size());
  for (size_t i = 0; i < test.size(); ++i) labels[i] = test[i].label;
  EvalOutcome out;
  out.cm = analysis::confusion(preds, labels, scheme.num_classes());
  const auto per_rec = per_recording_results(test, preds);
  out.report = analysis::metrics(out.cm, per_rec);

  const auto names = scheme_class_names(scheme);
  fs::create_directories(out_dir);
  analysis::write_text_file((out_dir / (prefix + "metrics.csv")).string(),
                            analysis::metrics_csv(out.report, names));
  analysis::write_text_file((out_dir / (prefix + "confusion.csv")).string(),
                            analysis::confusion_csv(out.cm, names));
  analysis::write_text_file((out_dir / (prefix + "per_recording.csv")).string(),
                            analysis::per_recording_csv(per_rec));
  analysis::write_text_file(
      (out_dir / (prefix + "per_recording.svg")).string(),
      analysis::per_recording_svg(per_rec, "Epoch-wise accuracy per test recording"));
  return out;
}

inline EvalOutcome cmd_eval(const EvalOptions& opt) {
  auto store = data::read_store(opt.store);
  const auto manifest = load_manifest(opt.manifest);
  auto split = data::build_split(std::move(store.epochs), manifest);
  if (split.test.empty()) throw DataError("manifest selects no test epochs");

  net::Model model = net::load_checkpoint(opt.checkpoint, store.scheme.num_classes());
  ThreadPool pool(opt.threads ? opt.threads : 0);
  const auto preds = training::predict(model, split.test, opt.batch_size, &pool);
  return evaluate_predictions(split.test, preds, store.scheme, opt.out_dir, "");
}

// ---- baseline ------------------------------------------------------------------

struct BaselineOptions {
  std::string store;
  std::string manifest;
  std::string out_dir;
  std::string checkpoint;  // optional: adds the network rows to combined.csv
  uint64_t seed = 0;
  int n_trees = 71;
  int batch_size = 64;
  int threads = 0;
};

inline std::string features_csv(const std::vector<baseline::FeatureVector>& rows) {
  std::ostringstream os;
  os << "recording_id,epoch_idx,label";
  for (int f = 0; f < 10; ++f) os << ",f" << f;
  os << "\n";
  for (const auto& r : rows) {
    os << r.recording_id << "," << r.position_index << "," << r.label;
    for (double v : r.values) os << "," << analysis::detail::fmt(v);
    os << "\n";
  }
  return os.str();
}

struct BaselineOutcome {
  analysis::MetricsReport report;
  baseline::BaggingEnsemble ensemble;
};

inline BaselineOutcome cmd_baseline(const BaselineOptions& opt) {
  auto store = data::read_store(opt.store);
  const auto scheme = store.scheme;
  const auto manifest = load_manifest(opt.manifest);
  auto split = data::build_split(std::move(store.epochs), manifest);
  if (split.train.empty() || split.test.empty())
    throw DataError("manifest selects empty train or test side");

  const auto chains = baseline::design_band_filters();
  auto featurize = [&](const std::vector<data::Epoch>& eps) {
    std::vector<baseline::FeatureVector> out;
    out.reserve(eps.size());
    for (const auto& e : eps) out.push_back(baseline::extract_features(e, chains));
    return out;
  };
  const auto train_feat = featurize(split.train);
  const auto test_feat = featurize(split.test);

  fs::create_directories(opt.out_dir);
  analysis::write_text_file((fs::path(opt.out_dir) / "features.csv").string(),
                            features_csv(train_feat));

  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (const auto& f : train_feat) {
    X.emplace_back(f.values.begin(), f.values.end());
    y.push_back(f.label);
  }
  Rng rng(Rng::child_seed(opt.seed, "baseline:bagging"));
  BaselineOutcome out;
  out.ensemble = baseline::balanced_bagging_train(X, y, scheme.num_classes(), rng,
                                                  opt.n_trees);
  analysis::write_text_file((fs::path(opt.out_dir) / "ensemble.json").string(),
                            out.ensemble.to_json().dump(2) + "\n");

  std::vector<int> preds(test_feat.size());
  for (size_t i = 0; i < test_feat.size(); ++i) {
    preds[i] = out.ensemble.predict(
        std::vector<double>(test_feat[i].values.begin(), test_feat[i].values.end()));
  }
  const auto outcome =
      evaluate_predictions(split.test, preds, scheme, opt.out_dir, "baseline_");
  out.report = outcome.report;

  // side-by-side rows when a network checkpoint is also supplied
  std::ostringstream comb;
  comb << "system,avg_sens,avg_spec,epoch_wise_acc,patient_wise_acc\n";
  comb << "baseline," << analysis::detail::fmt(out.report.avg_sensitivity) << ","
       << analysis::detail::fmt(out.report.avg_specificity) << ","
       << analysis::detail::fmt(out.report.epoch_wise_acc) << ","
       << analysis::detail::fmt(out.report.patient_wise_acc) << "\n";
  if (!opt.checkpoint.empty()) {
    net::Model model = net::load_checkpoint(opt.checkpoint, scheme.num_classes());
    ThreadPool pool(opt.threads ? opt.threads : 0);
    const auto net_preds = training::predict(model, split.test, opt.batch_size, &pool);
    std::vector<int> labels(split.test.size());
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = split.test[i].label;
    const auto net_cm = analysis::confusion(net_preds, labels, scheme.num_classes());
    const auto net_rep =
        analysis::metrics(net_cm, per_recording_results(split.test, net_preds));
    comb << "network," << analysis::detail::fmt(net_rep.avg_sensitivity) << ","
         << analysis::detail::fmt(net_rep.avg_specificity) << ","
         << analysis::detail::fmt(net_rep.epoch_wise_acc) << ","
         << analysis::detail::fmt(net_rep.patient_wise_acc) << "\n";
  }
  analysis::write_text_file((fs::path(opt.out_dir) / "combined.csv").string(),
                            comb.str());
  return out;
}

// ---- analyze -------------------------------------------------------------------

struct AnalyzeOptions {
  std::string store;
  std::string out_dir;
};

inline std::vector<analysis::AnovaRow> cmd_analyze(const AnalyzeOptions& opt) {
  auto store = data::read_store(opt.store);
  bool has_sc = false, has_st = false;
  for (const auto& e : store.epochs) {
    has_sc |= e.subset == data::Subset::SC;
    has_st |= e.subset == data::Subset::ST;
  }
  if (!has_sc || !has_st)
    throw DataError("subset analysis needs both SC and ST epochs in the store");

  const auto chains = baseline::design_band_filters();
  std::vector<analysis::BandFeatures> rows;
  rows.reserve(store.epochs.size());
  for (const auto& e : store.epochs)
    rows.push_back(analysis::band_features(e, chains));

  const auto table = analysis::subset_anova(rows);
  fs::create_directories(opt.out_dir);
  analysis::write_text_file((fs::path(opt.out_dir) / "anova.csv").string(),
                            analysis::anova_csv(table));

  // density figures for the gamma band, min-max scaled over the pooled data
  for (const int feature : {1, 2}) {  // energy_sis, spectral_rolloff
    std::vector<double> pooled;
    for (const auto& r : rows) pooled.push_back(r.values[4][feature]);
    const auto scaled = analysis::minmax_scale(pooled);
    std::vector<double> sc, st;
    for (size_t i = 0; i < rows.size(); ++i)
      (rows[i].subset == data::Subset::SC ? sc : st).push_back(scaled[i]);
    const auto sc_curve = analysis::kde_auto(sc);
    const auto st_curve = analysis::kde_auto(st);
    const std::string name = analysis::band_feature_name(feature);
    analysis::write_text_file(
        (fs::path(opt.out_dir) / ("kde_gamma_" + name + ".svg")).string(),
        analysis::kde_svg({{"SC", sc_curve}, {"ST", st_curve}},
                          "Gamma-band " + name + " density by subset"));
  }
  return table;
}

}  // namespace sleepstack::cli

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "sleepstack/epochs.hpp"
#include "sleepstack/filters.hpp"
#include "sleepstack/rng.hpp"

namespace sleepstack::synth {

// ---- EDF writing (synthetic corpora and tests only) -------------------------

namespace detail {

inline void put_field(std::string& out, const std::string& v, size_t len,
                      const std::string& what) {
  if (v.size() > len)
    throw DataError("EDF field '" + what + "' too long: '" + v + "'");
  out += v;
  out.append(len - v.size(), ' ');
}

inline std::string num_field(double v, size_t len) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8g", v);
  std::string s(buf);
  if (s.size() > len) {
    std::snprintf(buf, sizeof(buf), "%.*g", static_cast<int>(len) - 3, v);
    s = buf;
  }
  return s;
}

}  // namespace detail

inline std::string write_edf_header(const edf::EdfHeader& h) {
  using detail::put_field;
  std::string out;
  out.reserve(256 + 256 * h.signals.size());
  put_field(out, h.version, 8, "version");
  put_field(out, h.patient_id, 80, "patient");
  put_field(out, h.recording_id, 80, "recording");
  put_field(out, h.start_date, 8, "start date");
  put_field(out, h.start_time, 8, "start time");
  put_field(out, std::to_string(256 + 256 * h.signals.size()), 8, "header bytes");
  put_field(out, h.reserved, 44, "reserved");
  put_field(out, std::to_string(h.num_records), 8, "num records");
  put_field(out, detail::num_field(h.record_duration_s, 8), 8, "record duration");
  put_field(out, std::to_string(h.signals.size()), 4, "num signals");
  for (const auto& s : h.signals) put_field(out, s.label, 16, "label");
  for (const auto& s : h.signals) put_field(out, s.transducer, 80, "transducer");
  for (const auto& s : h.signals) put_field(out, s.physical_dim, 8, "dim");
  for (const auto& s : h.signals)
    put_field(out, detail::num_field(s.physical_min, 8), 8, "phys min");
  for (const auto& s : h.signals)
    put_field(out, detail::num_field(s.physical_max, 8), 8, "phys max");
  for (const auto& s : h.signals)
    put_field(out, std::to_string(s.digital_min), 8, "dig min");
  for (const auto& s : h.signals)
    put_field(out, std::to_string(s.digital_max), 8, "dig max");
  for (const auto& s : h.signals) put_field(out, s.prefiltering, 80, "prefilter");
  for (const auto& s : h.signals)
    put_field(out, std::to_string(s.samples_per_record), 8, "spr");
  for (size_t s = 0; s < h.signals.size(); ++s) put_field(out, "", 32, "reserved2");
  return out;
}

// Interleaves per-signal digital samples into data records. Each signal must
// hold num_records * samples_per_record values.
inline std::vector<uint8_t> write_edf(const edf::EdfHeader& h,
                                      const std::vector<std::vector<int16_t>>& digital) {
  if (digital.size() != h.signals.size())
    throw DataError("write_edf: one sample vector per signal required");
  for (size_t s = 0; s < digital.size(); ++s) {
    if (digital[s].size() !=
        static_cast<size_t>(h.num_records) * h.signals[s].samples_per_record)
      throw DataError("write_edf: sample count mismatch for signal " +
                      h.signals[s].label);
  }
  const std::string head = write_edf_header(h);
  std::vector<uint8_t> out(head.begin(), head.end());
  for (long long r = 0; r < h.num_records; ++r) {
    for (size_t s = 0; s < digital.size(); ++s) {
      const int spr = h.signals[s].samples_per_record;
      for (int i = 0; i < spr; ++i) {
        const auto v = static_cast<uint16_t>(digital[s][r * spr + i]);
        out.push_back(static_cast<uint8_t>(v & 0xff));
        out.push_back(static_cast<uint8_t>(v >> 8));
      }
    }
  }
  return out;
}

inline int16_t to_digital(double physical, const edf::SignalSpec& s) {
  const double gain = (s.physical_max - s.physical_min) /
                      (static_cast<double>(s.digital_max) - s.digital_min);
  double d = s.digital_min + (physical - s.physical_min) / gain;
  d = std::min(static_cast<double>(s.digital_max),
               std::max(static_cast<double>(s.digital_min), std::round(d)));
  return static_cast<int16_t>(d);
}

inline const char* stage_annotation(edf::Stage s) {
  switch (s) {
    case edf::Stage::W: return "Sleep stage W";
    case edf::Stage::S1: return "Sleep stage 1";
    case edf::Stage::S2: return "Sleep stage 2";
    case edf::Stage::S3: return "Sleep stage 3";
    case edf::Stage::S4: return "Sleep stage 4";
    case edf::Stage::REM: return "Sleep stage R";
    case edf::Stage::MVT: return "Movement time";
    case edf::Stage::UNSCORED: return "Sleep stage ?";
  }
  return "?";
}

// EDF+ hypnogram: a single annotation record holding every TAL.
inline std::vector<uint8_t> write_hypnogram_edf(
    const std::vector<edf::HypnogramAnnotation>& anns) {
  std::string tals = "+0\x14\x14";
  tals += '\0';
  for (const auto& a : anns) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "+%g\x15%g\x14%s\x14", a.onset_s, a.duration_s,
                  stage_annotation(a.stage));
    tals += buf;
    tals += '\0';
  }
  if (tals.size() % 2) tals += '\0';

  edf::EdfHeader h;
  h.version = "0";
  h.patient_id = "synthetic";
  h.recording_id = "synthetic hypnogram";
  h.start_date = "01.01.01";
  h.start_time = "00.00.00";
  h.reserved = "EDF+C";
  h.num_records = 1;
  h.record_duration_s = anns.empty() ? 1.0 : anns.back().onset_s + anns.back().duration_s;
  edf::SignalSpec s;
  s.label = "EDF Annotations";
  s.physical_dim = "";
  s.physical_min = -1;
  s.physical_max = 1;
  s.digital_min = -32768;
  s.digital_max = 32767;
  s.samples_per_record = static_cast<int>(tals.size() / 2);
  h.signals = {s};
  h.num_signals = 1;

  const std::string head = write_edf_header(h);
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), tals.begin(), tals.end());
  return out;
}

inline std::string write_hypnogram_tsv(const std::vector<edf::HypnogramAnnotation>& anns) {
  std::string out = "onset_s\tduration_s\tstage\n";
  for (const auto& a : anns) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%g\t%g\t%s\n", a.onset_s, a.duration_s,
                  stage_annotation(a.stage));
    out += buf;
  }
  return out;
}

// ---- synthetic corpus --------------------------------------------------------
//
// Band-limited class signatures loosely shaped after sleep EEG: slow
// high-amplitude waves for deep sleep, alpha/beta mixtures for wake, and so
// on. The two subsets deliberately differ in most band features while their
// gamma-band energy is matched (only its in-band tilt differs), so the
// subset-heterogeneity analysis has structure to find.

inline std::vector<double> synth_epoch_signal(edf::Stage stage, data::Subset subset,
                                              Rng& rng) {
  using std::numbers::pi;
  const bool st = subset == data::Subset::ST;
  std::vector<double> x(data::kEpochSamples, 0.0);
  auto add_line = [&](double hz, double amp) {
    const double phase = rng.uniform(0.0, 2.0 * pi);
    for (int i = 0; i < data::kEpochSamples; ++i)
      x[i] += amp * std::sin(2.0 * pi * hz * i / data::kSamplingRateHz + phase);
  };

  // Class-discriminative tones, moderate amplitude so the subset beds below
  // stay visible, capped clear of the gamma filter skirt.
  struct Comp {
    double hz, amp;
  };
  std::vector<Comp> comps;
  switch (stage) {
    case edf::Stage::W: comps = {{10.0, 11.0}, {22.0, 5.0}}; break;
    case edf::Stage::S1: comps = {{5.0, 9.0}, {9.0, 5.0}}; break;
    case edf::Stage::S2: comps = {{13.5, 10.0}, {3.0, 6.0}}; break;
    case edf::Stage::S3: comps = {{1.5, 12.0}, {6.0, 5.0}}; break;
    case edf::Stage::S4: comps = {{0.8, 14.0}, {2.2, 6.0}}; break;
    case edf::Stage::REM: comps = {{6.5, 9.0}, {25.0, 5.0}}; break;
    default: comps = {{4.0, 4.0}}; break;
  }
  for (const auto& c : comps) {
    const double hz = st ? std::min(c.hz * 1.12, 27.0) : c.hz;
    double amp = c.amp * rng.uniform(0.85, 1.15);
    if (st) {
      if (c.hz < 8.0) amp *= 1.25;
      else if (c.hz < 14.0) amp *= 0.7;
      else amp *= 1.2;
    }
    add_line(hz, amp);
  }

  // Per-band noise beds carry the subset identity in every epoch: ST tilts
  // each bed toward its low edge and rescales it, except the gamma bed whose
  // energy through the gamma band filter is matched between subsets by
  // construction (its in-band tilt still differs).
  struct Bed {
    std::array<double, 4> lines;
    double rms;
    double st_gain;
  };
  static const std::array<Bed, 4> beds{{
      {{1.0, 1.7, 2.4, 3.1}, 8.0, 1.5},     // delta
      {{4.5, 5.5, 6.5, 7.5}, 6.0, 1.4},     // theta
      {{8.5, 10.0, 11.5, 12.8}, 6.0, 0.6},  // alpha
      {{14.0, 18.0, 22.0, 26.0}, 5.0, 1.4}, // beta
  }};
  const double epoch_gain = rng.uniform(0.9, 1.1);  // jitters energy, not shape
  for (const auto& bed : beds) {
    double norm = 0.0;
    std::array<double, 4> w{};
    for (int k = 0; k < 4; ++k) {
      w[k] = st ? 1.0 / (1.0 + 0.6 * k) : 1.0;
      norm += w[k] * w[k];
    }
    const double rms = bed.rms * (st ? bed.st_gain : 1.0);
    const double scale = rms * std::sqrt(2.0) / std::sqrt(norm);
    for (int k = 0; k < 4; ++k) {
      add_line(bed.lines[k] + rng.uniform(-0.15, 0.15),
               w[k] * scale * epoch_gain * rng.uniform(0.95, 1.05));
    }
  }

  static const auto gamma_gain = [] {
    const auto chain = baseline::design_bandpass(
        {baseline::Band::gamma, 30.0, 49.9, 4}, data::kSamplingRateHz);
    std::array<double, 10> g{};
    for (int k = 0; k < 10; ++k)
      g[k] = chain.magnitude(31.0 + 2.0 * k, data::kSamplingRateHz);
    return g;
  }();
  std::array<double, 10> line_amp{};
  double filtered_norm = 0.0;
  for (int k = 0; k < 10; ++k) {
    line_amp[k] = st ? 1.0 / (1.0 + 0.6 * k) : 1.0;
    filtered_norm += line_amp[k] * line_amp[k] * gamma_gain[k] * gamma_gain[k];
  }
  const double gamma_scale = 6.0 * std::sqrt(2.0) / std::sqrt(filtered_norm);
  for (int k = 0; k < 10; ++k) {
    add_line(31.0 + 2.0 * k + rng.uniform(-0.7, 0.7),
             line_amp[k] * gamma_scale * epoch_gain * rng.uniform(0.95, 1.05));
  }

  for (int i = 0; i < data::kEpochSamples; ++i) x[i] += rng.normal(0.0, 2.0);
  return x;
}

struct CorpusOptions {
  int sc_subjects = 2;
  int st_subjects = 2;
  int nights_per_subject = 2;
  int scored_epochs_per_recording = 30;  // excludes the MVT/unscored tail
  bool tsv_hypnograms = false;
  uint64_t seed = 7;
};

// A stage sequence that covers every scored stage at least once (given at
// least six scored epochs), with an MVT and an unscored epoch appended so
// ingestion has something to drop.
inline std::vector<edf::HypnogramAnnotation> synth_hypnogram(int scored_epochs,
                                                             Rng& rng) {
  std::vector<edf::Stage> stages{edf::Stage::W,  edf::Stage::S1, edf::Stage::S2,
                                 edf::Stage::S3, edf::Stage::S4, edf::Stage::REM};
  std::vector<edf::HypnogramAnnotation> anns;
  double onset = 0.0;
  int left = scored_epochs;
  rng.shuffle(stages);
  for (const auto s : stages) {
    if (left == 0) break;
    anns.push_back({onset, 30.0, s});
    onset += 30.0;
    --left;
  }
  size_t c = rng.uniform_u64(6);
  while (left > 0) {
    const int run = static_cast<int>(1 + rng.uniform_u64(std::min(left, 4)));
    anns.push_back({onset, 30.0 * run, stages[c % 6]});
    onset += 30.0 * run;
    left -= run;
    ++c;
  }
  anns.push_back({onset, 30.0, edf::Stage::MVT});
  anns.push_back({onset + 30.0, 30.0, edf::Stage::UNSCORED});
  return anns;
}

inline edf::SignalSpec eeg_signal_spec(const std::string& label) {
  edf::SignalSpec s;
  s.label = label;
  s.transducer = "synthetic";
  s.physical_dim = "uV";
  s.physical_min = -250.0;
  s.physical_max = 250.0;
  s.digital_min = -2048;
  s.digital_max = 2047;
  s.samples_per_record = 3000;  // 30 s records at 100 Hz
  return s;
}

// Writes <id>-PSG.edf plus a hypnogram file, returning the recording id.
inline std::string write_recording(const std::filesystem::path& dir,
                                   const std::string& recording_id,
                                   data::Subset subset, int scored_epochs,
                                   bool tsv, Rng& rng) {
  const auto anns = synth_hypnogram(scored_epochs, rng);
  const double total_s = anns.back().onset_s + anns.back().duration_s;
  const int n_epochs = static_cast<int>(total_s / 30.0);

  edf::EdfHeader h;
  h.version = "0";
  h.patient_id = recording_id + " synthetic";
  h.recording_id = "Startdate 01-JAN-2001 synthetic";
  h.start_date = "01.01.01";
  h.start_time = "22.00.00";
  h.num_records = n_epochs;
  h.record_duration_s = 30.0;
  h.signals = {eeg_signal_spec("EEG Fpz-Cz"), eeg_signal_spec("EEG Pz-Oz")};
  h.num_signals = 2;

  std::vector<std::vector<int16_t>> digital(2);
  for (auto& d : digital) d.reserve(static_cast<size_t>(n_epochs) * 3000);
  // Stage per 30 s slot, then one signal epoch per slot.
  std::vector<edf::Stage> slots(n_epochs, edf::Stage::UNSCORED);
  for (const auto& a : anns) {
    for (int j = 0; j < static_cast<int>(a.duration_s / 30.0); ++j)
      slots[static_cast<size_t>(a.onset_s / 30.0) + j] = a.stage;
  }
  for (int e = 0; e < n_epochs; ++e) {
    const auto x = synth_epoch_signal(slots[e], subset, rng);
    const auto x2 = synth_epoch_signal(slots[e], subset, rng);
    for (int i = 0; i < 3000; ++i) {
      digital[0].push_back(to_digital(x[i], h.signals[0]));
      digital[1].push_back(to_digital(0.5 * x2[i], h.signals[1]));
    }
  }

  const auto psg = write_edf(h, digital);
  std::ofstream out(dir / (recording_id + "-PSG.edf"), std::ios::binary);
  out.write(reinterpret_cast<const char*>(psg.data()),
            static_cast<std::streamsize>(psg.size()));

  // Hypnogram file names share the recording id's 7-char prefix, mirroring
  // the corpus convention (SC4001E0-PSG + SC4001EC-Hypnogram).
  const std::string hyp_stem = recording_id.substr(0, 7) + "H-Hypnogram";
  if (tsv) {
    std::ofstream hout(dir / (hyp_stem + ".tsv"));
    hout << write_hypnogram_tsv(anns);
  } else {
    const auto hyp = write_hypnogram_edf(anns);
    std::ofstream hout(dir / (hyp_stem + ".edf"), std::ios::binary);
    hout.write(reinterpret_cast<const char*>(hyp.data()),
               static_cast<std::streamsize>(hyp.size()));
  }
  return recording_id;
}

// Seeded patient-independent split over the given recordings: the last
// n_test_subjects of a shuffled subject list form the test side. The SC task
// keeps only SC recordings.
inline data::SplitManifest make_split_manifest(const std::vector<std::string>& ids,
                                               data::SplitManifest::Task task,
                                               int n_test_subjects, uint64_t seed) {
  std::map<std::string, std::vector<std::string>> by_subject;
  for (const auto& id : ids) {
    const auto meta = data::recording_meta(id);
    if (task == data::SplitManifest::Task::SC_TASK && meta.subset != data::Subset::SC)
      continue;
    by_subject[meta.subject_id].push_back(id);
  }
  if (static_cast<int>(by_subject.size()) <= n_test_subjects)
    throw UsageError("not enough subjects for the requested test side");
  std::vector<std::string> subjects;
  for (const auto& [s, r] : by_subject) subjects.push_back(s);
  Rng rng(Rng::child_seed(seed, "synth:manifest"));
  rng.shuffle(subjects);

  data::SplitManifest man;
  man.task = task;
  for (size_t i = 0; i < subjects.size(); ++i) {
    auto& side = (i + n_test_subjects >= subjects.size()) ? man.test_recordings
                                                          : man.train_recordings;
    for (const auto& id : by_subject[subjects[i]]) side.push_back(id);
  }
  std::sort(man.train_recordings.begin(), man.train_recordings.end());
  std::sort(man.test_recordings.begin(), man.test_recordings.end());
  man.validate();
  return man;
}

// Generates a miniature two-subset corpus under the dataset's naming scheme.
inline std::vector<std::string> generate_corpus(const std::filesystem::path& dir,
                                                const CorpusOptions& opt) {
  std::filesystem::create_directories(dir);
  Rng rng(Rng::child_seed(opt.seed, "synth:corpus"));
  std::vector<std::string> ids;
  for (int s = 0; s < opt.sc_subjects; ++s) {
    for (int n = 1; n <= opt.nights_per_subject; ++n) {
      char id[16];
      std::snprintf(id, sizeof(id), "SC4%02d%dE0", s, n);
      ids.push_back(write_recording(dir, id, data::Subset::SC,
                                    opt.scored_epochs_per_recording,
                                    opt.tsv_hypnograms, rng));
    }
  }
  for (int s = 0; s < opt.st_subjects; ++s) {
    for (int n = 1; n <= opt.nights_per_subject; ++n) {
      char id[16];
      std::snprintf(id, sizeof(id), "ST7%02d%dJ0", s, n);
      ids.push_back(write_recording(dir, id, data::Subset::ST,
                                    opt.scored_epochs_per_recording,
                                    opt.tsv_hypnograms, rng));
    }
  }
  return ids;
}

}  // namespace sleepstack::synth

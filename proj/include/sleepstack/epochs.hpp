#pragma once

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sleepstack/edf.hpp"

namespace sleepstack::data {

constexpr int kEpochSamples = 3000;  // 30 s at 100 Hz
constexpr double kSamplingRateHz = 100.0;
constexpr int kDrop = -1;

struct EpochOutOfBounds : DataError {
  explicit EpochOutOfBounds(const std::string& m) : DataError(m) {}
};
struct UnknownRecordingId : DataError {
  explicit UnknownRecordingId(const std::string& m) : DataError(m) {}
};
struct SubjectLeakage : DataError {
  explicit SubjectLeakage(const std::string& m) : DataError(m) {}
};

enum class Subset { SC, ST };

inline const char* subset_name(Subset s) { return s == Subset::SC ? "SC" : "ST"; }

enum class SchemeMode { SIX_STAGE, FIVE_STAGE };

// Stage-to-class mapping. Movement time and unscored epochs are dropped in
// both modes; the five-stage mode fuses S3 and S4 into one deep-sleep class.
struct LabelScheme {
  SchemeMode mode = SchemeMode::SIX_STAGE;

  int num_classes() const { return mode == SchemeMode::SIX_STAGE ? 6 : 5; }

  static LabelScheme six() { return {SchemeMode::SIX_STAGE}; }
  static LabelScheme five() { return {SchemeMode::FIVE_STAGE}; }
  static LabelScheme from_classes(int k) {
    if (k == 6) return six();
    if (k == 5) return five();
    throw UsageError("scheme must be 5 or 6");
  }
};

inline int map_label(edf::Stage stage, const LabelScheme& scheme) {
  switch (stage) {
    case edf::Stage::W: return 0;
    case edf::Stage::S1: return 1;
    case edf::Stage::S2: return 2;
    case edf::Stage::S3: return 3;
    case edf::Stage::S4: return scheme.mode == SchemeMode::FIVE_STAGE ? 3 : 4;
    case edf::Stage::REM: return scheme.mode == SchemeMode::FIVE_STAGE ? 4 : 5;
    case edf::Stage::MVT:
    case edf::Stage::UNSCORED: return kDrop;
  }
  return kDrop;
}

inline std::string class_name(int label, const LabelScheme& scheme) {
  static const std::array<const char*, 6> six{"W", "S1", "S2", "S3", "S4", "REM"};
  static const std::array<const char*, 5> five{"W", "S1", "S2", "S3S4", "REM"};
  if (scheme.mode == SchemeMode::SIX_STAGE) return six.at(label);
  return five.at(label);
}

// One labelled 30 s training example. Samples are stored in physical units
// (microvolts) as 32-bit reals, matching the on-disk epoch store.
struct Epoch {
  std::vector<float> samples;
  int label = 0;
  std::string recording_id;
  std::string subject_id;
  Subset subset = Subset::SC;
  int position_index = 0;
};

struct RecordingMeta {
  std::string recording_id;
  std::string subject_id;
  Subset subset = Subset::SC;
};

// Derives subject identity from the corpus naming scheme: SC4ssN... night N
// of SC subject ss, ST7ssN... night N of ST subject ss. Anything else is its
// own subject.
inline RecordingMeta recording_meta(const std::string& recording_id) {
  RecordingMeta m;
  m.recording_id = recording_id;
  if (recording_id.size() >= 6 && recording_id.rfind("SC4", 0) == 0) {
    m.subset = Subset::SC;
    m.subject_id = "SC" + recording_id.substr(3, 2);
  } else if (recording_id.size() >= 6 && recording_id.rfind("ST7", 0) == 0) {
    m.subset = Subset::ST;
    m.subject_id = "ST" + recording_id.substr(3, 2);
  } else {
    m.subset = recording_id.rfind("ST", 0) == 0 ? Subset::ST : Subset::SC;
    m.subject_id = recording_id;
  }
  return m;
}

// Cuts the signal into labelled 30 s epochs. Epochs whose stage maps to DROP
// are absent from the output; an annotation reaching past the signal is an
// error rather than a short epoch.
inline std::vector<Epoch> segment_epochs(const std::vector<double>& signal,
                                         const std::vector<edf::HypnogramAnnotation>& hyp,
                                         const LabelScheme& scheme,
                                         const RecordingMeta& meta) {
  std::vector<Epoch> out;
  for (const auto& a : hyp) {
    const int n = static_cast<int>(a.duration_s / 30.0);
    const int label = map_label(a.stage, scheme);
    for (int j = 0; j < n; ++j) {
      const double onset = a.onset_s + 30.0 * j;
      const auto start = static_cast<long long>(std::llround(onset * kSamplingRateHz));
      if (start < 0 || start + kEpochSamples > static_cast<long long>(signal.size()))
        throw EpochOutOfBounds(meta.recording_id + ": annotation at " +
                               std::to_string(onset) + " s reaches past the signal");
      if (label == kDrop) continue;
      Epoch e;
      e.samples.resize(kEpochSamples);
      for (int i = 0; i < kEpochSamples; ++i)
        e.samples[i] = static_cast<float>(signal[start + i]);
      e.label = label;
      e.recording_id = meta.recording_id;
      e.subject_id = meta.subject_id;
      e.subset = meta.subset;
      e.position_index = static_cast<int>(std::llround(onset / 30.0));
      out.push_back(std::move(e));
    }
  }
  return out;
}

// Per-class epoch counts in the table convention (S1,S2,S3,S4,REM,W order is
// a display concern; indices here are class indices).
inline std::vector<long long> class_counts(const std::vector<Epoch>& epochs,
                                           int num_classes) {
  std::vector<long long> counts(num_classes, 0);
  for (const auto& e : epochs) counts.at(e.label)++;
  return counts;
}

// ---- train/test split -------------------------------------------------------

struct SplitManifest {
  enum class Task { RS_TASK, SC_TASK };
  Task task = Task::RS_TASK;
  std::vector<std::string> train_recordings;
  std::vector<std::string> test_recordings;

  static const char* task_name(Task t) {
    return t == Task::RS_TASK ? "rs_task" : "sc_task";
  }
  static Task task_from(const std::string& s) {
    if (s == "rs_task" || s == "rs") return Task::RS_TASK;
    if (s == "sc_task" || s == "sc") return Task::SC_TASK;
    throw DataError("manifest: unknown task '" + s + "'");
  }

  static SplitManifest from_json(const nlohmann::json& j) {
    SplitManifest m;
    try {
      m.task = task_from(j.at("task").get<std::string>());
      m.train_recordings = j.at("train_recordings").get<std::vector<std::string>>();
      m.test_recordings = j.at("test_recordings").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
    return m;
  }

  nlohmann::json to_json() const {
    return {{"task", task_name(task)},
            {"train_recordings", train_recordings},
            {"test_recordings", test_recordings}};
  }

  // Patient independence plus the SC-only constraint for the SC task.
  void validate() const {
    std::set<std::string> train_subj, test_subj;
    for (const auto& r : train_recordings) train_subj.insert(recording_meta(r).subject_id);
    for (const auto& r : test_recordings) {
      const auto meta = recording_meta(r);
      test_subj.insert(meta.subject_id);
      if (train_subj.count(meta.subject_id))
        throw SubjectLeakage("subject " + meta.subject_id + " appears on both sides");
    }
    if (task == Task::SC_TASK) {
      for (const auto* side : {&train_recordings, &test_recordings})
        for (const auto& r : *side)
          if (recording_meta(r).subset != Subset::SC)
            throw DataError("manifest: SC task contains non-SC recording " + r);
    }
  }
};

struct Split {
  std::vector<Epoch> train, test;
};

// Partitions epochs by recording id per the manifest. Every manifest id must
// be present, and subject disjointness is re-verified against the epochs
// actually seen.
inline Split build_split(std::vector<Epoch> epochs, const SplitManifest& manifest) {
  manifest.validate();
  std::map<std::string, int> where;  // 0 = train, 1 = test
  for (const auto& r : manifest.train_recordings) where[r] = 0;
  for (const auto& r : manifest.test_recordings) {
    if (where.count(r))
      throw DataError("manifest lists " + r + " on both sides");
    where[r] = 1;
  }

  std::set<std::string> seen;
  std::set<std::string> train_subjects, test_subjects;
  Split split;
  for (auto& e : epochs) {
    const auto it = where.find(e.recording_id);
    if (it == where.end()) continue;  // not in this task
    seen.insert(e.recording_id);
    if (it->second == 0) {
      train_subjects.insert(e.subject_id);
      split.train.push_back(std::move(e));
    } else {
      test_subjects.insert(e.subject_id);
      split.test.push_back(std::move(e));
    }
  }
  for (const auto& [r, side] : where) {
    if (!seen.count(r)) throw UnknownRecordingId("manifest id " + r + " has no epochs");
  }
  for (const auto& s : test_subjects) {
    if (train_subjects.count(s))
      throw SubjectLeakage("subject " + s + " has epochs on both sides");
  }
  return split;
}

}  // namespace sleepstack::data

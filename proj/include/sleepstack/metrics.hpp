#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::analysis {

struct LengthMismatch : InternalError {
  explicit LengthMismatch(const std::string& m) : InternalError(m) {}
};

// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int num_classes = 0)
      : k_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const { return k_; }
  long long& at(int truth, int pred) { return counts_[static_cast<size_t>(truth) * k_ + pred]; }
  long long at(int truth, int pred) const { return counts_[static_cast<size_t>(truth) * k_ + pred]; }

  long long total() const {
    long long t = 0;
    for (long long c : counts_) t += c;
    return t;
  }
  long long row_total(int r) const {
    long long t = 0;
    for (int c = 0; c < k_; ++c) t += at(r, c);
    return t;
  }
  long long trace() const {
    long long t = 0;
    for (int c = 0; c < k_; ++c) t += at(c, c);
    return t;
  }

  // Row percentages in the published confusion-matrix convention.
  std::vector<double> row_percent(int r) const {
    std::vector<double> out(k_, 0.0);
    const long long n = row_total(r);
    if (n == 0) return out;
    for (int c = 0; c < k_; ++c)
      out[c] = 100.0 * static_cast<double>(at(r, c)) / static_cast<double>(n);
    return out;
  }

private:
  int k_ = 0;
  std::vector<long long> counts_;
};

inline ConfusionMatrix confusion(const std::vector<int>& preds,
                                 const std::vector<int>& labels, int num_classes) {
  if (preds.size() != labels.size())
    throw LengthMismatch("confusion: " + std::to_string(preds.size()) +
                         " predictions vs " + std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(num_classes);
  for (size_t i = 0; i < preds.size(); ++i) cm.at(labels[i], preds[i])++;
  return cm;
}

struct RecordingResult {
  std::string recording_id;
  std::string subject_id;
  std::string subset;
  long long correct = 0;
  long long total = 0;

  double accuracy() const {
    return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
};

// All percentages in [0, 100], mirroring the comparison table's columns:
// per-class and average sensitivity/specificity, epoch-wise accuracy, and
// patient-wise accuracy (subject recordings pooled, then macro-averaged over
// subjects; the per-recording average is also emitted for comparison).
struct MetricsReport {
  int num_classes = 0;
  std::vector<double> sensitivity;          // per class, %
  std::vector<double> specificity;          // per class, %
  std::vector<bool> class_in_test;          // absent classes are flagged
  double avg_sensitivity = 0.0;
  double avg_specificity = 0.0;
  double epoch_wise_acc = 0.0;
  double patient_wise_acc = 0.0;
  double recording_wise_acc = 0.0;
  std::vector<RecordingResult> per_recording;
};

struct EmptyRow : DataError {
  explicit EmptyRow(const std::string& m) : DataError(m) {}
};

inline MetricsReport metrics(const ConfusionMatrix& cm,
                             const std::vector<RecordingResult>& per_recording) {
  const int K = cm.num_classes();
  const long long total = cm.total();
  if (total == 0) throw EmptyRow("empty confusion matrix");
  MetricsReport r;
  r.num_classes = K;
  r.sensitivity.assign(K, 0.0);
  r.specificity.assign(K, 0.0);
  r.class_in_test.assign(K, true);

  int present = 0;
  double sens_sum = 0.0, spec_sum = 0.0;
  for (int c = 0; c < K; ++c) {
    const long long row = cm.row_total(c);
    if (row == 0) {
      r.class_in_test[c] = false;  // excluded from the macro means
      continue;
    }
    ++present;
    r.sensitivity[c] = 100.0 * static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    // one-vs-rest collapse: TN = everything neither in row c nor column c
    long long col = 0;
    for (int t = 0; t < K; ++t) col += cm.at(t, c);
    const long long fp = col - cm.at(c, c);
    const long long tn = total - row - fp;
    r.specificity[c] = 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp);
    sens_sum += r.sensitivity[c];
    spec_sum += r.specificity[c];
  }
  if (present == 0) throw EmptyRow("no class present in the test set");
  r.avg_sensitivity = sens_sum / present;
  r.avg_specificity = spec_sum / present;
  r.epoch_wise_acc = 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);

  r.per_recording = per_recording;
  if (!per_recording.empty()) {
    std::map<std::string, std::pair<long long, long long>> by_subject;
    double rec_sum = 0.0;
    for (const auto& rec : per_recording) {
      auto& s = by_subject[rec.subject_id];
      s.first += rec.correct;
      s.second += rec.total;
      rec_sum += rec.accuracy();
    }
    double subj_sum = 0.0;
    for (const auto& [id, s] : by_subject)
      subj_sum += s.second ? 100.0 * static_cast<double>(s.first) / static_cast<double>(s.second) : 0.0;
    r.patient_wise_acc = subj_sum / static_cast<double>(by_subject.size());
    r.recording_wise_acc = rec_sum / static_cast<double>(per_recording.size());
  }
  return r;
}

}  // namespace sleepstack::analysis

#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "sleepstack/adam.hpp"
#include "sleepstack/epochs.hpp"
#include "sleepstack/executor.hpp"

namespace sleepstack::training {

struct EmptyClass : DataError {
  explicit EmptyClass(const std::string& m) : DataError(m) {}
};
struct NonFiniteLoss : InternalError {
  explicit NonFiniteLoss(const std::string& m) : InternalError(m) {}
};

struct TrainConfig {
  double max_lr = 0.001;
  int lr_decay_every = 10;    // training epochs per learning-rate plateau
  double lr_decay_factor = 10.0;
  int batch_size = 64;
  int num_epochs = 30;        // three LR plateaus by default
  uint64_t seed = 0;
  bool augmentation = true;   // per-example circular rolling shift
  double keep_prob = 0.5;
  double stop_at_train_acc = 0.0;  // <= 0 disables the early accuracy stop

  void validate() const {
    if (!(max_lr > 0.0)) throw UsageError("max_lr must be > 0");
    if (batch_size < 2) throw UsageError("batch_size must be >= 2 (TRAIN batch norm)");
    if (!(lr_decay_factor > 1.0)) throw UsageError("lr_decay_factor must be > 1");
    if (lr_decay_every < 1) throw UsageError("lr_decay_every must be >= 1");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
      throw UsageError("keep_prob must be in (0, 1]");
    if (num_epochs < 1) throw UsageError("num_epochs must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"max_lr", max_lr},
            {"lr_decay_every", lr_decay_every},
            {"lr_decay_factor", lr_decay_factor},
            {"batch_size", batch_size},
            {"num_epochs", num_epochs},
            {"seed", seed},
            {"augmentation", augmentation},
            {"keep_prob", keep_prob},
            {"stop_at_train_acc", stop_at_train_acc}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.max_lr = j.value("max_lr", c.max_lr);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.num_epochs = j.value("num_epochs", c.num_epochs);
    c.seed = j.value("seed", c.seed);
    c.augmentation = j.value("augmentation", c.augmentation);
    c.keep_prob = j.value("keep_prob", c.keep_prob);
    c.stop_at_train_acc = j.value("stop_at_train_acc", c.stop_at_train_acc);
    return c;
  }
};

// Step schedule: divide max_lr by the decay factor after every
// lr_decay_every training epochs.
inline double lr_at(int training_epoch, const TrainConfig& cfg) {
  if (training_epoch < 0) throw UsageError("training epoch must be >= 0");
  const int plateau = training_epoch / cfg.lr_decay_every;
  return cfg.max_lr / std::pow(cfg.lr_decay_factor, plateau);
}

// Inverse-frequency weights with mean 1 on balanced data: w_c = N / (K n_c).
inline nn::ClassWeights compute_class_weights(const std::vector<int>& labels,
                                              int num_classes) {
  std::vector<long long> counts(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw DataError("label out of range");
    counts[l]++;
  }
  nn::ClassWeights w(num_classes);
  const double n = static_cast<double>(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0)
      throw EmptyClass("class " + std::to_string(c) + " has no training examples");
    w[c] = n / (num_classes * static_cast<double>(counts[c]));
  }
  return w;
}

// Circular rotation by `shift` samples: element i of the output is element
// (i - shift) mod n of the input.
template <typename T>
std::vector<T> rolling_shift(const std::vector<T>& x, int shift) {
  const int n = static_cast<int>(x.size());
  if (std::abs(shift) >= n) throw UsageError("|shift| must be < signal length");
  std::vector<T> out(n);
  const int s = ((shift % n) + n) % n;
  for (int i = 0; i < n; ++i) out[i] = x[(i - s + n) % n];
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  void write_csv(std::ostream& out) const {
    out << "epoch,lr,loss,train_acc,val_acc,seconds\n";
    char buf[160];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.6f,", r.epoch, r.lr,
                    r.loss, r.train_acc);
      out << buf;
      if (r.val_acc) {
        std::snprintf(buf, sizeof(buf), "%.6f", *r.val_acc);
        out << buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.3f\n", r.seconds);
      out << buf;
    }
  }
};

// Batched EVAL-mode predictions (argmax of the class distribution).
inline std::vector<int> predict(net::Model& m, const std::vector<data::Epoch>& epochs,
                                int batch_size = 64, ThreadPool* pool = nullptr) {
  net::Executor ex(m, pool);
  std::vector<int> preds(epochs.size());
  std::vector<double> x;
  const int K = m.num_classes();
  for (size_t at = 0; at < epochs.size();) {
    const int b = static_cast<int>(std::min<size_t>(batch_size, epochs.size() - at));
    x.assign(static_cast<size_t>(b) * data::kEpochSamples, 0.0);
    for (int i = 0; i < b; ++i) {
      const auto& s = epochs[at + i].samples;
      if (s.size() != data::kEpochSamples)
        throw net::BadInputWidth("epoch must hold 3000 samples");
      std::copy(s.begin(), s.end(), x.begin() + static_cast<size_t>(i) * data::kEpochSamples);
    }
    const auto& logits = ex.forward(x.data(), b, nn::Mode::EVAL);
    for (int i = 0; i < b; ++i) {
      const double* row = logits.data() + static_cast<size_t>(i) * K;
      preds[at + i] = static_cast<int>(std::max_element(row, row + K) - row);
    }
    at += b;
  }
  return preds;
}

inline double accuracy(const std::vector<int>& preds, const std::vector<data::Epoch>& epochs) {
  if (preds.size() != epochs.size() || preds.empty()) return 0.0;
  size_t ok = 0;
  for (size_t i = 0; i < preds.size(); ++i) ok += preds[i] == epochs[i].label;
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

using net::Model;

// The full training recipe: seeded shuffle, per-example rolling-shift
// augmentation, TRAIN-mode forward/backward, one Adam step per mini-batch at
// the scheduled learning rate. Deterministic given the seed.
inline TrainHistory train(Model& m, const std::vector<data::Epoch>& train_epochs,
                          const TrainConfig& cfg,
                          const std::vector<data::Epoch>* validation = nullptr,
                          ThreadPool* pool = nullptr) {
  cfg.validate();
  if (train_epochs.empty()) throw UsageError("no training epochs");
  const int K = m.num_classes();
  std::vector<int> labels(train_epochs.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (train_epochs[i].samples.size() != data::kEpochSamples)
      throw net::BadInputWidth("training epoch must hold 3000 samples");
    labels[i] = train_epochs[i].label;
  }
  const nn::ClassWeights weights = compute_class_weights(labels, K);

  Rng shuffle_rng(Rng::child_seed(cfg.seed, "trainer:shuffle"));
  Rng shift_rng(Rng::child_seed(cfg.seed, "trainer:shift"));
  Rng dropout_rng(Rng::child_seed(cfg.seed, "trainer:dropout"));

  auto tensors = m.trainable_tensors();
  std::vector<nn::AdamState> adam;
  adam.reserve(tensors.size());
  for (const auto& t : tensors) adam.emplace_back(t.values->size());

  net::Executor ex(m, pool);
  std::vector<size_t> order(train_epochs.size());
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  const int W = data::kEpochSamples;
  std::vector<double> x;
  std::vector<double> grad_logits;

  for (int epoch = 0; epoch < cfg.num_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    for (auto& a : adam) a.lr = lr;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t correct = 0;
    size_t at = 0;
    while (at < order.size()) {
      size_t b = std::min<size_t>(cfg.batch_size, order.size() - at);
      if (order.size() - at - b == 1) ++b;  // never leave a 1-example batch behind
      x.assign(b * W, 0.0);
      for (size_t i = 0; i < b; ++i) {
        const auto& src = train_epochs[order[at + i]].samples;
        double* dst = x.data() + i * W;
        const int shift =
            cfg.augmentation ? static_cast<int>(shift_rng.uniform_u64(W)) : 0;
        for (int j = 0; j < W; ++j) dst[j] = src[(j - shift + W) % W];
      }
      const auto& logits = ex.forward(x.data(), static_cast<int>(b), nn::Mode::TRAIN,
                                      cfg.keep_prob, &dropout_rng);
      grad_logits.assign(b * K, 0.0);
      double batch_loss = 0.0;
      for (size_t i = 0; i < b; ++i) {
        std::vector<double> row(logits.begin() + i * K, logits.begin() + (i + 1) * K);
        const int label = train_epochs[order[at + i]].label;
        auto res = nn::weighted_softmax_ce(row, label, weights);
        batch_loss += res.loss;
        correct += static_cast<size_t>(
                       std::max_element(row.begin(), row.end()) - row.begin()) ==
                   static_cast<size_t>(label);
        for (int c = 0; c < K; ++c)
          grad_logits[i * K + c] = res.grad_logits[c] / static_cast<double>(b);
      }
      if (!std::isfinite(batch_loss)) {
        std::string ids;
        for (size_t i = 0; i < b; ++i)
          ids += (i ? "," : "") + std::to_string(order[at + i]);
        throw NonFiniteLoss("non-finite loss in training epoch " +
                            std::to_string(epoch) + ", batch examples [" + ids + "]");
      }
      loss_sum += batch_loss;
      m.zero_grad();
      ex.backward(grad_logits);
      for (size_t t = 0; t < tensors.size(); ++t)
        nn::adam_step(tensors[t].values->data(), tensors[t].grad->data(),
                      tensors[t].values->size(), adam[t]);
      at += b;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (validation && !validation->empty()) {
      rec.val_acc = accuracy(predict(m, *validation, cfg.batch_size, pool), *validation);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.records.push_back(rec);
    m.meta.trained_epochs = epoch + 1;
    m.meta.last_lr = lr;
    if (cfg.stop_at_train_acc > 0.0 && rec.train_acc >= cfg.stop_at_train_acc) break;
  }
  return history;
}

}  // namespace sleepstack::training

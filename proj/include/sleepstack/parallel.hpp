#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sleepstack {

// Minimal fork-join pool. Work is partitioned so that no two threads ever
// accumulate into the same output slot: parallel loops run over independent
// index ranges (batch items, output channels, ...), which keeps results
// bit-identical for any thread count.
class ThreadPool {
public:
  explicit ThreadPool(unsigned threads = 0) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads_ = threads;
    for (unsigned t = 1; t < threads; ++t) {
      workers_.emplace_back([this, t] { worker_loop(t); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  unsigned size() const { return n_threads_; }

  // Runs fn(begin, end) over [0, n) split into contiguous ranges, one per
  // thread. Blocks until all ranges are done.
  void parallel_ranges(size_t n, const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    const unsigned k = static_cast<unsigned>(std::min<size_t>(n_threads_, n));
    if (k == 1) {
      fn(0, n);
      return;
    }
    {
      std::lock_guard lk(mu_);
      job_ = &fn;
      job_n_ = n;
      job_k_ = k;
      pending_ = k - 1;  // ranges handled by workers; range 0 runs inline
      ++generation_;
    }
    cv_.notify_all();
    run_range(0, fn);
    std::unique_lock lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

  // Convenience: fn(i) for each i in [0, n), chunked as above.
  void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    parallel_ranges(n, [&](size_t b, size_t e) {
      for (size_t i = b; i < e; ++i) fn(i);
    });
  }

private:
  void run_range(unsigned idx, const std::function<void(size_t, size_t)>& fn) {
    const size_t chunk = (job_n_ + job_k_ - 1) / job_k_;
    const size_t b = std::min(job_n_, idx * chunk);
    const size_t e = std::min(job_n_, b + chunk);
    if (b < e) fn(b, e);
  }

  void worker_loop(unsigned idx) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(size_t, size_t)>* job = nullptr;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        if (idx < job_k_) job = job_;
      }
      if (job) {
        run_range(idx, *job);
        std::lock_guard lk(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  unsigned n_threads_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(size_t, size_t)>* job_ = nullptr;
  size_t job_n_ = 0;
  unsigned job_k_ = 0;
  unsigned pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace sleepstack

// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Small persistent worker pool. parallel_for splits an index range into
// contiguous chunks; every index is processed by exactly one task, so results
// are bitwise independent of the worker count as long as no task spans a
// reduction across indices.

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace stau {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Number of workers, including the calling thread.
  int size() const { return size_; }

  void set_size(int n) {
    std::lock_guard<std::mutex> run_guard(run_mutex_);
    stop_workers();
    size_ = n < 1 ? 1 : n;
    start_workers();
  }

  // fn(begin, end) is invoked on disjoint contiguous subranges covering
  // [0, n). Chunk boundaries depend only on n and the pool size. With a
  // single worker (or a single index) the call runs inline, so independent
  // callers never serialize on the pool.
  void parallel_for(long long n, const std::function<void(long long, long long)>& fn) {
    if (n <= 0) return;
    if (size_ == 1 || n == 1) {
      fn(0, n);
      return;
    }
    std::lock_guard<std::mutex> run_guard(run_mutex_);
    int chunks = size_;
    if (chunks > n) chunks = static_cast<int>(n);
    if (chunks <= 1) {
      fn(0, n);
      return;
    }
    long long per = (n + chunks - 1) / chunks;
    {
      std::unique_lock<std::mutex> lk(mutex_);
      job_fn_ = &fn;
      job_n_ = n;
      job_per_ = per;
      job_next_ = 1;  // chunk 0 runs on the calling thread
      job_chunks_ = chunks;
      pending_ = chunks - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0, per < n ? per : n);
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  ThreadPool() {
    size_ = default_size();
    start_workers();
  }

  ~ThreadPool() { stop_workers(); }

  static int default_size() {
    if (const char* env = std::getenv("STAU_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }

  void start_workers() {
    stopping_ = false;
    for (int i = 1; i < size_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stopping_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
  }

  void worker_loop() {
    uint64_t seen = 0;
    while (true) {
      const std::function<void(long long, long long)>* fn = nullptr;
      std::unique_lock<std::mutex> lk(mutex_);
      cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
      seen = generation_;
      if (stopping_) return;
      fn = job_fn_;
      if (!fn) continue;
      while (true) {
        int chunk = job_next_;
        if (chunk >= job_chunks_) break;
        ++job_next_;
        lk.unlock();
        long long begin = static_cast<long long>(chunk) * job_per_;
        long long end = begin + job_per_;
        if (end > job_n_) end = job_n_;
        if (begin < end) (*fn)(begin, end);
        lk.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int size_ = 1;
  std::vector<std::thread> workers_;
  std::mutex run_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(long long, long long)>* job_fn_ = nullptr;
  long long job_n_ = 0;
  long long job_per_ = 0;
  int job_next_ = 0;
  int job_chunks_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stopping_ = false;
};

inline void set_thread_count(int n) { ThreadPool::instance().set_size(n); }

inline void parallel_for(long long n, const std::function<void(long long, long long)>& fn) {
  ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace stau

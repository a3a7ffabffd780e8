#include "soaheap/worker_pool.hpp"

#include <algorithm>
#include <atomic>

namespace soaheap {

namespace {

thread_local unsigned t_worker = ~0u;
std::atomic<unsigned> g_outside_ordinal{1024};

}  // namespace

WorkerPool::WorkerPool(unsigned workers) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  size_ = workers;
  for (unsigned w = 1; w < size_; ++w) threads_.emplace_back([this, w] { loop(w); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

unsigned WorkerPool::current_worker() {
  if (t_worker == ~0u) t_worker = g_outside_ordinal.fetch_add(1, std::memory_order_relaxed);
  return t_worker;
}

void WorkerPool::run(const std::function<void(unsigned)>& fn) {
  {
    std::lock_guard lock(mu_);
    job_ = &fn;
    error_ = nullptr;
    pending_ = size_ - 1;
    ++generation_;
  }
  start_cv_.notify_all();

  unsigned saved = t_worker;
  t_worker = 0;
  std::exception_ptr mine;
  try {
    fn(0);
  } catch (...) {
    mine = std::current_exception();
  }
  t_worker = saved;

  std::unique_lock lock(mu_);
  done_cv_.wait(lock, [this] { return pending_ == 0; });
  job_ = nullptr;
  std::exception_ptr err = mine ? mine : error_;
  lock.unlock();
  if (err) std::rethrow_exception(err);
}

void WorkerPool::loop(unsigned worker) {
  t_worker = worker;
  std::uint64_t seen = 0;
  while (true) {
    const std::function<void(unsigned)>* job;
    {
      std::unique_lock lock(mu_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      job = job_;
    }
    std::exception_ptr err;
    try {
      (*job)(worker);
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard lock(mu_);
      if (err && !error_) error_ = err;
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }
}

}  // namespace soaheap

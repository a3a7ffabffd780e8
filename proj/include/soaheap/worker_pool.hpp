#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace soaheap {

// Fixed set of worker threads that execute one job at a time. The calling
// thread participates as worker 0, so a pool of size 1 runs everything inline.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned workers = 0);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  unsigned size() const { return size_; }

  // Runs fn(worker) once on every worker and joins. The first exception
  // thrown by any worker is rethrown here after all workers finished.
  void run(const std::function<void(unsigned)>& fn);

  // Ordinal of the calling pool worker; threads outside any pool get a
  // process-unique ordinal >= 1024 on first use.
  static unsigned current_worker();

 private:
  void loop(unsigned worker);

  unsigned size_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(unsigned)>* job_ = nullptr;
  std::uint64_t generation_ = 0;
  unsigned pending_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace soaheap

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "soaheap/allocator.hpp"
#include "soaheap/worker_pool.hpp"

namespace soaheap {

struct AssignmentParams {
  std::uint64_t num_blocks = 0;  // entries of R
  std::uint32_t capacity = 64;   // slots per block of the enumerated type
  std::uint64_t num_threads = 1;
};

// Number of (block, slot) items handled by logical thread tid: the thread
// takes the items tid, tid + n, tid + 2n, ... of the flattened range
// [0, r * capacity).
inline std::uint64_t assigned_count(std::uint64_t tid, const AssignmentParams& p) {
  const std::uint64_t total = p.num_blocks * p.capacity;
  if (tid >= total) return 0;
  return (total - tid + p.num_threads - 1) / p.num_threads;
}

// Calls fn(index into R, slot) for every item of logical thread tid.
template <class F>
void for_each_assigned(std::uint64_t tid, const AssignmentParams& p, F&& fn) {
  const std::uint64_t count = assigned_count(tid, p);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t item = tid + k * p.num_threads;
    fn(item / p.capacity, static_cast<std::uint32_t>(item % p.capacity));
  }
}

std::vector<std::pair<std::uint64_t, std::uint32_t>> thread_assignment(std::uint64_t tid, const AssignmentParams& p);

class Enumerator {
 public:
  // logical_threads = 0 uses one logical thread per pool worker.
  Enumerator(Allocator& allocator, WorkerPool& pool, std::uint64_t logical_threads = 0);

  Allocator& allocator() { return alloc_; }
  WorkerPool& pool() { return pool_; }
  std::uint64_t logical_threads() const { return threads_; }

  // Called on the driver thread after every completed phase (each concrete
  // type of a parallel_do, each parallel_new).
  void set_phase_hook(std::function<void()> hook) { phase_hook_ = std::move(hook); }

  // Types enumerated for a request: the type itself, or all concrete subtypes.
  std::vector<TypeId> enumerated_types(TypeId type, bool include_subtypes) const;

  // Quiescent only: iteration bitmap <- allocation bitmap for every
  // allocated block of the enumerated types.
  void snapshot_iteration_bitmaps(TypeId type, bool include_subtypes);

  // Runs op(handle) once for every object of the type that was live when the
  // call started. One sub-pass per concrete type.
  template <class F>
  void parallel_do(TypeId type, bool include_subtypes, F&& op) {
    for (TypeId s : enumerated_types(type, include_subtypes)) {
      snapshot_iteration_bitmaps(s, false);
      const std::vector<std::uint64_t> blocks = alloc_.allocated(s).indices(&pool_);
      const AssignmentParams params{blocks.size(), alloc_.heap().capacity_of(s), threads_};
      Heap& heap = alloc_.heap();
      const unsigned workers = pool_.size();
      pool_.run([&](unsigned w) {
        for (std::uint64_t tid = w; tid < params.num_threads; tid += workers) {
          for_each_assigned(tid, params, [&](std::uint64_t idx, std::uint32_t slot) {
            const std::uint64_t b = blocks[idx];
            if ((heap.header(b).iter_bitmap.load(std::memory_order_relaxed) >> slot) & 1)
              op(encode_handle(s, params.capacity, b, slot));
          });
        }
      });
      if (phase_hook_) phase_hook_();
    }
  }

  template <class R, class F, class Reduce>
  R parallel_do_and_reduce(TypeId type, bool include_subtypes, F&& op, Reduce&& reduce, R identity) {
    struct alignas(64) Partial {
      R value;
    };
    std::vector<Partial> partials(pool_.size(), Partial{identity});
    parallel_do(type, include_subtypes, [&](Handle h) {
      unsigned w = WorkerPool::current_worker();
      partials[w].value = reduce(partials[w].value, op(h));
    });
    R acc = identity;
    for (const auto& p : partials) acc = reduce(acc, p.value);
    return acc;
  }

  // Allocates count objects in batches of up to 64 and runs ctor(handle, i)
  // for every index i in [0, count) exactly once.
  template <class F>
  void parallel_new(TypeId type, std::uint64_t count, F&& ctor) {
    if (count == 0) return;
    std::atomic<std::uint64_t> next{0};
    pool_.run([&](unsigned) {
      Handle batch[64];
      while (true) {
        const std::uint64_t start = next.fetch_add(64, std::memory_order_relaxed);
        if (start >= count) return;
        const auto k = static_cast<unsigned>(std::min<std::uint64_t>(64, count - start));
        std::size_t got = alloc_.allocate_batch(type, k, alloc_.next_seed(), batch);
        for (std::size_t i = 0; i < got; ++i) ctor(batch[i], start + i);
        if (got < k) throw OutOfMemory("out of memory in parallel_new");
      }
    });
    if (phase_hook_) phase_hook_();
  }

  // Sequential loop over the objects currently recorded in the allocation
  // bitmaps; meant to be called from inside a parallel_do op.
  template <class F>
  void device_do(TypeId type, bool include_subtypes, F&& op) const {
    const Heap& heap = alloc_.heap();
    for (TypeId s : enumerated_types(type, include_subtypes)) {
      const std::uint32_t cap = heap.capacity_of(s);
      const std::uint64_t live_mask = ~padding_mask(cap);
      alloc_.allocated(s).for_each_set([&](std::uint64_t b) {
        if (heap.type_of(b) != s) return;
        std::uint64_t bits = heap.alloc_bits(b) & live_mask;
        while (bits) {
          auto slot = static_cast<std::uint32_t>(__builtin_ctzll(bits));
          bits &= bits - 1;
          op(encode_handle(s, cap, b, slot));
        }
      });
    }
  }

 private:
  Allocator& alloc_;
  WorkerPool& pool_;
  std::uint64_t threads_;
  std::function<void()> phase_hook_;
};

}  // namespace soaheap

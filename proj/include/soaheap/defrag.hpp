#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "soaheap/allocator.hpp"
#include "soaheap/worker_pool.hpp"

namespace soaheap {

// Sources are blocks[0..sources); source i moves its objects into
// blocks[i + k * sources] for k = 1..n. blocks is sorted ascending, so every
// source index is below blocks[sources].
struct DefragPlan {
  TypeId type = kNoType;
  unsigned n = 1;
  std::vector<std::uint64_t> blocks;
  std::uint64_t sources = 0;
  // Objects relocated into each target, indexed by position in blocks minus
  // sources. Filled by copy_objects.
  std::vector<std::uint32_t> moved_into;

  std::uint64_t source(std::uint64_t i) const { return blocks[i]; }
  std::uint64_t target(std::uint64_t i, unsigned k) const { return blocks[i + k * sources]; }
  std::uint64_t boundary() const { return blocks[sources]; }
};

struct PassRecord {
  std::uint64_t candidates_before = 0;
  std::uint64_t candidates_after = 0;
  std::uint64_t moved = 0;
  std::uint64_t rewritten = 0;
  std::uint64_t copy_ns = 0;
  std::uint64_t forward_ns = 0;
  std::uint64_t rewrite_ns = 0;
  std::uint64_t finalize_ns = 0;
};

struct DefragReport {
  std::vector<PassRecord> passes;
  std::uint64_t moved() const;
  std::uint64_t rewritten() const;
};

// Mask of the first m free (zero, non-padding) slots of an allocation bitmap.
std::uint64_t first_free_slots(std::uint64_t bits, std::uint32_t capacity, std::uint32_t m);

// Worst-case pass count for d candidates when all but k1 are to be removed.
std::uint64_t pass_bound(std::uint64_t d, std::uint64_t k1, unsigned n);

// All operations require an exclusive phase: no allocation, deallocation or
// enumeration may run concurrently.
class Defragmenter {
 public:
  Defragmenter(Allocator& allocator, WorkerPool& pool);

  // Switches the allocator to factor n if needed. Empty when fewer than n + 1
  // candidates exist.
  std::optional<DefragPlan> plan_pass(TypeId type, unsigned n);
  std::uint64_t copy_objects(DefragPlan& plan);
  void place_forwarding(const DefragPlan& plan);
  Handle rewrite_handle(Handle h, const DefragPlan& plan) const;
  std::uint64_t rewrite_heap(const DefragPlan& plan);
  void finalize_pass(const DefragPlan& plan);

  PassRecord run_pass(DefragPlan& plan);
  // Runs passes while more than k1 candidates remain and a plan exists.
  // n = 0 keeps the allocator's current factor.
  DefragReport defragment(TypeId type, std::uint64_t k1, unsigned n = 0);

  // k2 >= 1 is an absolute candidate count; 0 < k2 < 1 is a fraction of the
  // heap's block count. The threshold is scaled by n / (n + 1).
  bool should_defrag(TypeId type, double k2) const;

  // Handles kept outside the heap (for example a host-side index of grid
  // cells). Registered vectors are rewritten together with heap fields.
  void add_roots(std::vector<Handle>* roots) { roots_.push_back(roots); }
  void remove_roots(std::vector<Handle>* roots) { std::erase(roots_, roots); }

  // Called after every pass run by defragment().
  void set_pass_hook(std::function<void()> hook) { pass_hook_ = std::move(hook); }

 private:
  Allocator& alloc_;
  WorkerPool& pool_;
  std::vector<std::vector<Handle>*> roots_;
  std::function<void()> pass_hook_;
};

}  // namespace soaheap

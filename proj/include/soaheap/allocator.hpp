#pragma once

#include <atomic>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "soaheap/bitmap.hpp"
#include "soaheap/heap.hpp"
#include "soaheap/registry.hpp"

namespace soaheap {

enum class OomPolicy { error, spin };

struct AllocConfig {
  unsigned retries = 5;   // lookups in active[T] before claiming a free block
  unsigned defrag_n = 1;  // defragmentation factor
  OomPolicy oom = OomPolicy::error;
  unsigned oom_misses = 3;  // consecutive total misses that count as out of memory
  std::uint64_t seed = 0;
};

class OutOfMemory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TypeStats {
  TypeId type = kNoType;
  std::uint64_t allocated_blocks = 0;
  std::uint64_t active_blocks = 0;
  std::uint64_t candidate_blocks = 0;
  std::uint64_t used_slots = 0;
  double fragmentation = 0.0;
};

struct HeapStats {
  std::uint64_t free_blocks = 0;
  std::uint64_t used_slots = 0;
  double fragmentation = 0.0;
  std::vector<TypeStats> types;
};

class Allocator {
 public:
  Allocator(const Registry& registry, AllocConfig config = {});

  const Registry& registry() const { return registry_; }
  Heap& heap() { return heap_; }
  const Heap& heap() const { return heap_; }
  const AllocConfig& config() const { return config_; }
  unsigned defrag_factor() const { return config_.defrag_n; }
  void set_retries(unsigned r) { config_.retries = r; }

  HierBitmap& free_blocks() { return free_; }
  const HierBitmap& free_blocks() const { return free_; }
  HierBitmap& allocated(TypeId t) const { return *per_type_.at(t).allocated; }
  HierBitmap& active(TypeId t) const { return *per_type_.at(t).active; }
  HierBitmap& candidates(TypeId t) const { return *per_type_.at(t).defrag; }

  // Reserves up to count slots of a concrete type; returns the number written
  // to out, which is count unless the heap ran out of memory (error policy
  // throws OutOfMemory only when nothing was obtained).
  std::size_t allocate_batch(TypeId type, unsigned count, std::uint64_t seed, Handle* out);
  std::vector<Handle> allocate_batch(TypeId type, unsigned count, std::uint64_t seed);
  Handle allocate(TypeId type, std::uint64_t seed);
  // Seed derived from the calling worker's ordinal and a per-worker counter.
  Handle allocate(TypeId type);
  std::uint64_t next_seed();

  void deallocate(Handle h);

  // Optional wall-clock accounting of allocate/deallocate calls.
  struct OpTimes {
    std::uint64_t alloc_ns = 0, dealloc_ns = 0, alloc_calls = 0, dealloc_calls = 0;
  };
  void set_timing(bool on) { timing_ = on; }
  // Returns the totals since the previous call and resets them.
  OpTimes take_op_times();

  // Quiescent only.
  double fragmentation() const;
  double fragmentation(TypeId type) const;
  std::uint64_t live_objects(TypeId type) const;
  HeapStats stats() const;
  // Empty when the quiescent invariants hold; otherwise one message per problem.
  std::vector<std::string> audit() const;
  // Quiescent only. Every non-null handle stored in a reference field of a
  // live object must name a live object of a compatible type.
  std::vector<std::string> audit_references() const;
  // "block,type,fill,capacity" for every allocated block.
  std::string snapshot_csv() const;
  // Quiescent only: recomputes candidate bitmaps for a new factor.
  void set_defrag_factor(unsigned n);

  // Quiescent only: used by the defragmenter to retire and update blocks.
  void apply_deltas(TypeId type, int active, int defrag, int allocated, int free, std::uint64_t block);

  std::span<std::byte> field_bytes(Handle h, std::uint32_t field) const { return heap_.field_bytes(h, field); }

  template <class V>
  V load(Handle h, std::uint32_t field, std::uint32_t elem = 0) const {
    V v;
    std::memcpy(&v, heap_.field_bytes(h, field).data() + elem * sizeof(V), sizeof(V));
    return v;
  }
  template <class V>
  void store(Handle h, std::uint32_t field, V v, std::uint32_t elem = 0) const {
    std::memcpy(heap_.field_bytes(h, field).data() + elem * sizeof(V), &v, sizeof(V));
  }
  Handle load_ref(Handle h, std::uint32_t field, std::uint32_t elem = 0) const {
    return Handle{load<std::uint64_t>(h, field, elem)};
  }
  void store_ref(Handle h, std::uint32_t field, Handle v, std::uint32_t elem = 0) const {
    store<std::uint64_t>(h, field, v.bits, elem);
  }

  Handle handle_at(std::uint64_t block, std::uint32_t slot) const {
    TypeId t = heap_.type_of(block);
    return encode_handle(t, heap_.capacity_of(t), block, slot);
  }

 private:
  std::size_t allocate_untimed(TypeId type, unsigned count, std::uint64_t seed, Handle* out);
  void deallocate_untimed(Handle h);

  struct PerType {
    std::unique_ptr<HierBitmap> allocated;
    std::unique_ptr<HierBitmap> active;
    std::unique_ptr<HierBitmap> defrag;
  };

  const Registry& registry_;
  AllocConfig config_;
  Heap heap_;
  HierBitmap free_;
  std::vector<PerType> per_type_;
  static constexpr unsigned kSeedStreams = 256;
  std::unique_ptr<std::atomic<std::uint64_t>[]> seed_counters_;
  bool timing_ = false;
  std::atomic<std::uint64_t> alloc_ns_{0}, dealloc_ns_{0}, alloc_calls_{0}, dealloc_calls_{0};
};

}  // namespace soaheap

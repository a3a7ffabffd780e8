#include "soaheap/heap.hpp"

#include <bit>
#include <cassert>
#include <new>

namespace soaheap {

Handle encode_handle(TypeId type, std::uint32_t capacity, std::uint64_t block, std::uint32_t slot) {
  assert(capacity >= 1 && capacity <= 64 && block < kMaxBlocks && slot < 64);
  return Handle{(std::uint64_t{type} << 56) | (std::uint64_t{capacity & 63} << 50) | (block << 6) | slot};
}

DecodedHandle decode_handle(Handle h) {
  if (h.is_null()) return {};
  return {h.type(), h.capacity(), h.block(), h.slot()};
}

unsigned classify(FillChange change, std::uint32_t capacity, std::uint32_t n) {
  const int pad = 64 - static_cast<int>(capacity);
  const int before = change.before - pad;
  const int after = change.after - pad;
  const int th = static_cast<int>(candidate_threshold(capacity, n));
  const int cap = static_cast<int>(capacity);
  unsigned flags = kRegular;
  if (after > before) {
    if (after == cap) flags |= kFull;
    if (before <= th && th < after) flags |= kLeftCandidacy;
  } else if (after < before) {
    if (before == cap) flags |= kFirst;
    if (after <= th && th < before) flags |= kCandidate;
    if (after == 0) flags |= kEmpty;
  }
  return flags;
}

void StateDeltas::add(FillChange change, std::uint32_t capacity, std::uint32_t n) {
  unsigned f = classify(change, capacity, n);
  flags |= f;
  if (f & kFull) --active;
  if (f & kFirst) ++active;
  if (f & kLeftCandidacy) --defrag;
  if (f & kCandidate) ++defrag;
}

unsigned SlotOutcome::state(std::uint32_t capacity, std::uint32_t n) const {
  if (failed()) return kFail;
  return deltas(capacity, n).flags;
}

StateDeltas SlotOutcome::deltas(std::uint32_t capacity, std::uint32_t n) const {
  StateDeltas d;
  for (unsigned i = 0; i < num_changes; ++i) d.add(changes[i], capacity, n);
  return d;
}

Heap::Heap(const Registry& registry) : registry_(registry) {
  const auto& plan = registry.layout();
  num_blocks_ = plan.num_blocks;
  segment_bytes_ = plan.segment_bytes;
  stride_ = plan.block_bytes;
  static_assert(sizeof(BlockHeader) % 8 == 0);
  arena_ = static_cast<std::byte*>(::operator new(num_blocks_ * stride_, std::align_val_t{64}));
  for (std::uint64_t b = 0; b < num_blocks_; ++b) {
    auto* h = new (arena_ + b * stride_) BlockHeader;
    h->alloc_bitmap.store(~0ULL, std::memory_order_relaxed);
    h->iter_bitmap.store(0, std::memory_order_relaxed);
    h->type_tag.store(kNoType, std::memory_order_relaxed);
  }
  std::atomic_thread_fence(std::memory_order_seq_cst);
}

Heap::~Heap() { ::operator delete(arena_, std::align_val_t{64}); }

void Heap::init_block(std::uint64_t block, TypeId type) {
  auto& h = header(block);
  h.type_tag.store(type, std::memory_order_relaxed);
  // Any thread that observes the reset bitmap must also observe the new tag.
  std::atomic_thread_fence(std::memory_order_release);
  h.alloc_bitmap.store(padding_mask(capacity_of(type)), std::memory_order_release);
}

SlotOutcome Heap::reserve(std::uint64_t block, unsigned count, std::uint64_t seed) {
  SlotOutcome out;
  auto& bitmap = header(block).alloc_bitmap;
  const int rot = static_cast<int>(seed & 63);
  unsigned got = 0;
  while (got < count) {
    std::uint64_t cur = bitmap.load(std::memory_order_acquire);
    std::uint64_t free_rot = std::rotr(~cur, rot);
    if (free_rot == 0) break;
    std::uint64_t pick_rot = 0;
    for (unsigned i = got; i < count && free_rot; ++i) {
      pick_rot |= free_rot & (~free_rot + 1);
      free_rot &= free_rot - 1;
    }
    std::uint64_t pick = std::rotl(pick_rot, rot);
    std::uint64_t prev = bitmap.fetch_or(pick, std::memory_order_acq_rel);
    std::uint64_t newly = pick & ~prev;
    if (!newly) continue;
    out.changes[out.num_changes++] = {static_cast<std::uint8_t>(std::popcount(prev)),
                                      static_cast<std::uint8_t>(std::popcount(prev | pick))};
    out.slots |= newly;
    got += static_cast<unsigned>(std::popcount(newly));
  }
  return out;
}

FillChange Heap::release(std::uint64_t block, std::uint32_t slot) {
  std::uint64_t mask = 1ULL << slot;
  std::uint64_t before = header(block).alloc_bitmap.fetch_and(~mask, std::memory_order_acq_rel);
  assert((before & mask) && "slot released twice");
  return {static_cast<std::uint8_t>(std::popcount(before)), static_cast<std::uint8_t>(std::popcount(before & ~mask))};
}

InvalidateOutcome Heap::invalidate(std::uint64_t block, std::uint32_t capacity, std::uint32_t n) {
  InvalidateOutcome out;
  auto& bitmap = header(block).alloc_bitmap;
  const std::uint64_t pad = padding_mask(capacity);
  while (true) {
    std::uint64_t before = bitmap.fetch_or(~0ULL, std::memory_order_acq_rel);
    if (before == ~0ULL) return out;  // already full or invalidated by someone else
    out.deltas.add({static_cast<std::uint8_t>(std::popcount(before)), 64}, capacity, n);
    if (before == pad) {
      out.success = true;
      return out;
    }
    // A slot was reserved after the block was seen empty: give back exactly
    // the bits set above. Releases that landed meanwhile stay released.
    std::uint64_t prev = bitmap.fetch_and(before, std::memory_order_acq_rel);
    std::uint64_t after = prev & before;
    FillChange rollback{static_cast<std::uint8_t>(std::popcount(prev)),
                        static_cast<std::uint8_t>(std::popcount(after))};
    out.deltas.add(rollback, capacity, n);
    if (after != pad) return out;
  }
}

std::uint32_t Heap::fill(std::uint64_t block) const {
  TypeId t = type_of(block);
  if (t == kNoType) return 0;
  return static_cast<std::uint32_t>(std::popcount(alloc_bits(block) & ~padding_mask(capacity_of(t))));
}

}  // namespace soaheap

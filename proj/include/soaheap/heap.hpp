#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>

#include "soaheap/registry.hpp"

namespace soaheap {

// 64-bit object reference: bits 56..63 type id, 50..55 block capacity (64 is
// stored as 0), 6..41 block index, 0..5 slot. The all-zero value is null.
struct Handle {
  std::uint64_t bits = 0;

  bool is_null() const { return bits == 0; }
  explicit operator bool() const { return bits != 0; }
  TypeId type() const { return static_cast<TypeId>(bits >> 56); }
  std::uint32_t capacity() const {
    auto c = static_cast<std::uint32_t>((bits >> 50) & 63);
    return c == 0 ? 64 : c;
  }
  std::uint64_t block() const { return (bits >> 6) & ((1ULL << 36) - 1); }
  std::uint32_t slot() const { return static_cast<std::uint32_t>(bits & 63); }

  auto operator<=>(const Handle&) const = default;
};

struct DecodedHandle {
  TypeId type = kNoType;
  std::uint32_t capacity = 0;
  std::uint64_t block = 0;
  std::uint32_t slot = 0;
  bool operator==(const DecodedHandle&) const = default;
};

inline constexpr std::uint64_t kMaxBlocks = 1ULL << 36;

Handle encode_handle(TypeId type, std::uint32_t capacity, std::uint64_t block, std::uint32_t slot);
DecodedHandle decode_handle(Handle h);

struct HandleHash {
  std::size_t operator()(Handle h) const { return std::hash<std::uint64_t>{}(h.bits); }
};

struct alignas(8) BlockHeader {
  std::atomic<std::uint64_t> alloc_bitmap;
  std::atomic<std::uint64_t> iter_bitmap;
  std::atomic<std::uint8_t> type_tag;
  std::uint8_t pad[7];
};
static_assert(sizeof(BlockHeader) == 24);

// Bits capacity..63: slots that do not exist in a block of this capacity.
inline std::uint64_t padding_mask(std::uint32_t capacity) { return capacity >= 64 ? 0 : ~((1ULL << capacity) - 1); }

// Fill level at which a block stops being a defragmentation candidate:
// a block is a candidate iff fill <= candidate_threshold.
inline std::uint32_t candidate_threshold(std::uint32_t capacity, std::uint32_t n) { return capacity * n / (n + 1); }

// State transitions caused by one atomic update of an allocation bitmap.
enum StateFlag : unsigned {
  kRegular = 0,
  kFull = 1u << 0,           // reservation left no free slot
  kLeftCandidacy = 1u << 1,  // reservation raised fill above the candidate threshold
  kFirst = 1u << 2,          // release on a block without free slots
  kCandidate = 1u << 3,      // release lowered fill to the candidate threshold or below
  kEmpty = 1u << 4,          // release left no used slot
  kFail = 1u << 5,           // nothing could be reserved
};

// One atomic bitmap update, recorded as popcounts including padding bits.
struct FillChange {
  std::uint8_t before = 0;
  std::uint8_t after = 0;
};

unsigned classify(FillChange change, std::uint32_t capacity, std::uint32_t n);

// Net effect of a series of fill changes on a type's active/defrag bitmaps.
struct StateDeltas {
  int active = 0;
  int defrag = 0;
  unsigned flags = 0;
  void add(FillChange change, std::uint32_t capacity, std::uint32_t n);
};

struct SlotOutcome {
  std::uint64_t slots = 0;
  unsigned num_changes = 0;
  std::array<FillChange, 64> changes{};

  bool failed() const { return slots == 0; }
  // Union of transition flags; kFail when nothing was reserved.
  unsigned state(std::uint32_t capacity, std::uint32_t n) const;
  StateDeltas deltas(std::uint32_t capacity, std::uint32_t n) const;
};

struct InvalidateOutcome {
  bool success = false;
  StateDeltas deltas;
};

class Heap {
 public:
  explicit Heap(const Registry& registry);
  ~Heap();
  Heap(const Heap&) = delete;
  Heap& operator=(const Heap&) = delete;

  const Registry& registry() const { return registry_; }
  std::uint64_t num_blocks() const { return num_blocks_; }
  std::uint32_t block_bytes() const { return stride_; }
  std::uint32_t segment_bytes() const { return segment_bytes_; }

  BlockHeader& header(std::uint64_t block) const { return *reinterpret_cast<BlockHeader*>(arena_ + block * stride_); }
  std::byte* segment(std::uint64_t block) const { return arena_ + block * stride_ + sizeof(BlockHeader); }
  TypeId type_of(std::uint64_t block) const { return header(block).type_tag.load(std::memory_order_acquire); }
  std::uint64_t alloc_bits(std::uint64_t block) const {
    return header(block).alloc_bitmap.load(std::memory_order_acquire);
  }
  std::uint32_t capacity_of(TypeId type) const { return registry_.type(type).block_capacity; }

  // Caller owns the block (claimed from the free bitmap). The type tag is
  // published before the bitmap reset.
  void init_block(std::uint64_t block, TypeId type);

  SlotOutcome reserve(std::uint64_t block, unsigned count, std::uint64_t seed);
  FillChange release(std::uint64_t block, std::uint32_t slot);

  // Tries to make an empty block permanently unreservable (all bits set).
  // On failure every bit this call set is rolled back; if the rollback leaves
  // the block empty again the attempt is repeated. Deltas cover the type's
  // active/defrag bitmaps for every update this call performed.
  InvalidateOutcome invalidate(std::uint64_t block, std::uint32_t capacity, std::uint32_t n);

  std::span<std::byte> field_bytes(Handle h, std::uint32_t field_index) const {
    const auto& t = registry_.type(h.type());
    const auto& f = t.fields[field_index];
    return {segment(h.block()) + t.field_offsets[field_index] + std::size_t{h.slot()} * f.size(), f.size()};
  }

  // Quiescent only. Live slots of a block (allocation bits minus padding).
  std::uint32_t fill(std::uint64_t block) const;

 private:
  const Registry& registry_;
  std::uint64_t num_blocks_;
  std::uint32_t segment_bytes_;
  std::uint32_t stride_;
  std::byte* arena_ = nullptr;
};

}  // namespace soaheap

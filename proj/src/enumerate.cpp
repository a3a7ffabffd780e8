#include "soaheap/enumerate.hpp"

#include <stdexcept>

namespace soaheap {

std::vector<std::pair<std::uint64_t, std::uint32_t>> thread_assignment(std::uint64_t tid, const AssignmentParams& p) {
  std::vector<std::pair<std::uint64_t, std::uint32_t>> out;
  out.reserve(assigned_count(tid, p));
  for_each_assigned(tid, p, [&](std::uint64_t idx, std::uint32_t slot) { out.emplace_back(idx, slot); });
  return out;
}

Enumerator::Enumerator(Allocator& allocator, WorkerPool& pool, std::uint64_t logical_threads)
    : alloc_(allocator), pool_(pool), threads_(logical_threads ? logical_threads : pool.size()) {}

std::vector<TypeId> Enumerator::enumerated_types(TypeId type, bool include_subtypes) const {
  const auto& reg = alloc_.registry();
  if (include_subtypes) return reg.concrete_subtypes(type);
  if (reg.type(type).is_abstract) throw std::invalid_argument("abstract type needs include_subtypes");
  return {type};
}

void Enumerator::snapshot_iteration_bitmaps(TypeId type, bool include_subtypes) {
  Heap& heap = alloc_.heap();
  for (TypeId s : enumerated_types(type, include_subtypes)) {
    alloc_.allocated(s).for_each_set([&](std::uint64_t b) {
      auto& h = heap.header(b);
      h.iter_bitmap.store(h.alloc_bitmap.load(std::memory_order_relaxed), std::memory_order_relaxed);
    });
  }
}

}  // namespace soaheap

#include "soaheap/defrag.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>

namespace soaheap {

namespace {

std::uint64_t now_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

std::uint64_t live_slots(std::uint64_t bits, std::uint32_t capacity) { return bits & ~padding_mask(capacity); }

std::uint64_t free_slots(std::uint64_t bits, std::uint32_t capacity) { return ~bits & ~padding_mask(capacity); }

// Slot of the loc-th free slot across the targets of source i, as
// (target ordinal k in 1..n, slot), following the target order.
std::pair<unsigned, std::uint32_t> locate_target(const Heap& heap, const DefragPlan& plan, std::uint64_t i,
                                                 std::uint32_t capacity, std::uint32_t loc) {
  for (unsigned k = 1; k <= plan.n; ++k) {
    std::uint64_t free = free_slots(heap.alloc_bits(plan.target(i, k)), capacity);
    auto count = static_cast<std::uint32_t>(std::popcount(free));
    if (loc < count) return {k, nth_set_bit(free, loc)};
    loc -= count;
  }
  return {0, kNoBit};
}

template <class F>
void for_each_source(WorkerPool& pool, std::uint64_t sources, F&& fn) {
  const unsigned workers = pool.size();
  pool.run([&](unsigned w) {
    for (std::uint64_t i = w; i < sources; i += workers) fn(i);
  });
}

}  // namespace

std::uint64_t DefragReport::moved() const {
  std::uint64_t m = 0;
  for (const auto& p : passes) m += p.moved;
  return m;
}

std::uint64_t DefragReport::rewritten() const {
  std::uint64_t m = 0;
  for (const auto& p : passes) m += p.rewritten;
  return m;
}

std::uint64_t first_free_slots(std::uint64_t bits, std::uint32_t capacity, std::uint32_t m) {
  std::uint64_t free = free_slots(bits, capacity);
  if (m == 0) return 0;
  unsigned last = nth_set_bit(free, m - 1);
  if (last == kNoBit) return free;
  return last == 63 ? free : free & ((2ULL << last) - 1);
}

std::uint64_t pass_bound(std::uint64_t d, std::uint64_t k1, unsigned n) {
  const double k = static_cast<double>(std::max<std::uint64_t>(k1, 1));
  if (d == 0 || static_cast<double>(d) <= k) return 0;
  const double passes = std::log(static_cast<double>(d) / k) / std::log((n + 1.0) / n);
  // Guard against the logarithm landing a hair above an exact integer.
  return static_cast<std::uint64_t>(std::ceil(passes - 1e-9));
}

Defragmenter::Defragmenter(Allocator& allocator, WorkerPool& pool) : alloc_(allocator), pool_(pool) {}

std::optional<DefragPlan> Defragmenter::plan_pass(TypeId type, unsigned n) {
  if (n == 0) n = alloc_.defrag_factor();
  alloc_.set_defrag_factor(n);
  DefragPlan plan;
  plan.type = type;
  plan.n = n;
  plan.blocks = alloc_.candidates(type).indices_sorted();
  if (plan.blocks.size() < n + 1) return std::nullopt;
  plan.sources = plan.blocks.size() / (n + 1);
  plan.moved_into.assign(plan.sources * n, 0);
  return plan;
}

std::uint64_t Defragmenter::copy_objects(DefragPlan& plan) {
  Heap& heap = alloc_.heap();
  const auto& td = alloc_.registry().type(plan.type);
  const std::uint32_t cap = td.block_capacity;
  std::atomic<std::uint64_t> moved{0};
  for_each_source(pool_, plan.sources, [&](std::uint64_t i) {
    const std::uint64_t src = plan.source(i);
    std::uint64_t live = live_slots(heap.alloc_bits(src), cap);
    std::uint32_t loc = 0;
    while (live) {
      auto s_oid = static_cast<std::uint32_t>(std::countr_zero(live));
      live &= live - 1;
      auto [k, t_oid] = locate_target(heap, plan, i, cap, loc++);
      const std::uint64_t dst = plan.target(i, k);
      for (std::uint32_t f = 0; f < td.fields.size(); ++f) {
        const std::uint32_t size = td.fields[f].size();
        std::memcpy(heap.segment(dst) + td.field_offsets[f] + std::size_t{t_oid} * size,
                    heap.segment(src) + td.field_offsets[f] + std::size_t{s_oid} * size, size);
      }
      ++plan.moved_into[(k - 1) * plan.sources + i];
    }
    moved.fetch_add(loc, std::memory_order_relaxed);
  });
  return moved.load();
}

void Defragmenter::place_forwarding(const DefragPlan& plan) {
  Heap& heap = alloc_.heap();
  const std::uint32_t cap = heap.capacity_of(plan.type);
  for_each_source(pool_, plan.sources, [&](std::uint64_t i) {
    const std::uint64_t src = plan.source(i);
    std::uint64_t live = live_slots(heap.alloc_bits(src), cap);
    std::uint32_t loc = 0;
    while (live) {
      auto s_oid = static_cast<std::uint32_t>(std::countr_zero(live));
      live &= live - 1;
      auto [k, t_oid] = locate_target(heap, plan, i, cap, loc++);
      Handle fwd = encode_handle(plan.type, cap, plan.target(i, k), t_oid);
      std::memcpy(heap.segment(src) + std::size_t{s_oid} * sizeof(std::uint64_t), &fwd.bits, sizeof fwd.bits);
    }
  });
}

Handle Defragmenter::rewrite_handle(Handle h, const DefragPlan& plan) const {
  if (h.is_null()) return h;
  const std::uint64_t b = h.block();
  if (b < plan.boundary() && alloc_.candidates(plan.type).get(b)) {
    Handle fwd;
    std::memcpy(&fwd.bits, alloc_.heap().segment(b) + std::size_t{h.slot()} * sizeof(std::uint64_t), sizeof fwd.bits);
    return fwd;
  }
  return h;
}

std::uint64_t Defragmenter::rewrite_heap(const DefragPlan& plan) {
  const Registry& reg = alloc_.registry();
  Heap& heap = alloc_.heap();
  std::uint64_t root_rewrites = 0;
  for (std::vector<Handle>* roots : roots_) {
    for (Handle& h : *roots) {
      Handle r = rewrite_handle(h, plan);
      if (r != h) h = r, ++root_rewrites;
    }
  }
  const auto scan = reg.reference_bearing_scan_set(plan.type);
  if (scan.empty()) return root_rewrites;

  // Targets already hold their relocated objects although their allocation
  // bits are set only by finalize_pass; include those slots in the scan.
  const std::uint32_t type_cap = heap.capacity_of(plan.type);
  std::unordered_map<std::uint64_t, std::uint64_t> pending;
  for (std::uint64_t j = 0; j < plan.moved_into.size(); ++j) {
    if (!plan.moved_into[j]) continue;
    std::uint64_t b = plan.blocks[plan.sources + j];
    pending[b] = first_free_slots(heap.alloc_bits(b), type_cap, plan.moved_into[j]);
  }

  std::atomic<std::uint64_t> rewritten{root_rewrites};
  std::vector<TypeId> holders;
  for (const auto& ref : scan)
    if (holders.empty() || holders.back() != ref.holder) holders.push_back(ref.holder);

  for (TypeId u : holders) {
    const auto& td = reg.type(u);
    const std::uint32_t cap = td.block_capacity;
    const std::vector<std::uint64_t> blocks = alloc_.allocated(u).indices(&pool_);
    const unsigned workers = pool_.size();
    pool_.run([&](unsigned w) {
      std::uint64_t local = 0;
      for (std::uint64_t idx = w; idx < blocks.size(); idx += workers) {
        const std::uint64_t b = blocks[idx];
        // Source blocks now hold forwarding handles instead of objects.
        if (u == plan.type && b < plan.boundary() && alloc_.candidates(u).get(b)) continue;
        std::uint64_t live = live_slots(heap.alloc_bits(b), cap);
        if (u == plan.type) {
          auto it = pending.find(b);
          if (it != pending.end()) live |= it->second;
        }
        for (const auto& ref : scan) {
          if (ref.holder != u) continue;
          const auto& fd = td.fields[ref.field_index];
          std::byte* base = heap.segment(b) + td.field_offsets[ref.field_index];
          for (std::uint64_t bits = live; bits; bits &= bits - 1) {
            auto slot = static_cast<std::uint32_t>(std::countr_zero(bits));
            for (std::uint32_t e = 0; e < fd.length; ++e) {
              std::byte* at = base + (std::size_t{slot} * fd.length + e) * sizeof(std::uint64_t);
              Handle h;
              std::memcpy(&h.bits, at, sizeof h.bits);
              Handle r = rewrite_handle(h, plan);
              if (r != h) {
                std::memcpy(at, &r.bits, sizeof r.bits);
                ++local;
              }
            }
          }
        }
      }
      rewritten.fetch_add(local, std::memory_order_relaxed);
    });
  }
  return rewritten.load();
}

void Defragmenter::finalize_pass(const DefragPlan& plan) {
  Heap& heap = alloc_.heap();
  const std::uint32_t cap = heap.capacity_of(plan.type);
  const std::uint32_t n = alloc_.defrag_factor();
  for (std::uint64_t j = 0; j < plan.moved_into.size(); ++j) {
    const std::uint32_t m = plan.moved_into[j];
    if (!m) continue;
    const std::uint64_t b = plan.blocks[plan.sources + j];
    auto& bitmap = heap.header(b).alloc_bitmap;
    const std::uint64_t before = bitmap.load(std::memory_order_relaxed);
    const std::uint64_t after = before | first_free_slots(before, cap, m);
    bitmap.store(after, std::memory_order_relaxed);
    StateDeltas d;
    d.add({static_cast<std::uint8_t>(std::popcount(before)), static_cast<std::uint8_t>(std::popcount(after))}, cap, n);
    if (d.active || d.defrag) alloc_.apply_deltas(plan.type, d.active, d.defrag, 0, 0, b);
  }
  for (std::uint64_t i = 0; i < plan.sources; ++i) {
    const std::uint64_t b = plan.source(i);
    heap.header(b).alloc_bitmap.store(~0ULL, std::memory_order_relaxed);
    alloc_.apply_deltas(plan.type, -1, -1, -1, +1, b);
  }
  std::atomic_thread_fence(std::memory_order_seq_cst);
}

PassRecord Defragmenter::run_pass(DefragPlan& plan) {
  PassRecord rec;
  rec.candidates_before = plan.blocks.size();
  std::uint64_t t0 = now_ns();
  rec.moved = copy_objects(plan);
  std::uint64_t t1 = now_ns();
  place_forwarding(plan);
  std::uint64_t t2 = now_ns();
  rec.rewritten = rewrite_heap(plan);
  std::uint64_t t3 = now_ns();
  finalize_pass(plan);
  std::uint64_t t4 = now_ns();
  rec.copy_ns = t1 - t0;
  rec.forward_ns = t2 - t1;
  rec.rewrite_ns = t3 - t2;
  rec.finalize_ns = t4 - t3;
  rec.candidates_after = alloc_.candidates(plan.type).count();
  return rec;
}

DefragReport Defragmenter::defragment(TypeId type, std::uint64_t k1, unsigned n) {
  DefragReport report;
  if (n == 0) n = alloc_.defrag_factor();
  alloc_.set_defrag_factor(n);
  while (alloc_.candidates(type).count() > k1) {
    auto plan = plan_pass(type, n);
    if (!plan) break;
    report.passes.push_back(run_pass(*plan));
    if (pass_hook_) pass_hook_();
  }
  return report;
}

bool Defragmenter::should_defrag(TypeId type, double k2) const {
  const double n = alloc_.defrag_factor();
  const double absolute = k2 >= 1.0 ? k2 : k2 * static_cast<double>(alloc_.heap().num_blocks());
  return static_cast<double>(alloc_.candidates(type).count()) >= absolute * n / (n + 1.0);
}

}  // namespace soaheap

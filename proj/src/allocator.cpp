#include "soaheap/allocator.hpp"

#include <bit>
#include <cassert>
#include <chrono>

#include "soaheap/backoff.hpp"
#include "soaheap/rng.hpp"
#include "soaheap/worker_pool.hpp"

namespace soaheap {

namespace {

// One pending signed write per bitmap; positive means set, negative clear.
// Pending writes are retried as a group so that no order of the individual
// writes can wait on another write of the same group.
struct PendingWrite {
  HierBitmap* bitmap;
  int count;
};

void flush(PendingWrite* writes, std::size_t n, std::uint64_t block) {
  Backoff backoff;
  while (true) {
    bool done = true;
    bool progress = false;
    for (std::size_t i = 0; i < n; ++i) {
      auto& w = writes[i];
      if (w.count > 0) {
        if (w.bitmap->try_set(block)) --w.count, progress = true;
      } else if (w.count < 0) {
        if (w.bitmap->try_clear(block)) ++w.count, progress = true;
      }
      if (w.count != 0) done = false;
    }
    if (done) return;
    if (progress) {
      backoff.reset();
    } else {
      backoff.pause();
    }
  }
}

}  // namespace

Allocator::Allocator(const Registry& registry, AllocConfig config)
    : registry_(registry),
      config_(config),
      heap_(registry),
      free_(heap_.num_blocks(), true),
      per_type_(registry.num_types() + 1),
      seed_counters_(new std::atomic<std::uint64_t>[kSeedStreams]) {
  if (config_.defrag_n == 0) throw std::invalid_argument("defragmentation factor must be at least 1");
  if (config_.oom_misses == 0) config_.oom_misses = 1;
  for (TypeId t : registry.concrete_types()) {
    per_type_[t].allocated = std::make_unique<HierBitmap>(heap_.num_blocks());
    per_type_[t].active = std::make_unique<HierBitmap>(heap_.num_blocks());
    per_type_[t].defrag = std::make_unique<HierBitmap>(heap_.num_blocks());
  }
  for (unsigned i = 0; i < kSeedStreams; ++i) seed_counters_[i].store(0, std::memory_order_relaxed);
}

void Allocator::apply_deltas(TypeId type, int active, int defrag, int allocated, int free, std::uint64_t block) {
  auto& pt = per_type_[type];
  PendingWrite writes[] = {
      {pt.allocated.get(), allocated}, {pt.active.get(), active}, {pt.defrag.get(), defrag}, {&free_, free}};
  flush(writes, 4, block);
}

std::uint64_t Allocator::next_seed() {
  unsigned w = WorkerPool::current_worker();
  std::uint64_t k = seed_counters_[w % kSeedStreams].fetch_add(1, std::memory_order_relaxed);
  return mix_seed(config_.seed ^ (std::uint64_t{w} << 40), k);
}

Handle Allocator::allocate(TypeId type) { return allocate(type, next_seed()); }

Handle Allocator::allocate(TypeId type, std::uint64_t seed) {
  Handle h;
  if (allocate_batch(type, 1, seed, &h) != 1) throw OutOfMemory("out of memory");
  return h;
}

std::vector<Handle> Allocator::allocate_batch(TypeId type, unsigned count, std::uint64_t seed) {
  std::vector<Handle> out(count);
  out.resize(allocate_batch(type, count, seed, out.data()));
  return out;
}

namespace {

std::uint64_t clock_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

}  // namespace

std::size_t Allocator::allocate_batch(TypeId type, unsigned count, std::uint64_t seed, Handle* out) {
  if (!timing_) return allocate_untimed(type, count, seed, out);
  const std::uint64_t t0 = clock_ns();
  std::size_t got = 0;
  try {
    got = allocate_untimed(type, count, seed, out);
  } catch (...) {
    alloc_ns_.fetch_add(clock_ns() - t0, std::memory_order_relaxed);
    throw;
  }
  alloc_ns_.fetch_add(clock_ns() - t0, std::memory_order_relaxed);
  alloc_calls_.fetch_add(1, std::memory_order_relaxed);
  return got;
}

void Allocator::deallocate(Handle h) {
  if (!timing_) return deallocate_untimed(h);
  const std::uint64_t t0 = clock_ns();
  deallocate_untimed(h);
  dealloc_ns_.fetch_add(clock_ns() - t0, std::memory_order_relaxed);
  dealloc_calls_.fetch_add(1, std::memory_order_relaxed);
}

Allocator::OpTimes Allocator::take_op_times() {
  OpTimes t;
  t.alloc_ns = alloc_ns_.exchange(0);
  t.dealloc_ns = dealloc_ns_.exchange(0);
  t.alloc_calls = alloc_calls_.exchange(0);
  t.dealloc_calls = dealloc_calls_.exchange(0);
  return t;
}

std::size_t Allocator::allocate_untimed(TypeId type, unsigned count, std::uint64_t seed, Handle* out) {
  const auto& td = registry_.type(type);
  if (td.is_abstract) throw std::invalid_argument("cannot allocate abstract type " + td.name);
  const std::uint32_t capacity = td.block_capacity;
  const std::uint32_t n = config_.defrag_n;
  auto& pt = per_type_[type];

  std::size_t got = 0;
  unsigned misses = 0;
  std::uint64_t attempt = 0;
  Backoff backoff;
  while (got < count) {
    std::uint64_t block = 0;
    bool found = false;
    for (unsigned i = 0; i < config_.retries && !found; ++i) {
      OpOutcome o = pt.active->try_find_set(mix_seed(seed, attempt++));
      if (o.success) block = o.position, found = true;
    }
    if (!found) {
      OpOutcome o = free_.claim_any(mix_seed(seed, attempt++));
      if (!o.success) {
        if (config_.oom == OomPolicy::error && ++misses >= config_.oom_misses) {
          if (got == 0) throw OutOfMemory("out of memory allocating " + td.name);
          return got;
        }
        backoff.pause();
        continue;
      }
      block = o.position;
      heap_.init_block(block, type);
      apply_deltas(type, +1, +1, +1, 0, block);
    }

    SlotOutcome res = heap_.reserve(block, static_cast<unsigned>(count - got), mix_seed(seed, attempt++));
    if (res.failed()) continue;

    // The block may have been emptied, retired and reused for another type
    // between the lookup and the reservation; the tag read now is the tag of
    // the incarnation that holds our slots.
    TypeId actual = heap_.type_of(block);
    if (actual != type) {
      const std::uint32_t cap = heap_.capacity_of(actual);
      StateDeltas d = res.deltas(cap, n);
      std::uint64_t before = heap_.header(block).alloc_bitmap.fetch_and(~res.slots, std::memory_order_acq_rel);
      d.add({static_cast<std::uint8_t>(std::popcount(before)),
             static_cast<std::uint8_t>(std::popcount(before & ~res.slots))},
            cap, n);
      int alloc_delta = 0, free_delta = 0;
      if (d.flags & kEmpty) {
        InvalidateOutcome inv = heap_.invalidate(block, cap, n);
        d.active += inv.deltas.active;
        d.defrag += inv.deltas.defrag;
        if (inv.success) alloc_delta = -1, free_delta = +1;
      }
      apply_deltas(actual, d.active, d.defrag, alloc_delta, free_delta, block);
      continue;
    }

    StateDeltas d = res.deltas(capacity, n);
    if (d.active || d.defrag) apply_deltas(type, d.active, d.defrag, 0, 0, block);
    std::uint64_t slots = res.slots;
    while (slots) {
      auto s = static_cast<std::uint32_t>(std::countr_zero(slots));
      slots &= slots - 1;
      out[got++] = encode_handle(type, capacity, block, s);
    }
    misses = 0;
  }
  return got;
}

void Allocator::deallocate_untimed(Handle h) {
  assert(!h.is_null());
  const std::uint64_t block = h.block();
  const TypeId type = heap_.type_of(block);
  assert(type == h.type());
  const std::uint32_t capacity = heap_.capacity_of(type);
  const std::uint32_t n = config_.defrag_n;

  StateDeltas d;
  d.add(heap_.release(block, h.slot()), capacity, n);
  int alloc_delta = 0, free_delta = 0;
  if (d.flags & kEmpty) {
    InvalidateOutcome inv = heap_.invalidate(block, capacity, n);
    d.active += inv.deltas.active;
    d.defrag += inv.deltas.defrag;
    if (inv.success) alloc_delta = -1, free_delta = +1;
  }
  if (d.active || d.defrag || alloc_delta || free_delta)
    apply_deltas(type, d.active, d.defrag, alloc_delta, free_delta, block);
}

double Allocator::fragmentation() const {
  double sum = 0.0;
  std::uint64_t blocks = 0;
  for (TypeId t : registry_.concrete_types()) {
    const double cap = heap_.capacity_of(t);
    per_type_[t].allocated->for_each_set([&](std::uint64_t b) {
      sum += (cap - heap_.fill(b)) / cap;
      ++blocks;
    });
  }
  return blocks ? sum / static_cast<double>(blocks) : 0.0;
}

double Allocator::fragmentation(TypeId type) const {
  double sum = 0.0;
  std::uint64_t blocks = 0;
  const double cap = heap_.capacity_of(type);
  per_type_[type].allocated->for_each_set([&](std::uint64_t b) {
    sum += (cap - heap_.fill(b)) / cap;
    ++blocks;
  });
  return blocks ? sum / static_cast<double>(blocks) : 0.0;
}

std::uint64_t Allocator::live_objects(TypeId type) const {
  std::uint64_t n = 0;
  per_type_.at(type).allocated->for_each_set([&](std::uint64_t b) { n += heap_.fill(b); });
  return n;
}

HeapStats Allocator::stats() const {
  HeapStats s;
  s.free_blocks = free_.count();
  double sum = 0.0;
  std::uint64_t blocks = 0;
  for (TypeId t : registry_.concrete_types()) {
    TypeStats ts;
    ts.type = t;
    const auto& pt = per_type_[t];
    ts.allocated_blocks = pt.allocated->count();
    ts.active_blocks = pt.active->count();
    ts.candidate_blocks = pt.defrag->count();
    const double cap = heap_.capacity_of(t);
    double type_sum = 0.0;
    pt.allocated->for_each_set([&](std::uint64_t b) {
      std::uint32_t f = heap_.fill(b);
      ts.used_slots += f;
      type_sum += (cap - f) / cap;
    });
    ts.fragmentation = ts.allocated_blocks ? type_sum / static_cast<double>(ts.allocated_blocks) : 0.0;
    s.used_slots += ts.used_slots;
    sum += type_sum;
    blocks += ts.allocated_blocks;
    s.types.push_back(ts);
  }
  s.fragmentation = blocks ? sum / static_cast<double>(blocks) : 0.0;
  return s;
}

std::vector<std::string> Allocator::audit() const {
  std::vector<std::string> problems;
  auto report = [&](std::string msg) {
    if (problems.size() < 64) problems.push_back(std::move(msg));
  };
  auto check_bitmap = [&](const HierBitmap& bm, const std::string& name) {
    if (auto v = bm.consistency_violations()) report(name + ": " + std::to_string(v) + " inconsistent summary bits");
  };
  check_bitmap(free_, "free");
  const auto types = registry_.concrete_types();
  for (TypeId t : types) {
    const auto& name = registry_.type(t).name;
    check_bitmap(*per_type_[t].allocated, "allocated[" + name + "]");
    check_bitmap(*per_type_[t].active, "active[" + name + "]");
    check_bitmap(*per_type_[t].defrag, "defrag[" + name + "]");
  }

  const std::uint32_t n = config_.defrag_n;
  for (std::uint64_t b = 0; b < heap_.num_blocks(); ++b) {
    const std::string where = "block " + std::to_string(b) + ": ";
    unsigned owners = 0;
    TypeId owner = kNoType;
    for (TypeId t : types) {
      const auto& pt = per_type_[t];
      bool alloc = pt.allocated->get(b), act = pt.active->get(b), def = pt.defrag->get(b);
      if (act && !alloc) report(where + "active but not allocated");
      if (def && !act) report(where + "candidate but not active");
      if (alloc) ++owners, owner = t;
    }
    const std::uint64_t bits = heap_.alloc_bits(b);
    if (free_.get(b)) {
      if (owners) report(where + "free and allocated");
      if (bits != ~0ULL) report(where + "free but reservable");
      continue;
    }
    if (owners != 1) {
      report(where + "not free but owned by " + std::to_string(owners) + " types");
      continue;
    }
    if (heap_.type_of(b) != owner) report(where + "type tag disagrees with allocated bitmap");
    const std::uint32_t cap = heap_.capacity_of(owner);
    const std::uint64_t pad = padding_mask(cap);
    if ((bits & pad) != pad) report(where + "padding slot cleared");
    const std::uint32_t fill = heap_.fill(b);
    const auto& pt = per_type_[owner];
    if (fill == 0) report(where + "allocated but empty");
    if (pt.active->get(b) != (fill < cap)) report(where + "active bit disagrees with fill " + std::to_string(fill));
    if (pt.defrag->get(b) != (fill <= candidate_threshold(cap, n)))
      report(where + "candidate bit disagrees with fill " + std::to_string(fill));
  }
  return problems;
}

std::vector<std::string> Allocator::audit_references() const {
  std::vector<std::string> problems;
  for (TypeId u : registry_.concrete_types()) {
    const auto& td = registry_.type(u);
    const std::uint32_t cap = td.block_capacity;
    per_type_[u].allocated->for_each_set([&](std::uint64_t b) {
      const std::uint64_t live = heap_.alloc_bits(b) & ~padding_mask(cap);
      for (std::uint32_t f = 0; f < td.fields.size(); ++f) {
        const auto& fd = td.fields[f];
        if (fd.kind != FieldKind::reference) continue;
        for (std::uint64_t bits = live; bits; bits &= bits - 1) {
          const auto slot = static_cast<std::uint32_t>(std::countr_zero(bits));
          for (std::uint32_t e = 0; e < fd.length; ++e) {
            Handle h = load_ref(encode_handle(u, cap, b, slot), f, e);
            if (h.is_null()) continue;
            const std::string where = td.name + " " + std::to_string(b) + ":" + std::to_string(slot) + "." + fd.name;
            const TypeId t = h.type();
            bool ok = t != kNoType && t <= registry_.num_types() && !registry_.type(t).is_abstract &&
                      registry_.is_subtype(t, fd.target) && h.block() < heap_.num_blocks();
            ok = ok && h.capacity() == heap_.capacity_of(t) && h.slot() < h.capacity();
            ok = ok && per_type_[t].allocated->get(h.block()) && heap_.type_of(h.block()) == t &&
                 ((heap_.alloc_bits(h.block()) >> h.slot()) & 1);
            if (!ok && problems.size() < 64) problems.push_back(where + " holds a dangling handle");
          }
        }
      }
    });
  }
  return problems;
}

std::string Allocator::snapshot_csv() const {
  std::string out = "block,type,fill,capacity\n";
  for (TypeId t : registry_.concrete_types()) {
    const auto& td = registry_.type(t);
    per_type_[t].allocated->for_each_set([&](std::uint64_t b) {
      out += std::to_string(b) + "," + td.name + "," + std::to_string(heap_.fill(b)) + "," +
             std::to_string(td.block_capacity) + "\n";
    });
  }
  return out;
}

void Allocator::set_defrag_factor(unsigned n) {
  if (n == 0) throw std::invalid_argument("defragmentation factor must be at least 1");
  if (n == config_.defrag_n) return;
  config_.defrag_n = n;
  for (TypeId t : registry_.concrete_types()) {
    auto& pt = per_type_[t];
    const std::uint32_t th = candidate_threshold(heap_.capacity_of(t), n);
    pt.defrag->reset(false);
    pt.allocated->for_each_set([&](std::uint64_t b) {
      if (heap_.fill(b) <= th) pt.defrag->set(b);
    });
  }
}

}  // namespace soaheap

#include <doctest.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>
#include <unordered_set>

#include "soaheap/runtime.hpp"

using namespace soaheap;

namespace {

void three_types(Registry& reg) {
  reg.register_type("A", std::nullopt, false, {FieldDescriptor::scalar("v", 4)});
  reg.register_type("B", std::nullopt, false, {FieldDescriptor::scalar("v", 4), FieldDescriptor::scalar("w", 4)});
  reg.register_type("C", std::nullopt, false, {FieldDescriptor::array("v", 4, 5)});
}

// Live handles found by scanning every allocated block.
std::multiset<std::uint64_t> scan(const Allocator& a) {
  std::multiset<std::uint64_t> out;
  const Heap& heap = a.heap();
  for (TypeId t : a.registry().concrete_types()) {
    const std::uint32_t cap = heap.capacity_of(t);
    for (std::uint64_t b : a.allocated(t).indices_sorted()) {
      std::uint64_t bits = heap.alloc_bits(b) & ~padding_mask(cap);
      for (; bits; bits &= bits - 1)
        out.insert(encode_handle(t, cap, b, static_cast<std::uint32_t>(__builtin_ctzll(bits))).bits);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("first allocation claims one block") {
  Runtime rt(three_types, 64 * 16);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  Handle h = a.allocate(t, 0);
  CHECK(a.free_blocks().count() == 15);
  const std::uint64_t b = h.block();
  CHECK_FALSE(a.free_blocks().get(b));
  CHECK(a.allocated(t).get(b));
  CHECK(a.active(t).get(b));
  CHECK(a.candidates(t).get(b));
  CHECK(decode_handle(h).type == t);
  CHECK(decode_handle(h).capacity == 64);
  CHECK(a.audit().empty());
}

TEST_CASE("64 sequential allocations fill one block") {
  Runtime rt(three_types, 64 * 16);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  std::set<std::uint64_t> blocks;
  std::set<std::uint32_t> slots;
  for (int i = 0; i < 64; ++i) {
    Handle h = a.allocate(t, 0);
    blocks.insert(h.block());
    slots.insert(h.slot());
  }
  CHECK(blocks.size() == 1);
  CHECK(slots.size() == 64);
  CHECK_FALSE(a.active(t).get(*blocks.begin()));
  CHECK_FALSE(a.candidates(t).get(*blocks.begin()));
  CHECK(a.audit().empty());
}

TEST_CASE("allocate then deallocate returns the heap to all-free") {
  Runtime rt(three_types, 64 * 16);
  Allocator& a = rt.alloc();
  for (TypeId t : rt.registry().concrete_types()) {
    Handle h = a.allocate(t, 3);
    a.deallocate(h);
    CHECK(a.allocated(t).count() == 0);
    CHECK(a.active(t).count() == 0);
    CHECK(a.candidates(t).count() == 0);
  }
  CHECK(a.free_blocks().count() == 16);
  CHECK(a.audit().empty());
}

TEST_CASE("dropping to the candidate threshold sets the defrag bit") {
  Runtime rt(three_types, 64 * 16);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  auto hs = a.allocate_batch(t, 33, 0);
  REQUIRE(hs.size() == 33);
  const std::uint64_t b = hs[0].block();
  CHECK_FALSE(a.candidates(t).get(b));
  a.deallocate(hs.back());
  CHECK(a.candidates(t).get(b));
  CHECK(a.audit().empty());
}

TEST_CASE("batch allocation across blocks and out of memory") {
  Runtime rt(three_types, 64 * 2);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  auto hs = a.allocate_batch(t, 64, 1);
  auto more = a.allocate_batch(t, 64, 2);
  CHECK(hs.size() == 64);
  CHECK(more.size() == 64);
  CHECK_THROWS_AS(a.allocate(t, 3), OutOfMemory);
  a.deallocate(hs[0]);
  CHECK_NOTHROW(a.allocate(t, 4));
  CHECK(a.audit().empty());
}

TEST_CASE("abstract types cannot be allocated") {
  Runtime rt(
      [](Registry& r) {
        TypeId ag = r.register_type("Agent", std::nullopt, true, {FieldDescriptor::scalar("x", 4)});
        r.register_type("Fish", ag, false, {FieldDescriptor::scalar("t", 4)});
      },
      64);
  CHECK_THROWS(rt.alloc().allocate(rt.registry().id_of("Agent"), 0));
}

TEST_CASE("fragmentation formula") {
  Runtime rt(three_types, 64 * 16);
  Allocator& a = rt.alloc();
  CHECK(a.fragmentation() == 0.0);
  const TypeId t = rt.registry().id_of("A");
  auto full = a.allocate_batch(t, 64, 0);
  auto half = a.allocate_batch(t, 32, 0);
  REQUIRE(half[0].block() != full[0].block());
  CHECK(a.fragmentation() == doctest::Approx(0.25));
  CHECK(a.fragmentation(t) == doctest::Approx(0.25));
}

TEST_CASE("stats match a heap scan") {
  Runtime rt(three_types, 64 * 64);
  Allocator& a = rt.alloc();
  CHECK(a.stats().free_blocks == 64);
  std::mt19937_64 rng(9);
  std::vector<Handle> live;
  const auto types = rt.registry().concrete_types();
  for (int k = 0; k < 3000; ++k) {
    if (live.empty() || rng() % 3) {
      live.push_back(a.allocate(types[rng() % types.size()], rng()));
    } else {
      std::swap(live[rng() % live.size()], live.back());
      a.deallocate(live.back());
      live.pop_back();
    }
  }
  const HeapStats s = a.stats();
  CHECK(s.used_slots == live.size());
  std::uint64_t allocated = 0;
  double sum = 0;
  for (TypeId t : types) {
    const std::uint32_t cap = a.heap().capacity_of(t);
    for (std::uint64_t b : a.allocated(t).indices_sorted()) {
      ++allocated;
      sum += static_cast<double>(cap - a.heap().fill(b)) / cap;
    }
  }
  CHECK(s.free_blocks == 64 - allocated);
  CHECK(s.fragmentation == doctest::Approx(sum / static_cast<double>(allocated)));
  std::multiset<std::uint64_t> expect;
  for (Handle h : live) expect.insert(h.bits);
  CHECK(scan(a) == expect);
  CHECK(a.audit().empty());
}

TEST_CASE("single-threaded trace matches a naive reference allocator") {
  Runtime rt(three_types, 64 * 64);
  Allocator& a = rt.alloc();
  const auto types = rt.registry().concrete_types();
  // Reference: one flat array per type of field values.
  std::map<TypeId, std::vector<std::int32_t>> naive;
  std::vector<std::pair<Handle, std::int32_t>> live;
  std::mt19937_64 rng(4);
  for (int k = 0; k < 5000; ++k) {
    if (live.empty() || rng() % 5 < 3) {
      const TypeId t = types[rng() % types.size()];
      const auto v = static_cast<std::int32_t>(k);
      Handle h = a.allocate(t, rng());
      a.store<std::int32_t>(h, 0, v);
      live.emplace_back(h, v);
      naive[t].push_back(v);
    } else {
      const std::size_t i = rng() % live.size();
      auto [h, v] = live[i];
      live.erase(live.begin() + static_cast<long>(i));
      auto& vec = naive[h.type()];
      vec.erase(std::find(vec.begin(), vec.end(), v));
      a.deallocate(h);
    }
  }
  for (TypeId t : types) {
    std::multiset<std::int32_t> got, want(naive[t].begin(), naive[t].end());
    for (std::uint64_t bits : scan(a))
      if (Handle{bits}.type() == t) got.insert(a.load<std::int32_t>(Handle{bits}, 0));
    CHECK(got == want);
  }
}

TEST_CASE("concurrent allocations are distinct") {
  Runtime rt(three_types, 64 * 512, AllocConfig{}, 16);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  std::vector<std::vector<Handle>> per(16);
  rt.pool().run([&](unsigned w) {
    for (int i = 0; i < 1000; ++i) per[w].push_back(a.allocate(t));
  });
  std::unordered_set<std::uint64_t> all;
  for (auto& v : per)
    for (Handle h : v) all.insert(h.bits);
  CHECK(all.size() == 16000);
  CHECK(scan(a).size() == 16000);
  CHECK(a.audit().empty());
}

TEST_CASE("concurrent mixed allocate and deallocate keep the heap coherent") {
  Runtime rt(three_types, 64 * 256, AllocConfig{}, 8);
  Allocator& a = rt.alloc();
  const auto types = rt.registry().concrete_types();
  std::vector<std::vector<Handle>> per(8);
  rt.pool().run([&](unsigned w) {
    std::mt19937_64 rng(w);
    for (int i = 0; i < 5000; ++i) {
      if (per[w].empty() || rng() % 2) {
        per[w].push_back(a.allocate(types[rng() % types.size()]));
      } else {
        std::swap(per[w][rng() % per[w].size()], per[w].back());
        a.deallocate(per[w].back());
        per[w].pop_back();
      }
    }
  });
  std::multiset<std::uint64_t> expect;
  for (auto& v : per)
    for (Handle h : v) expect.insert(h.bits);
  CHECK(std::set<std::uint64_t>(expect.begin(), expect.end()).size() == expect.size());
  CHECK(scan(a) == expect);
  CHECK(a.audit().empty());
  rt.pool().run([&](unsigned w) {
    for (Handle h : per[w]) a.deallocate(h);
  });
  CHECK(a.free_blocks().count() == a.heap().num_blocks());
  CHECK(a.audit().empty());
}

TEST_CASE("spin policy waits for memory to come back") {
  AllocConfig cfg;
  cfg.oom = OomPolicy::spin;
  Runtime rt(three_types, 64, cfg, 2);
  Allocator& a = rt.alloc();
  const TypeId t = rt.registry().id_of("A");
  auto hs = a.allocate_batch(t, 64, 0);
  std::atomic<bool> got{false};
  rt.pool().run([&](unsigned w) {
    if (w == 0) {
      Handle h = a.allocate(t, 1);
      got = !h.is_null();
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      a.deallocate(hs[5]);
    }
  });
  CHECK(got.load());
}

TEST_CASE("timing accounting") {
  Runtime rt(three_types, 64 * 4);
  Allocator& a = rt.alloc();
  a.set_timing(true);
  Handle h = a.allocate(rt.registry().id_of("A"), 0);
  a.deallocate(h);
  auto t = a.take_op_times();
  CHECK(t.alloc_calls == 1);
  CHECK(t.dealloc_calls == 1);
  CHECK(a.take_op_times().alloc_calls == 0);
}

TEST_CASE("reference audit") {
  Runtime rt(
      [](Registry& r) {
        r.register_type("Node", std::nullopt, false,
                        {FieldDescriptor::scalar("v", 4), FieldDescriptor::reference("next", "Node")});
      },
      64 * 4);
  Allocator& a = rt.alloc();
  Handle x = a.allocate(1, 0), y = a.allocate(1, 1);
  a.store_ref(x, 1, y);
  a.store_ref(y, 1, Handle{});
  CHECK(a.audit_references().empty());
  a.deallocate(y);
  CHECK_FALSE(a.audit_references().empty());
}

TEST_CASE("snapshot csv") {
  Runtime rt(three_types, 64 * 4);
  Allocator& a = rt.alloc();
  a.allocate_batch(rt.registry().id_of("B"), 3, 0);
  const std::string csv = a.snapshot_csv();
  CHECK(csv.rfind("block,type,fill,capacity\n", 0) == 0);
  CHECK(csv.find(",B,3,") != std::string::npos);
}

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <vector>

#include "soaheap/runtime.hpp"

using namespace soaheap;

namespace {

void counter_types(Registry& reg) {
  TypeId base = reg.register_type("Base", std::nullopt, true, {FieldDescriptor::scalar("count", 4)});
  reg.register_type("Leaf", base, false, {FieldDescriptor::scalar("x", 4)});
  reg.register_type("Other", base, false, {FieldDescriptor::scalar("x", 4), FieldDescriptor::scalar("y", 4)});
}

// Every (block index, slot) pair of a naive double loop.
std::set<std::pair<std::uint64_t, std::uint32_t>> naive_items(const AssignmentParams& p) {
  std::set<std::pair<std::uint64_t, std::uint32_t>> out;
  for (std::uint64_t b = 0; b < p.num_blocks; ++b)
    for (std::uint32_t s = 0; s < p.capacity; ++s) out.emplace(b, s);
  return out;
}

}  // namespace

TEST_CASE("thread_assignment on six blocks with 256 threads") {
  AssignmentParams p{6, 64, 256};
  CHECK(thread_assignment(0, p) == std::vector<std::pair<std::uint64_t, std::uint32_t>>{{0, 0}, {4, 0}});
  CHECK(thread_assignment(255, p) == std::vector<std::pair<std::uint64_t, std::uint32_t>>{{3, 63}});
  CHECK(assigned_count(255, p) == 1);
  CHECK(thread_assignment(6 * 64, AssignmentParams{6, 64, 1024}).empty());
}

TEST_CASE("thread_assignment covers every item exactly once") {
  for (std::uint32_t cap = 1; cap <= 64; ++cap)
    for (std::uint64_t r = 0; r <= 20; ++r)
      for (std::uint64_t n : {1, 7, 64, 256}) {
        AssignmentParams p{r, cap, n};
        std::set<std::pair<std::uint64_t, std::uint32_t>> got;
        std::uint64_t total = 0;
        for (std::uint64_t tid = 0; tid < n; ++tid) {
          for (auto item : thread_assignment(tid, p)) {
            got.insert(item);
            ++total;
          }
        }
        REQUIRE(total == got.size());
        REQUIRE(got == naive_items(p));
      }
}

TEST_CASE("slot of a thread is constant when the capacity divides the thread count") {
  AssignmentParams p{9, 16, 64};
  for (std::uint64_t tid = 0; tid < 64; ++tid)
    for (auto [b, s] : thread_assignment(tid, p)) CHECK(s == tid % 16);
}

TEST_CASE("snapshot_iteration_bitmaps") {
  Runtime rt(counter_types, 64 * 8);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf"), other = rt.registry().id_of("Other");
  auto hs = a.allocate_batch(leaf, 6, 0);
  for (int i = 1; i < 6; ++i)
    if (i != 5) a.deallocate(hs[i]);
  Handle o = a.allocate(other, 0);
  rt.enumerator().snapshot_iteration_bitmaps(leaf, false);
  const std::uint64_t b = hs[0].block();
  CHECK(a.heap().header(b).iter_bitmap.load() == ((1ULL << hs[0].slot()) | (1ULL << hs[5].slot())));
  CHECK(a.heap().header(o.block()).iter_bitmap.load() == 0);
  Handle late = a.allocate(leaf, 1);
  CHECK_FALSE(((a.heap().header(b).iter_bitmap.load() >> late.slot()) & 1) != 0);
  rt.enumerator().snapshot_iteration_bitmaps(rt.registry().id_of("Base"), true);
  CHECK(a.heap().header(o.block()).iter_bitmap.load() ==
        (padding_mask(a.heap().capacity_of(other)) | (1ULL << o.slot())));
}

TEST_CASE("parallel_do visits every object once") {
  for (unsigned workers : {1u, 4u}) {
    Runtime rt(counter_types, 64 * 8, AllocConfig{}, workers);
    Allocator& a = rt.alloc();
    const TypeId leaf = rt.registry().id_of("Leaf");
    rt.enumerator().parallel_new(leaf, 100, [&](Handle h, std::uint64_t) { a.store<std::int32_t>(h, 0, 0); });
    rt.enumerator().parallel_do(leaf, false, [&](Handle h) { a.store(h, 0, a.load<std::int32_t>(h, 0) + 1); });
    int total = 0;
    rt.enumerator().device_do(leaf, false, [&](Handle h) {
      CHECK(a.load<std::int32_t>(h, 0) == 1);
      ++total;
    });
    CHECK(total == 100);
  }
}

TEST_CASE("parallel_do does not visit objects created during the phase") {
  Runtime rt(counter_types, 64 * 8, AllocConfig{}, 4);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf");
  rt.enumerator().parallel_new(leaf, 100, [&](Handle h, std::uint64_t) { a.store<std::int32_t>(h, 0, 0); });
  std::atomic<int> calls{0};
  rt.enumerator().parallel_do(leaf, false, [&](Handle) {
    calls++;
    Handle n = a.allocate(leaf);
    a.store<std::int32_t>(n, 0, 0);
  });
  CHECK(calls == 100);
  CHECK(a.live_objects(leaf) == 200);
}

TEST_CASE("parallel_do may delete its receiver") {
  Runtime rt(counter_types, 64 * 8, AllocConfig{}, 4);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf");
  rt.enumerator().parallel_new(leaf, 100, [](Handle, std::uint64_t) {});
  rt.enumerator().parallel_do(leaf, false, [&](Handle h) { a.deallocate(h); });
  CHECK(a.live_objects(leaf) == 0);
  CHECK(a.allocated(leaf).count() == 0);
  CHECK(a.free_blocks().count() == a.heap().num_blocks());
  CHECK(a.audit().empty());
}

TEST_CASE("parallel_do over subtypes runs one pass per concrete type") {
  Runtime rt(counter_types, 64 * 8);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf"), other = rt.registry().id_of("Other");
  rt.enumerator().parallel_new(leaf, 10, [](Handle, std::uint64_t) {});
  rt.enumerator().parallel_new(other, 5, [](Handle, std::uint64_t) {});
  std::vector<TypeId> order;
  int phases = 0;
  rt.enumerator().set_phase_hook([&] { ++phases; });
  rt.enumerator().parallel_do(rt.registry().id_of("Base"), true, [&](Handle h) { order.push_back(h.type()); });
  CHECK(order.size() == 15);
  CHECK(std::is_sorted(order.begin(), order.end()));
  CHECK(phases == 2);
  CHECK_THROWS(rt.enumerator().parallel_do(rt.registry().id_of("Base"), false, [](Handle) {}));
}

TEST_CASE("parallel_new indices form a permutation") {
  Runtime rt(
      [](Registry& r) {
        r.register_type(
            "Body", std::nullopt, false,
            {FieldDescriptor::scalar("a", 4), FieldDescriptor::scalar("b", 4), FieldDescriptor::scalar("c", 4),
             FieldDescriptor::scalar("d", 4), FieldDescriptor::scalar("e", 4), FieldDescriptor::scalar("f", 4),
             FieldDescriptor::scalar("g", 4)});
      },
      65536 + 64 * 8, AllocConfig{}, 4);
  Allocator& a = rt.alloc();
  std::vector<std::atomic<int>> seen(65536);
  rt.enumerator().parallel_new(1, 0, [&](Handle, std::uint64_t) { FAIL("no calls expected"); });
  rt.enumerator().parallel_new(1, 65536, [&](Handle h, std::uint64_t i) {
    seen[i]++;
    a.store<std::uint32_t>(h, 0, static_cast<std::uint32_t>(i));
  });
  CHECK(a.live_objects(1) == 65536);
  CHECK(std::all_of(seen.begin(), seen.end(), [](const std::atomic<int>& s) { return s.load() == 1; }));
}

TEST_CASE("device_do matches the allocation bitmaps") {
  Runtime rt(counter_types, 64 * 8);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf");
  int calls = 0;
  rt.enumerator().device_do(leaf, false, [&](Handle) { ++calls; });
  CHECK(calls == 0);
  auto hs = a.allocate_batch(leaf, 150, 2);
  for (std::size_t i = 0; i < hs.size(); i += 3) a.deallocate(hs[i]);
  std::set<std::uint64_t> expect;
  for (std::uint64_t b : a.allocated(leaf).indices_sorted())
    for (std::uint32_t s = 0; s < 64; ++s)
      if ((a.heap().alloc_bits(b) >> s) & 1) expect.insert(encode_handle(leaf, 64, b, s).bits);
  std::set<std::uint64_t> got;
  rt.enumerator().device_do(leaf, false, [&](Handle h) { got.insert(h.bits); });
  CHECK(got == expect);
}

TEST_CASE("parallel_do_and_reduce") {
  Runtime rt(counter_types, 64 * 8, AllocConfig{}, 4);
  Allocator& a = rt.alloc();
  const TypeId leaf = rt.registry().id_of("Leaf");
  auto plus = [](std::int64_t x, std::int64_t y) { return x + y; };
  auto reduce = [&](auto&& op) {
    return rt.enumerator().parallel_do_and_reduce<std::int64_t>(leaf, false, op, plus, 0);
  };
  auto one = [](Handle) { return std::int64_t{1}; };
  CHECK(reduce(one) == 0);
  rt.enumerator().parallel_new(
      leaf, 300, [&](Handle h, std::uint64_t i) { a.store<std::int32_t>(h, 0, static_cast<std::int32_t>(i)); });
  CHECK(reduce(one) == 300);
  std::int64_t seq = 0;
  rt.enumerator().device_do(leaf, false, [&](Handle h) { seq += a.load<std::int32_t>(h, 0); });
  CHECK(reduce([&](Handle h) { return std::int64_t{a.load<std::int32_t>(h, 0)}; }) == seq);
}

TEST_CASE("errors from an op propagate after the join") {
  Runtime rt(counter_types, 64 * 8, AllocConfig{}, 4);
  const TypeId leaf = rt.registry().id_of("Leaf");
  rt.enumerator().parallel_new(leaf, 50, [](Handle, std::uint64_t) {});
  std::atomic<int> calls{0};
  CHECK_THROWS_AS(rt.enumerator().parallel_do(leaf, false,
                                              [&](Handle) {
                                                if (calls++ == 7) throw std::runtime_error("boom");
                                              }),
                  std::runtime_error);
}

TEST_CASE("single-worker visit order is reproducible") {
  auto order = [] {
    Runtime rt(counter_types, 64 * 8);
    Allocator& a = rt.alloc();
    const TypeId leaf = rt.registry().id_of("Leaf");
    rt.enumerator().parallel_new(
        leaf, 200, [&](Handle h, std::uint64_t i) { a.store<std::int32_t>(h, 0, static_cast<std::int32_t>(i)); });
    std::vector<std::int32_t> out;
    rt.enumerator().parallel_do(leaf, false, [&](Handle h) { out.push_back(a.load<std::int32_t>(h, 0)); });
    return out;
  };
  CHECK(order() == order());
}

#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "soaheap/apps/synthetic.hpp"
#include "soaheap/runtime.hpp"

using namespace soaheap;

namespace {

// Tiny keeps the smallest size at 4 bytes so that Wide gets capacity 32.
void node_types(Registry& reg) {
  reg.register_type("Tiny", std::nullopt, false, {FieldDescriptor::scalar("v", 4)});
  reg.register_type("Node", std::nullopt, false,
                    {FieldDescriptor::scalar("value", 4), FieldDescriptor::scalar("id", 4),
                     FieldDescriptor::reference("peer", "Node")});
  reg.register_type("Wide", std::nullopt, false, {FieldDescriptor::scalar("v", 4), FieldDescriptor::scalar("w", 4)});
  reg.register_type("Holder", std::nullopt, false,
                    {FieldDescriptor::scalar("tag", 4), FieldDescriptor::reference("refs", "Node", 2)});
}

// Fills whole blocks of a type, then frees objects so that the k-th block in
// ascending index order keeps fills[k] objects. Returns the survivors.
std::vector<Handle> build_fills(Allocator& a, TypeId t, const std::vector<std::uint32_t>& fills, std::uint64_t seed) {
  const std::uint32_t cap = a.heap().capacity_of(t);
  std::vector<Handle> all;
  for (std::size_t i = 0; i < fills.size(); ++i) {
    auto hs = a.allocate_batch(t, cap, seed + i);
    all.insert(all.end(), hs.begin(), hs.end());
  }
  std::map<std::uint64_t, std::vector<Handle>> by_block;
  for (Handle h : all) by_block[h.block()].push_back(h);
  std::vector<Handle> kept;
  std::size_t k = 0;
  std::mt19937_64 rng(seed);
  for (auto& [b, hs] : by_block) {
    std::shuffle(hs.begin(), hs.end(), rng);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      if (i < fills[k]) {
        kept.push_back(hs[i]);
      } else {
        a.deallocate(hs[i]);
      }
    }
    ++k;
  }
  return kept;
}

}  // namespace

TEST_CASE("plan layout") {
  DefragPlan p;
  p.n = 2;
  p.blocks = {3, 7, 10, 12, 20, 31};
  p.sources = p.blocks.size() / 3;
  CHECK(p.sources == 2);
  CHECK(p.target(0, 1) == 10);
  CHECK(p.target(0, 2) == 20);
  CHECK(p.target(1, 1) == 12);
  CHECK(p.target(1, 2) == 31);
  CHECK(p.boundary() == 10);
}

TEST_CASE("plan_pass needs n + 1 candidates") {
  Runtime rt(node_types, 64 * 32);
  Allocator& a = rt.alloc();
  const TypeId node = rt.registry().id_of("Node");
  build_fills(a, node, {3, 5}, 1);
  CHECK_FALSE(rt.defrag().plan_pass(node, 2).has_value());
  auto plan = rt.defrag().plan_pass(node, 1);
  REQUIRE(plan.has_value());
  CHECK(plan->sources == 1);
  CHECK(std::is_sorted(plan->blocks.begin(), plan->blocks.end()));
}

TEST_CASE("merged fills never exceed the target capacity") {
  for (unsigned n = 1; n <= 3; ++n)
    for (std::uint32_t c = 1; c <= 64; ++c) {
      const std::uint32_t worst = candidate_threshold(c, n);
      CHECK(worst <= n * (c - worst));
    }
}

TEST_CASE("copy places objects in target order") {
  Runtime rt(node_types, 64 * 32);
  Allocator& a = rt.alloc();
  const TypeId wide = rt.registry().id_of("Wide");
  REQUIRE(a.heap().capacity_of(wide) == 32);
  auto kept = build_fills(a, wide, {18, 20, 10, 10}, 2);
  for (Handle h : kept) a.store<std::uint32_t>(h, 0, static_cast<std::uint32_t>(h.bits & 0xffffffff));
  auto plan = rt.defrag().plan_pass(wide, 3);
  REQUIRE(plan.has_value());
  REQUIRE(plan->sources == 1);
  const std::uint64_t t1 = plan->target(0, 1), t2 = plan->target(0, 2), t3 = plan->target(0, 3);
  CHECK(a.heap().fill(plan->source(0)) == 18);
  CHECK(rt.defrag().copy_objects(*plan) == 18);
  CHECK(plan->moved_into == std::vector<std::uint32_t>{12, 6, 0});
  rt.defrag().place_forwarding(*plan);
  rt.defrag().rewrite_heap(*plan);
  rt.defrag().finalize_pass(*plan);
  CHECK(a.heap().fill(t1) == 32);
  CHECK(a.heap().fill(t2) == 16);
  CHECK(a.heap().fill(t3) == 10);
  CHECK_FALSE(a.active(wide).get(t1));
  CHECK(a.free_blocks().get(plan->source(0)));
  CHECK(a.audit().empty());
  // Values survive the move.
  std::multiset<std::uint32_t> want, got;
  for (Handle h : kept) want.insert(static_cast<std::uint32_t>(h.bits & 0xffffffff));
  rt.enumerator().device_do(wide, false, [&](Handle h) { got.insert(a.load<std::uint32_t>(h, 0)); });
  CHECK(got == want);
}

TEST_CASE("empty source moves nothing") {
  Runtime rt(node_types, 64 * 32);
  Allocator& a = rt.alloc();
  const TypeId node = rt.registry().id_of("Node");
  build_fills(a, node, {5, 5}, 3);
  auto plan = rt.defrag().plan_pass(node, 1);
  REQUIRE(plan.has_value());
  plan->sources = 0;
  CHECK(rt.defrag().copy_objects(*plan) == 0);
}

TEST_CASE("forwarding and rewrite_handle") {
  Runtime rt(node_types, 64 * 32);
  Allocator& a = rt.alloc();
  const TypeId node = rt.registry().id_of("Node");
  auto kept = build_fills(a, node, {4, 6, 40}, 4);
  auto plan = rt.defrag().plan_pass(node, 1);
  REQUIRE(plan.has_value());
  const std::uint64_t src = plan->source(0), dst = plan->target(0, 1);
  std::map<std::uint64_t, std::int32_t> value_of;
  for (Handle h : kept) {
    a.store<std::int32_t>(h, 0, static_cast<std::int32_t>(h.slot() + 1000 * h.block()));
    value_of[h.bits] = a.load<std::int32_t>(h, 0);
  }
  rt.defrag().copy_objects(*plan);
  rt.defrag().place_forwarding(*plan);
  std::set<std::uint64_t> targets;
  for (Handle h : kept) {
    Handle r = rt.defrag().rewrite_handle(h, *plan);
    if (h.block() == src) {
      CHECK(r.block() == dst);
      CHECK(a.load<std::int32_t>(r, 0) == value_of[h.bits]);
      targets.insert(r.bits);
    } else {
      CHECK(r == h);
    }
  }
  CHECK(targets.size() == 4);
  CHECK(rt.defrag().rewrite_handle(Handle{}, *plan).is_null());
}

TEST_CASE("defragment keeps references intact") {
  for (unsigned n = 1; n <= 3; ++n) {
    for (unsigned workers : {1u, 3u}) {
      Runtime rt(node_types, 64 * 256, AllocConfig{}, workers);
      Allocator& a = rt.alloc();
      const TypeId node = rt.registry().id_of("Node"), holder = rt.registry().id_of("Holder");
      std::mt19937_64 rng(n * 10 + workers);
      std::vector<std::uint32_t> fills;
      const std::uint32_t node_cap = a.heap().capacity_of(node);
      for (int i = 0; i < 40; ++i) fills.push_back(static_cast<std::uint32_t>(rng() % (node_cap + 1)));
      auto kept = build_fills(a, node, fills, n);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        a.store<std::int32_t>(kept[i], 0, static_cast<std::int32_t>(i * 7));
        a.store<std::int32_t>(kept[i], 1, static_cast<std::int32_t>(i));
        a.store_ref(kept[i], 2, kept[rng() % kept.size()]);
      }
      // Holders keep two references each, one of them sometimes null.
      std::vector<Handle> holders;
      for (int i = 0; i < 50; ++i) {
        Handle h = a.allocate(holder, rng());
        a.store<std::int32_t>(h, 0, i);
        a.store_ref(h, 1, kept[rng() % kept.size()], 0);
        a.store_ref(h, 1, i % 3 ? kept[rng() % kept.size()] : Handle{}, 1);
        holders.push_back(h);
      }
      std::vector<Handle> roots(kept.begin(), kept.begin() + 20);
      std::vector<std::int32_t> root_ids;
      for (Handle h : roots) root_ids.push_back(a.load<std::int32_t>(h, 1));
      rt.defrag().add_roots(&roots);

      auto snapshot = [&] {
        // id -> (value, peer id), holder tag -> referenced ids
        std::map<std::int32_t, std::pair<std::int32_t, std::int32_t>> nodes;
        rt.enumerator().device_do(node, false, [&](Handle h) {
          nodes[a.load<std::int32_t>(h, 1)] = {a.load<std::int32_t>(h, 0), a.load<std::int32_t>(a.load_ref(h, 2), 1)};
        });
        std::map<std::int32_t, std::pair<std::int32_t, std::int32_t>> holds;
        rt.enumerator().device_do(holder, false, [&](Handle h) {
          Handle x = a.load_ref(h, 1, 0), y = a.load_ref(h, 1, 1);
          holds[a.load<std::int32_t>(h, 0)] = {a.load<std::int32_t>(x, 1), y ? a.load<std::int32_t>(y, 1) : -1};
        });
        return std::pair(nodes, holds);
      };
      const auto before = snapshot();
      const std::uint64_t blocks_before = a.allocated(node).count();
      const std::uint64_t d = a.candidates(node).count();
      std::uint64_t last_blocks = blocks_before;
      bool monotone = true;
      rt.defrag().set_pass_hook([&] {
        monotone = monotone && a.allocated(node).count() <= last_blocks;
        last_blocks = a.allocated(node).count();
      });
      auto report = rt.defrag().defragment(node, 0, n);
      CHECK(monotone);
      CHECK(snapshot() == before);
      CHECK(a.audit().empty());
      CHECK(a.audit_references().empty());
      CHECK(a.candidates(node).count() <= n);
      CHECK(a.allocated(node).count() <= blocks_before);
      for (std::size_t i = 0; i < roots.size(); ++i) CHECK(a.load<std::int32_t>(roots[i], 1) == root_ids[i]);
      CHECK(report.passes.size() <= pass_bound(d, 0, n));
      // Residual allowance: at most n candidates are left over.
      double sum = 0;
      std::uint64_t counted = 0;
      std::vector<std::uint64_t> residual = a.candidates(node).indices_sorted();
      const double cap = a.heap().capacity_of(node);
      for (std::uint64_t b : a.allocated(node).indices_sorted()) {
        if (std::find(residual.begin(), residual.end(), b) != residual.end()) continue;
        sum += (cap - a.heap().fill(b)) / cap;
        ++counted;
      }
      if (counted) CHECK(sum / static_cast<double>(counted) <= 1.0 / (n + 1) + 1e-12);
      rt.defrag().remove_roots(&roots);
    }
  }
}

TEST_CASE("pass bound values") {
  CHECK(pass_bound(1000, 1, 1) == 10);
  CHECK(pass_bound(5, 5, 1) == 0);
  CHECK(pass_bound(8, 1, 1) == 3);
  CHECK(pass_bound(0, 0, 2) == 0);
}

TEST_CASE("k1 at or above the candidate count runs no pass") {
  Runtime rt(node_types, 64 * 32);
  Allocator& a = rt.alloc();
  const TypeId node = rt.registry().id_of("Node");
  build_fills(a, node, {3, 4, 5, 6}, 5);
  CHECK(rt.defrag().defragment(node, 4, 1).passes.empty());
  CHECK(rt.defrag().defragment(node, 10, 1).passes.empty());
  CHECK_FALSE(rt.defrag().defragment(node, 0, 1).passes.empty());
}

TEST_CASE("should_defrag thresholds") {
  {
    Runtime rt(node_types, 64 * 128);
    const TypeId node = rt.registry().id_of("Node");
    CHECK_FALSE(rt.defrag().should_defrag(node, 100));
    build_fills(rt.alloc(), node, std::vector<std::uint32_t>(49, 1), 6);
    CHECK_FALSE(rt.defrag().should_defrag(node, 100));
  }
  Runtime rt(node_types, 64 * 128);
  const TypeId node = rt.registry().id_of("Node");
  build_fills(rt.alloc(), node, std::vector<std::uint32_t>(51, 1), 7);
  CHECK(rt.defrag().should_defrag(node, 100));
  // Fractions refer to the block count of the heap.
  CHECK(rt.defrag().should_defrag(node, 0.5));
  CHECK_FALSE(rt.defrag().should_defrag(node, 0.9));
}

TEST_CASE("first_free_slots") {
  CHECK(first_free_slots(0, 64, 3) == 0b111);
  CHECK(first_free_slots(0b101, 64, 2) == 0b1010);
  CHECK(first_free_slots(padding_mask(40), 40, 64) == (1ULL << 40) - 1);
  CHECK(first_free_slots(0, 64, 0) == 0);
}

TEST_CASE("synthetic sweep reaches the guaranteed fragmentation") {
  for (unsigned n : {1u, 3u}) {
    apps::SyntheticParams p;
    p.objects = 8192;
    p.delete_fraction = 0.6;
    p.n = n;
    auto r = apps::synthetic_run(p);
    CHECK(r.integrity);
    CHECK(r.audit_clean);
    CHECK(r.fragmentation_after < 1.0 / (n + 1));
    CHECK(r.fragmentation_before > r.fragmentation_after);
  }
}

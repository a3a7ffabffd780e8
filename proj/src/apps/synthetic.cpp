#include "soaheap/apps/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soaheap/rng.hpp"
#include "soaheap/runtime.hpp"

namespace soaheap::apps {

namespace {

constexpr std::uint32_t kId = 0, kPeerId = 1, kPeer = 2;

void register_synthetic(Registry& reg) {
  reg.register_type("Object", std::nullopt, false,
                    {FieldDescriptor::scalar("id", 4), FieldDescriptor::scalar("peer_id", 4),
                     FieldDescriptor::reference("peer", "Object")});
}

}  // namespace

SyntheticResult synthetic_run(const SyntheticParams& p) {
  AllocConfig config;
  config.defrag_n = p.n;
  config.seed = p.seed;
  const std::uint64_t heap = ((p.objects + 63) / 64 + p.workers + 2) * 64;
  Runtime rt(register_synthetic, heap, config, p.workers);
  Allocator& a = rt.alloc();
  const TypeId type = rt.registry().id_of("Object");

  std::vector<Handle> live(p.objects);
  rt.enumerator().parallel_new(type, p.objects, [&](Handle h, std::uint64_t i) {
    live[i] = h;
    a.store<std::uint32_t>(h, kId, static_cast<std::uint32_t>(i));
  });

  // Exact-size uniform subset: shuffle the indices with a seeded generator.
  CounterRng rng(p.seed, 1ULL << 40);
  std::vector<std::uint64_t> order(p.objects);
  std::iota(order.begin(), order.end(), 0);
  for (std::uint64_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
  const auto doomed = static_cast<std::uint64_t>(std::llround(p.delete_fraction * static_cast<double>(p.objects)));
  std::vector<bool> dead(p.objects, false);
  for (std::uint64_t i = 0; i < doomed; ++i) dead[order[i]] = true;
  const unsigned workers = rt.pool().size();
  rt.pool().run([&](unsigned w) {
    for (std::uint64_t i = w; i < p.objects; i += workers)
      if (dead[i]) a.deallocate(live[i]);
  });

  std::vector<Handle> kept;
  std::vector<std::uint32_t> kept_ids;
  for (std::uint64_t i = 0; i < p.objects; ++i)
    if (!dead[i]) kept.push_back(live[i]), kept_ids.push_back(static_cast<std::uint32_t>(i));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::size_t j = rng.next() % kept.size();
    a.store_ref(kept[i], kPeer, kept[j]);
    a.store<std::uint32_t>(kept[i], kPeerId, kept_ids[j]);
  }

  SyntheticResult r;
  a.set_defrag_factor(p.n);
  r.fragmentation_before = a.fragmentation(type);
  r.blocks_before = a.allocated(type).count();
  r.candidates_before = a.candidates(type).count();
  r.pass_bound = pass_bound(r.candidates_before, p.k1, p.n);

  rt.defrag().add_roots(&kept);
  DefragReport rep = rt.defrag().defragment(type, p.k1, p.n);
  rt.defrag().remove_roots(&kept);

  r.passes = rep.passes.size();
  r.moved = rep.moved();
  r.rewritten = rep.rewritten();
  r.fragmentation_after = a.fragmentation(type);
  r.blocks_after = a.allocated(type).count();
  r.candidates_after = a.candidates(type).count();
  r.live = a.live_objects(type);
  r.audit_clean = a.audit().empty();
  r.integrity = r.live == kept.size();
  for (std::size_t i = 0; i < kept.size() && r.integrity; ++i) {
    Handle h = kept[i];
    if (a.load<std::uint32_t>(h, kId) != kept_ids[i])
      r.integrity = false;
    else if (a.load<std::uint32_t>(a.load_ref(h, kPeer), kId) != a.load<std::uint32_t>(h, kPeerId))
      r.integrity = false;
  }
  return r;
}

}  // namespace soaheap::apps

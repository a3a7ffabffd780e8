#include "soaheap/apps/collision.hpp"

#include <atomic>

namespace soaheap::apps {

namespace {

std::atomic_ref<std::uint64_t> target_ref(Allocator& a, Handle h) {
  return std::atomic_ref<std::uint64_t>(*reinterpret_cast<std::uint64_t*>(a.field_bytes(h, body::kMergeTarget).data()));
}

}  // namespace

void register_collision(Registry& reg) {
  reg.register_type(
      "Body", std::nullopt, false,
      {FieldDescriptor::scalar("pos_x", 4), FieldDescriptor::scalar("pos_y", 4), FieldDescriptor::scalar("vel_x", 4),
       FieldDescriptor::scalar("vel_y", 4), FieldDescriptor::scalar("force_x", 4),
       FieldDescriptor::scalar("force_y", 4), FieldDescriptor::scalar("mass", 4), FieldDescriptor::scalar("id", 4),
       FieldDescriptor::reference("merge_target", "Body"), FieldDescriptor::scalar("successful_merge", 1),
       FieldDescriptor::scalar("break_loop", 1)});
}

CollisionSim::CollisionSim(Runtime& rt, CollisionParams params)
    : NbodySim(rt, params.body), threshold_(params.merge_threshold) {}

std::int32_t CollisionSim::id_of(Handle h) const { return rt_.alloc().load<std::int32_t>(h, body::kId); }

void CollisionSim::step() {
  compute_forces();
  update();
  reset_merge();
  prepare_merge();
  perform_merge();
  delete_merged();
}

void CollisionSim::reset_merge() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(body_, false, [&](Handle h) {
    a.store_ref(h, body::kMergeTarget, Handle{});
    a.store<std::uint8_t>(h, body::kSuccessfulMerge, 0);
    a.store<std::uint8_t>(h, body::kBreakLoop, 0);
  });
}

void CollisionSim::prepare_merge() {
  Allocator& a = rt_.alloc();
  Enumerator& en = rt_.enumerator();
  const float thr2 = threshold_ * threshold_;
  en.parallel_do(body_, false, [&](Handle self) {
    if (a.load<std::uint8_t>(self, body::kBreakLoop)) return;
    const float px = a.load<float>(self, body::kPosX);
    const float py = a.load<float>(self, body::kPosY);
    const float m = a.load<float>(self, body::kMass);
    Handle giver;
    std::int32_t giver_id = 0;
    en.device_do(body_, false, [&](Handle other) {
      if (other == self || !(a.load<float>(other, body::kMass) < m)) return;
      const float dx = a.load<float>(other, body::kPosX) - px;
      const float dy = a.load<float>(other, body::kPosY) - py;
      if (dx * dx + dy * dy >= thr2) return;
      const std::int32_t id = id_of(other);
      if (giver.is_null() || id < giver_id) giver = other, giver_id = id;
    });
    if (giver.is_null()) return;
    // Several receivers may claim the same giver; the smallest receiver id
    // wins when claims do not overlap in time.
    const std::int32_t self_id = id_of(self);
    auto ref = target_ref(a, giver);
    Handle current{ref.load(std::memory_order_relaxed)};
    if (current.is_null() || self_id < id_of(current)) ref.store(self.bits, std::memory_order_relaxed);
    a.store<std::uint8_t>(self, body::kBreakLoop, 1);
  });
}

void CollisionSim::perform_merge() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(body_, false, [&](Handle self) {
    Handle m = a.load_ref(self, body::kMergeTarget);
    if (m.is_null() || !a.load_ref(m, body::kMergeTarget).is_null()) return;
    const float m1 = a.load<float>(self, body::kMass);
    const float m2 = a.load<float>(m, body::kMass);
    const float mass = m1 + m2;
    a.store(m, body::kVelX, (a.load<float>(self, body::kVelX) * m1 + a.load<float>(m, body::kVelX) * m2) / mass);
    a.store(m, body::kVelY, (a.load<float>(self, body::kVelY) * m1 + a.load<float>(m, body::kVelY) * m2) / mass);
    a.store(m, body::kPosX, (a.load<float>(self, body::kPosX) + a.load<float>(m, body::kPosX)) / 2);
    a.store(m, body::kPosY, (a.load<float>(self, body::kPosY) + a.load<float>(m, body::kPosY)) / 2);
    a.store(m, body::kMass, mass);
    a.store<std::uint8_t>(self, body::kSuccessfulMerge, 1);
  });
}

void CollisionSim::delete_merged() {
  Allocator& a = rt_.alloc();
  std::atomic<std::uint64_t> deleted{0};
  rt_.enumerator().parallel_do(body_, false, [&](Handle self) {
    if (!a.load<std::uint8_t>(self, body::kSuccessfulMerge)) {
      // The target may be deleted in this phase; do not keep a dangling handle.
      a.store_ref(self, body::kMergeTarget, Handle{});
      return;
    }
    a.deallocate(self);
    deleted.fetch_add(1, std::memory_order_relaxed);
  });
  merges_ += deleted.load();
}

Handle CollisionSim::find(std::int32_t id) {
  Handle found;
  rt_.enumerator().device_do(body_, false, [&](Handle h) {
    if (id_of(h) == id) found = h;
  });
  return found;
}

std::int32_t CollisionSim::merge_target_id(std::int32_t id) {
  Handle h = find(id);
  if (h.is_null()) return -1;
  Handle t = rt_.alloc().load_ref(h, body::kMergeTarget);
  return t.is_null() ? -1 : id_of(t);
}

std::string CollisionSim::serialize() {
  std::string out;
  for (const BodyState& b : bodies()) out.append(reinterpret_cast<const char*>(&b), sizeof b);
  return out;
}

CollisionSummary collision_run(std::uint64_t num_bodies, std::uint64_t iterations, std::uint64_t seed, float dt,
                               float merge_threshold, unsigned workers) {
  const std::uint64_t heap = ((num_bodies + 63) / 64 + workers + 1) * 64;
  Runtime rt(register_collision, heap, AllocConfig{}, workers);
  CollisionParams p;
  p.body.seed = seed;
  p.body.dt = dt;
  p.merge_threshold = merge_threshold;
  CollisionSim sim(rt, p);
  sim.init_random(num_bodies);
  for (std::uint64_t i = 0; i < iterations; ++i) sim.step();
  return {sim.summary(), sim.merges()};
}

}  // namespace soaheap::apps

#include "soaheap/apps/nbody.hpp"

#include <algorithm>
#include <cmath>

#include "soaheap/rng.hpp"

namespace soaheap::apps {

void register_nbody(Registry& reg) {
  reg.register_type(
      "Body", std::nullopt, false,
      {FieldDescriptor::scalar("pos_x", 4), FieldDescriptor::scalar("pos_y", 4), FieldDescriptor::scalar("vel_x", 4),
       FieldDescriptor::scalar("vel_y", 4), FieldDescriptor::scalar("force_x", 4),
       FieldDescriptor::scalar("force_y", 4), FieldDescriptor::scalar("mass", 4), FieldDescriptor::scalar("id", 4)});
}

BodyState random_body(std::uint64_t seed, std::int32_t index) {
  CounterRng rng(seed, static_cast<std::uint64_t>(index) << 8);
  BodyState s;
  s.id = index;
  s.pos_x = rng.uniform(-1.0f, 1.0f);
  s.pos_y = rng.uniform(-1.0f, 1.0f);
  s.vel_x = rng.uniform(-1.0f, 1.0f);
  s.vel_y = rng.uniform(-1.0f, 1.0f);
  s.mass = static_cast<float>(102 + rng.below(923)) / 1024.0f;
  return s;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

NbodySim::NbodySim(Runtime& rt, BodyParams params) : rt_(rt), params_(params), body_(rt.registry().id_of("Body")) {}

void NbodySim::store_state(Handle h, const BodyState& s) {
  Allocator& a = rt_.alloc();
  a.store(h, body::kPosX, s.pos_x);
  a.store(h, body::kPosY, s.pos_y);
  a.store(h, body::kVelX, s.vel_x);
  a.store(h, body::kVelY, s.vel_y);
  a.store(h, body::kForceX, 0.0f);
  a.store(h, body::kForceY, 0.0f);
  a.store(h, body::kMass, s.mass);
  a.store(h, body::kId, s.id);
  // Collision fields start cleared.
  const auto& fields = rt_.registry().type(body_).fields;
  for (std::uint32_t f = body::kId + 1; f < fields.size(); ++f) {
    auto bytes = a.field_bytes(h, f);
    std::fill(bytes.begin(), bytes.end(), std::byte{0});
  }
}

void NbodySim::init_random(std::uint64_t count) {
  const std::int32_t base = next_id_;
  rt_.enumerator().parallel_new(body_, count, [&](Handle h, std::uint64_t i) {
    BodyState s = random_body(params_.seed, base + static_cast<std::int32_t>(i));
    store_state(h, s);
  });
  next_id_ += static_cast<std::int32_t>(count);
}

Handle NbodySim::add_body(const BodyState& s) {
  Handle h = rt_.alloc().allocate(body_);
  BodyState t = s;
  t.id = next_id_++;
  store_state(h, t);
  return h;
}

void NbodySim::step() {
  compute_forces();
  update();
}

// Every receiver sums the pull of all other bodies. Contributions are first
// placed by body id and then added in id order, so the result does not depend
// on where bodies live in the heap.
void NbodySim::compute_forces() {
  Allocator& a = rt_.alloc();
  Enumerator& en = rt_.enumerator();
  const auto ids = static_cast<std::size_t>(next_id_);
  std::vector<std::vector<float>> scratch(rt_.pool().size(), std::vector<float>(2 * ids));
  const float g = params_.gravity;
  const float soft = params_.softening;

  en.parallel_do(body_, false, [&](Handle self) {
    std::vector<float>& contrib = scratch[WorkerPool::current_worker()];
    std::fill(contrib.begin(), contrib.end(), 0.0f);
    const float px = a.load<float>(self, body::kPosX);
    const float py = a.load<float>(self, body::kPosY);
    const float m = a.load<float>(self, body::kMass);
    en.device_do(body_, false, [&](Handle other) {
      if (other == self) return;
      const float dx = a.load<float>(other, body::kPosX) - px;
      const float dy = a.load<float>(other, body::kPosY) - py;
      const float dist2 = dx * dx + dy * dy + soft;
      const float dist = std::sqrt(dist2);
      const float f = g * m * a.load<float>(other, body::kMass) / dist2;
      const auto id = static_cast<std::size_t>(a.load<std::int32_t>(other, body::kId));
      contrib[2 * id] = f * dx / dist;
      contrib[2 * id + 1] = f * dy / dist;
    });
    float fx = 0.0f, fy = 0.0f;
    for (std::size_t i = 0; i < ids; ++i) {
      fx += contrib[2 * i];
      fy += contrib[2 * i + 1];
    }
    a.store(self, body::kForceX, fx);
    a.store(self, body::kForceY, fy);
  });
}

void NbodySim::update() {
  Allocator& a = rt_.alloc();
  const float dt = params_.dt;
  rt_.enumerator().parallel_do(body_, false, [&](Handle h) {
    const float m = a.load<float>(h, body::kMass);
    float vx = a.load<float>(h, body::kVelX) + a.load<float>(h, body::kForceX) * dt / m;
    float vy = a.load<float>(h, body::kVelY) + a.load<float>(h, body::kForceY) * dt / m;
    const float px = a.load<float>(h, body::kPosX) + vx * dt;
    const float py = a.load<float>(h, body::kPosY) + vy * dt;
    if (px < -1.0f || px > 1.0f) vx = -vx;
    if (py < -1.0f || py > 1.0f) vy = -vy;
    a.store(h, body::kVelX, vx);
    a.store(h, body::kVelY, vy);
    a.store(h, body::kPosX, px);
    a.store(h, body::kPosY, py);
  });
}

std::vector<BodyState> NbodySim::bodies() {
  Allocator& a = rt_.alloc();
  std::vector<BodyState> out;
  rt_.enumerator().device_do(body_, false, [&](Handle h) {
    BodyState s;
    s.id = a.load<std::int32_t>(h, body::kId);
    s.pos_x = a.load<float>(h, body::kPosX);
    s.pos_y = a.load<float>(h, body::kPosY);
    s.vel_x = a.load<float>(h, body::kVelX);
    s.vel_y = a.load<float>(h, body::kVelY);
    s.mass = a.load<float>(h, body::kMass);
    out.push_back(s);
  });
  std::sort(out.begin(), out.end(), [](const BodyState& x, const BodyState& y) { return x.id < y.id; });
  return out;
}

std::vector<std::pair<float, float>> NbodySim::forces() {
  Allocator& a = rt_.alloc();
  std::vector<std::pair<std::int32_t, std::pair<float, float>>> tmp;
  rt_.enumerator().device_do(body_, false, [&](Handle h) {
    tmp.push_back(
        {a.load<std::int32_t>(h, body::kId), {a.load<float>(h, body::kForceX), a.load<float>(h, body::kForceY)}});
  });
  std::sort(tmp.begin(), tmp.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<std::pair<float, float>> out;
  for (const auto& t : tmp) out.push_back(t.second);
  return out;
}

std::uint64_t NbodySim::count() {
  std::uint64_t n = 0;
  rt_.enumerator().device_do(body_, false, [&](Handle) { ++n; });
  return n;
}

BodySummary NbodySim::summary() {
  BodySummary s;
  s.checksum = 0xcbf29ce484222325ULL;
  for (const BodyState& b : bodies()) {
    ++s.bodies;
    s.mass += b.mass;
    s.momentum_x += static_cast<double>(b.mass) * b.vel_x;
    s.momentum_y += static_cast<double>(b.mass) * b.vel_y;
    s.checksum = fnv1a(&b, sizeof b, s.checksum);
  }
  return s;
}

BodySummary nbody_run(std::uint64_t num_bodies, std::uint64_t iterations, std::uint64_t seed, float dt,
                      unsigned workers) {
  const std::uint64_t heap = ((num_bodies + 63) / 64 + workers + 1) * 64;
  Runtime rt(register_nbody, heap, AllocConfig{}, workers);
  BodyParams p;
  p.seed = seed;
  p.dt = dt;
  NbodySim sim(rt, p);
  sim.init_random(num_bodies);
  for (std::uint64_t i = 0; i < iterations; ++i) sim.step();
  return sim.summary();
}

}  // namespace soaheap::apps

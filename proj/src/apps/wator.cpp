#include "soaheap/apps/wator.hpp"

#include "soaheap/rng.hpp"

namespace soaheap::apps {

using namespace wator;

namespace {

// Draws from the generator state stored in a u64 field.
std::uint64_t draw(Allocator& a, Handle h, std::uint32_t field) {
  const std::uint64_t s = a.load<std::uint64_t>(h, field);
  a.store<std::uint64_t>(h, field, s + 1);
  return splitmix64(s);
}

std::uint32_t below(std::uint64_t v, std::uint32_t bound) {
  return static_cast<std::uint32_t>(((v >> 32) * bound) >> 32);
}

}  // namespace

void register_wator(Registry& reg) {
  TypeId agent =
      reg.register_type("Agent", std::nullopt, true,
                        {FieldDescriptor::reference("position", "Cell"),
                         FieldDescriptor::reference("new_position", "Cell"), FieldDescriptor::scalar("rng", 8)});
  reg.register_type("Fish", agent, false, {FieldDescriptor::scalar("spawn_timer", 4)});
  reg.register_type("Shark", agent, false,
                    {FieldDescriptor::scalar("spawn_timer", 4), FieldDescriptor::scalar("energy", 4)});
  reg.register_type("Cell", std::nullopt, false,
                    {FieldDescriptor::reference("agent", "Agent"), FieldDescriptor::reference("neighbors", "Cell", 4),
                     FieldDescriptor::array("neighbor_request", 1, 5), FieldDescriptor::scalar("rng", 8)});
}

std::uint64_t wator_heap_size(std::uint32_t width, std::uint32_t height) {
  // Cells pack 33 to a block; agents at most one per cell. Twice that covers
  // fragmentation and keeps spare blocks for concurrent allocation.
  const std::uint64_t cells = std::uint64_t{width} * height;
  return ((cells / 33 + 1) + 2 * (cells / 56 + 1) + 64) * 64;
}

WatorSim::WatorSim(Runtime& rt, WatorParams params)
    : rt_(rt),
      p_(params),
      agent_(rt.registry().id_of("Agent")),
      fish_(rt.registry().id_of("Fish")),
      shark_(rt.registry().id_of("Shark")),
      cell_(rt.registry().id_of("Cell")) {
  rt_.defrag().add_roots(&cells_);
}

WatorSim::~WatorSim() { rt_.defrag().remove_roots(&cells_); }

void WatorSim::setup() {
  Allocator& a = rt_.alloc();
  const std::uint64_t n = std::uint64_t{p_.width} * p_.height;
  cells_.assign(n, Handle{});
  rt_.enumerator().parallel_new(cell_, n, [&](Handle h, std::uint64_t i) {
    cells_[i] = h;
    a.store_ref(h, kAgent, Handle{});
    for (unsigned k = 0; k < 5; ++k) a.store<std::uint8_t>(h, kRequest, 0, k);
    a.store<std::uint64_t>(h, kCellRng, mix_seed(p_.seed, i));
  });

  const unsigned workers = rt_.pool().size();
  rt_.pool().run([&](unsigned w) {
    for (std::uint64_t i = w; i < n; i += workers) {
      const std::uint32_t x = static_cast<std::uint32_t>(i % p_.width);
      const std::uint32_t y = static_cast<std::uint32_t>(i / p_.width);
      const std::uint32_t nx[4] = {x, (x + 1) % p_.width, x, (x + p_.width - 1) % p_.width};
      const std::uint32_t ny[4] = {(y + p_.height - 1) % p_.height, y, (y + 1) % p_.height, y};
      for (unsigned k = 0; k < 4; ++k) a.store_ref(cells_[i], kNeighbors, cells_[ny[k] * p_.width + nx[k]], k);
    }
  });

  rt_.pool().run([&](unsigned w) {
    for (std::uint64_t i = w; i < n; i += workers) {
      Handle cell = cells_[i];
      const double r = static_cast<double>(draw(a, cell, kCellRng) >> 11) * 0x1.0p-53;
      if (r >= p_.fish_ratio + p_.shark_ratio) continue;
      const bool fish = r < p_.fish_ratio;
      const std::uint64_t rng = draw(a, cell, kCellRng);
      const std::uint32_t spawn = fish ? p_.fish_spawn : p_.shark_spawn;
      Handle agent = new_agent(fish ? fish_ : shark_, cell, rng, below(splitmix64(rng), spawn + 1));
      a.store_ref(cell, kAgent, agent);
    }
  });
}

Handle WatorSim::new_agent(TypeId type, Handle cell, std::uint64_t rng, std::uint32_t spawn_timer) {
  Allocator& a = rt_.alloc();
  Handle h = a.allocate(type);
  a.store_ref(h, kPosition, cell);
  a.store_ref(h, kNewPosition, cell);
  a.store<std::uint64_t>(h, kAgentRng, rng);
  a.store<std::uint32_t>(h, kSpawnTimer, spawn_timer);
  if (type == shark_) a.store<std::uint32_t>(h, kEnergy, p_.shark_energy_start);
  return h;
}

Handle WatorSim::place_fish(std::uint32_t x, std::uint32_t y, std::uint32_t spawn_timer) {
  Handle cell = cells_.at(std::uint64_t{y} * p_.width + x);
  Handle h = new_agent(fish_, cell, mix_seed(p_.seed, cell.bits), spawn_timer);
  rt_.alloc().store_ref(cell, kAgent, h);
  return h;
}

Handle WatorSim::place_shark(std::uint32_t x, std::uint32_t y, std::uint32_t energy, std::uint32_t spawn_timer) {
  Handle cell = cells_.at(std::uint64_t{y} * p_.width + x);
  Handle h = new_agent(shark_, cell, mix_seed(p_.seed, cell.bits), spawn_timer);
  rt_.alloc().store_ref(cell, kAgent, h);
  rt_.alloc().store<std::uint32_t>(h, kEnergy, energy);
  return h;
}

void WatorSim::step() {
  reset_requests();
  fish_prepare();
  decide();
  fish_update();
  reset_requests();
  shark_prepare();
  decide();
  shark_update();
}

void WatorSim::reset_requests() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(cell_, false, [&](Handle c) {
    for (unsigned k = 0; k < 5; ++k) a.store<std::uint8_t>(c, kRequest, 0, k);
  });
}

// Asks one random neighbor to take the agent of this cell: a neighbor holding
// a fish if prefer_fish and one exists, else a free neighbor, else stay.
void WatorSim::request_neighbor(Handle cell, bool prefer_fish) {
  Allocator& a = rt_.alloc();
  Handle nb[4];
  unsigned fish[4], free[4], nf = 0, ne = 0;
  for (unsigned k = 0; k < 4; ++k) {
    nb[k] = a.load_ref(cell, kNeighbors, k);
    Handle agent = a.load_ref(nb[k], kAgent);
    if (agent.is_null())
      free[ne++] = k;
    else if (prefer_fish && is_fish(agent))
      fish[nf++] = k;
  }
  unsigned chosen;
  if (nf > 0)
    chosen = fish[below(draw(a, cell, kCellRng), nf)];
  else if (ne > 0)
    chosen = free[below(draw(a, cell, kCellRng), ne)];
  else {
    a.store<std::uint8_t>(cell, kRequest, 1, kStay);
    return;
  }
  a.store<std::uint8_t>(nb[chosen], kRequest, 1, (chosen + 2) % 4);
}

void WatorSim::fish_prepare() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(fish_, false, [&](Handle f) {
    a.store<std::uint32_t>(f, kSpawnTimer, a.load<std::uint32_t>(f, kSpawnTimer) + 1);
    Handle cell = a.load_ref(f, kPosition);
    a.store_ref(f, kNewPosition, cell);
    request_neighbor(cell, false);
  });
}

void WatorSim::shark_prepare() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(shark_, false, [&](Handle s) {
    a.store<std::uint32_t>(s, kSpawnTimer, a.load<std::uint32_t>(s, kSpawnTimer) + 1);
    const std::uint32_t energy = a.load<std::uint32_t>(s, kEnergy) - 1;
    a.store<std::uint32_t>(s, kEnergy, energy);
    Handle cell = a.load_ref(s, kPosition);
    a.store_ref(s, kNewPosition, cell);
    if (energy > 0) request_neighbor(cell, true);
  });
}

void WatorSim::decide() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(cell_, false, [&](Handle c) {
    if (a.load<std::uint8_t>(c, kRequest, kStay)) {
      a.store_ref(a.load_ref(c, kAgent), kNewPosition, c);
      return;
    }
    unsigned from[4], m = 0;
    for (unsigned k = 0; k < 4; ++k)
      if (a.load<std::uint8_t>(c, kRequest, k)) from[m++] = k;
    if (m == 0) return;
    Handle source = a.load_ref(c, kNeighbors, from[below(draw(a, c, kCellRng), m)]);
    a.store_ref(a.load_ref(source, kAgent), kNewPosition, c);
  });
}

void WatorSim::fish_update() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(fish_, false, [&](Handle f) {
    Handle old = a.load_ref(f, kPosition);
    Handle target = a.load_ref(f, kNewPosition);
    if (target == old) return;
    a.store_ref(target, kAgent, f);
    a.store_ref(f, kPosition, target);
    if (a.load<std::uint32_t>(f, kSpawnTimer) > p_.fish_spawn) {
      a.store<std::uint32_t>(f, kSpawnTimer, 0);
      a.store_ref(old, kAgent, new_agent(fish_, old, draw(a, f, kAgentRng), 0));
    } else {
      a.store_ref(old, kAgent, Handle{});
    }
  });
}

void WatorSim::shark_update() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(shark_, false, [&](Handle s) {
    Handle old = a.load_ref(s, kPosition);
    if (a.load<std::uint32_t>(s, kEnergy) == 0) {
      a.store_ref(old, kAgent, Handle{});
      a.deallocate(s);
      return;
    }
    Handle target = a.load_ref(s, kNewPosition);
    if (target == old) return;
    Handle prey = a.load_ref(target, kAgent);
    if (is_fish(prey)) {
      a.store<std::uint32_t>(s, kEnergy, a.load<std::uint32_t>(s, kEnergy) + p_.shark_energy_boost);
      a.deallocate(prey);
    }
    a.store_ref(target, kAgent, s);
    a.store_ref(s, kPosition, target);
    if (a.load<std::uint32_t>(s, kSpawnTimer) > p_.shark_spawn) {
      a.store<std::uint32_t>(s, kSpawnTimer, 0);
      a.store_ref(old, kAgent, new_agent(shark_, old, draw(a, s, kAgentRng), 0));
    } else {
      a.store_ref(old, kAgent, Handle{});
    }
  });
}

WatorCounts WatorSim::counts() {
  Allocator& a = rt_.alloc();
  return {a.live_objects(fish_), a.live_objects(shark_), a.fragmentation()};
}

std::vector<std::uint8_t> WatorSim::grid() {
  Allocator& a = rt_.alloc();
  std::vector<std::uint8_t> out(cells_.size(), 0);
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Handle agent = a.load_ref(cells_[i], kAgent);
    if (!agent.is_null()) out[i] = agent.type() == fish_ ? 1 : 2;
  }
  return out;
}

std::vector<std::string> WatorSim::check_consistency() {
  Allocator& a = rt_.alloc();
  std::vector<std::string> problems;
  std::uint64_t occupied = 0;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Handle agent = a.load_ref(cells_[i], kAgent);
    if (agent.is_null()) continue;
    ++occupied;
    if (!a.allocated(agent.type()).get(agent.block()) || !((a.heap().alloc_bits(agent.block()) >> agent.slot()) & 1))
      problems.push_back("cell " + std::to_string(i) + " holds a dead agent");
    else if (a.load_ref(agent, kPosition) != cells_[i])
      problems.push_back("agent on cell " + std::to_string(i) + " points elsewhere");
  }
  const std::uint64_t agents = a.live_objects(fish_) + a.live_objects(shark_);
  if (agents != occupied)
    problems.push_back(std::to_string(agents) + " agents but " + std::to_string(occupied) + " occupied cells");
  return problems;
}

std::vector<WatorCounts> wator_run(const WatorParams& params, std::uint64_t iterations, AllocConfig config,
                                   unsigned workers) {
  Runtime rt(register_wator, wator_heap_size(params.width, params.height), config, workers);
  WatorSim sim(rt, params);
  sim.setup();
  std::vector<WatorCounts> series;
  for (std::uint64_t i = 0; i < iterations; ++i) {
    sim.step();
    series.push_back(sim.counts());
  }
  return series;
}

}  // namespace soaheap::apps

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soaheap/runtime.hpp"

namespace soaheap::apps {

namespace wator {
// Cell
inline constexpr std::uint32_t kAgent = 0, kNeighbors = 1, kRequest = 2, kCellRng = 3;
// Agent, Fish, Shark
inline constexpr std::uint32_t kPosition = 0, kNewPosition = 1, kAgentRng = 2, kSpawnTimer = 3, kEnergy = 4;
// Neighbor order is north, east, south, west; request slot 4 means "stay".
inline constexpr unsigned kStay = 4;
}  // namespace wator

struct WatorParams {
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  std::uint64_t seed = 1;
  double fish_ratio = 0.5;
  double shark_ratio = 0.05;
  std::uint32_t fish_spawn = 4;
  std::uint32_t shark_spawn = 8;
  std::uint32_t shark_energy_start = 4;
  std::uint32_t shark_energy_boost = 3;
};

struct WatorCounts {
  std::uint64_t fish = 0;
  std::uint64_t sharks = 0;
  double fragmentation = 0.0;
  bool operator==(const WatorCounts&) const = default;
};

void register_wator(Registry& reg);
// Heap size (in smallest-object slots) that comfortably holds a grid.
std::uint64_t wator_heap_size(std::uint32_t width, std::uint32_t height);

class WatorSim {
 public:
  WatorSim(Runtime& rt, WatorParams params);
  ~WatorSim();
  WatorSim(const WatorSim&) = delete;
  WatorSim& operator=(const WatorSim&) = delete;

  // Creates the cells, links the torus and places the initial agents.
  void setup();
  // Places one agent on an empty cell; for tests.
  Handle place_fish(std::uint32_t x, std::uint32_t y, std::uint32_t spawn_timer = 0);
  Handle place_shark(std::uint32_t x, std::uint32_t y, std::uint32_t energy, std::uint32_t spawn_timer = 0);

  void step();
  void reset_requests();
  void fish_prepare();
  void decide();
  void fish_update();
  void shark_prepare();
  void shark_update();

  WatorCounts counts();
  // Per cell in row-major order: 0 empty, 1 fish, 2 shark.
  std::vector<std::uint8_t> grid();
  // Empty when every cell/agent back-reference agrees.
  std::vector<std::string> check_consistency();

  TypeId cell_type() const { return cell_; }
  TypeId fish_type() const { return fish_; }
  TypeId shark_type() const { return shark_; }
  const std::vector<Handle>& cells() const { return cells_; }

 private:
  void request_neighbor(Handle cell, bool prefer_fish);
  Handle new_agent(TypeId type, Handle cell, std::uint64_t rng, std::uint32_t spawn_timer);
  bool is_fish(Handle agent) const { return !agent.is_null() && agent.type() == fish_; }

  Runtime& rt_;
  WatorParams p_;
  TypeId agent_, fish_, shark_, cell_;
  std::vector<Handle> cells_;
};

std::vector<WatorCounts> wator_run(const WatorParams& params, std::uint64_t iterations, AllocConfig config = {},
                                   unsigned workers = 1);

}  // namespace soaheap::apps

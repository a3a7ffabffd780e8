#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "soaheap/runtime.hpp"

namespace soaheap::apps {

class PatternError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Pattern {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = alive

  bool alive(std::uint32_t x, std::uint32_t y) const { return cells[std::size_t{y} * width + x] != 0; }
};

// Plain PBM (P1): "P1", optional # comments, width, height, then width*height
// digits where 1 is a live cell.
Pattern parse_pbm(const std::string& text);
Pattern load_pbm(const std::string& path);
std::string to_pbm(const Pattern& p);
Pattern random_soup(std::uint32_t width, std::uint32_t height, double density, std::uint64_t seed);

// Birth and survival sets as bit masks over the alive-neighbor count 0..8.
// A cell that fails the survival test either dies at once (decay 0) or keeps
// its cell blocked for decay more iterations before it becomes free.
struct GolRule {
  std::uint16_t survive = 0;
  std::uint16_t birth = 0;
  std::uint32_t decay = 0;

  static GolRule classic();     // 23/3
  static GolRule generation();  // 0235678/3468/255
  static GolRule parse(const std::string& name);
};

namespace gol {
inline constexpr std::uint32_t kAgent = 0;                                        // Cell
inline constexpr std::uint32_t kCellId = 0, kIsNew = 1, kAction = 2, kDecay = 3;  // Agent, Alive
enum Action : std::uint8_t { kNone = 0, kDie = 1, kSpawn = 2, kStartDecay = 3, kDecayStep = 4 };
}  // namespace gol

// Dense cell states shared by the simulation and the reference automaton:
// 0 free, 1 alive, d + 1 for a dying cell that stays blocked d more steps.
using CellStates = std::vector<std::uint16_t>;

CellStates dense_initial(const Pattern& p);
CellStates dense_step(const CellStates& s, std::uint32_t width, std::uint32_t height, const GolRule& rule);

void register_gol(Registry& reg, const GolRule& rule);
std::uint64_t gol_heap_size(std::uint32_t width, std::uint32_t height);

// Only live cells and their dead neighbors ("candidates") exist as objects.
class GolSim {
 public:
  GolSim(Runtime& rt, GolRule rule);
  ~GolSim();
  GolSim(const GolSim&) = delete;
  GolSim& operator=(const GolSim&) = delete;

  void load(const Pattern& p);
  void step();
  void candidate_prepare();
  void alive_prepare();
  void candidate_update();
  void alive_update();

  CellStates states();
  // Sorted indices of alive cells and an FNV-1a digest of them.
  std::vector<std::uint32_t> alive_cells();
  std::uint64_t digest();
  std::uint64_t agents();
  // Empty when the object graph matches the invariants.
  std::vector<std::string> check_consistency();

  TypeId alive_type() const { return alive_; }
  TypeId candidate_type() const { return candidate_; }
  TypeId cell_type() const { return cell_; }

 private:
  Handle agent_at(std::int64_t x, std::int64_t y) const;
  bool is_alive(Handle agent) const;
  unsigned alive_neighbors(std::uint32_t id) const;
  Handle make_agent(TypeId type, std::uint32_t id, bool is_new);
  void create_candidates(Handle self);

  Runtime& rt_;
  GolRule rule_;
  TypeId alive_, candidate_, cell_;
  std::uint32_t width_ = 0, height_ = 0;
  std::vector<Handle> cells_;
};

// Digest series, one entry per iteration after the initial state.
std::vector<std::uint64_t> gol_run(const Pattern& p, std::uint64_t iterations, const GolRule& rule,
                                   unsigned workers = 1);

}  // namespace soaheap::apps

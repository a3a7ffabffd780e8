#include "soaheap/apps/gol.hpp"

#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>

#include "soaheap/apps/nbody.hpp"
#include "soaheap/rng.hpp"

namespace soaheap::apps {

using namespace gol;

namespace {

std::uint16_t digit_mask(const std::string& digits) {
  std::uint16_t m = 0;
  for (char c : digits) {
    if (c < '0' || c > '8') throw PatternError("bad rule digit '" + std::string(1, c) + "'");
    m |= static_cast<std::uint16_t>(1u << (c - '0'));
  }
  return m;
}

bool has(std::uint16_t mask, unsigned count) { return (mask >> count) & 1; }

}  // namespace

Pattern parse_pbm(const std::string& text) {
  std::istringstream in(text);
  std::string token;
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    while (ls >> token) tokens.push_back(token);
  }
  if (tokens.empty() || tokens[0] != "P1") throw PatternError("not a plain PBM (P1) file");
  if (tokens.size() < 3) throw PatternError("missing PBM dimensions");
  Pattern p;
  try {
    std::size_t used = 0;
    const unsigned long w = std::stoul(tokens[1], &used);
    if (used != tokens[1].size()) throw PatternError("bad PBM width");
    const unsigned long h = std::stoul(tokens[2], &used);
    if (used != tokens[2].size()) throw PatternError("bad PBM height");
    if (w == 0 || h == 0 || w > 65536 || h > 65536) throw PatternError("PBM dimensions out of range");
    p.width = static_cast<std::uint32_t>(w);
    p.height = static_cast<std::uint32_t>(h);
  } catch (const std::logic_error&) {
    throw PatternError("bad PBM dimensions");
  }
  // Pixels may be written with or without separating whitespace.
  for (std::size_t t = 3; t < tokens.size(); ++t) {
    for (char c : tokens[t]) {
      if (c != '0' && c != '1') throw PatternError("bad PBM pixel '" + std::string(1, c) + "'");
      p.cells.push_back(static_cast<std::uint8_t>(c - '0'));
    }
  }
  if (p.cells.size() != std::size_t{p.width} * p.height)
    throw PatternError("expected " + std::to_string(std::size_t{p.width} * p.height) + " pixels, got " +
                       std::to_string(p.cells.size()));
  return p;
}

Pattern load_pbm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PatternError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pbm(ss.str());
}

std::string to_pbm(const Pattern& p) {
  std::string out = "P1\n" + std::to_string(p.width) + " " + std::to_string(p.height) + "\n";
  for (std::uint32_t y = 0; y < p.height; ++y) {
    for (std::uint32_t x = 0; x < p.width; ++x) out += p.alive(x, y) ? '1' : '0';
    out += '\n';
  }
  return out;
}

Pattern random_soup(std::uint32_t width, std::uint32_t height, double density, std::uint64_t seed) {
  Pattern p{width, height, std::vector<std::uint8_t>(std::size_t{width} * height)};
  CounterRng rng(seed);
  for (auto& c : p.cells) c = rng.uniform() < density ? 1 : 0;
  return p;
}

GolRule GolRule::classic() { return {digit_mask("23"), digit_mask("3"), 0}; }
GolRule GolRule::generation() { return {digit_mask("0235678"), digit_mask("3468"), 255}; }

GolRule GolRule::parse(const std::string& name) {
  if (name == "classic") return classic();
  if (name == "generation") return generation();
  std::vector<std::string> parts;
  std::stringstream ss(name);
  std::string part;
  while (std::getline(ss, part, '/')) parts.push_back(part);
  if (parts.size() < 2 || parts.size() > 3) throw PatternError("rule must be survive/birth[/decay]: " + name);
  GolRule r{digit_mask(parts[0]), digit_mask(parts[1]), 0};
  if (parts.size() == 3) {
    if (parts[2].empty() || parts[2].find_first_not_of("0123456789") != std::string::npos)
      throw PatternError("bad decay in rule " + name);
    r.decay = static_cast<std::uint32_t>(std::stoul(parts[2]));
  }
  return r;
}

CellStates dense_initial(const Pattern& p) {
  CellStates s(p.cells.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = p.cells[i] ? 1 : 0;
  return s;
}

CellStates dense_step(const CellStates& s, std::uint32_t width, std::uint32_t height, const GolRule& rule) {
  CellStates next(s.size());
  for (std::uint32_t y = 0; y < height; ++y) {
    for (std::uint32_t x = 0; x < width; ++x) {
      unsigned alive = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const std::int64_t nx = std::int64_t{x} + dx, ny = std::int64_t{y} + dy;
          if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
          alive += s[static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx)] == 1;
        }
      }
      const std::size_t i = std::size_t{y} * width + x;
      const std::uint16_t cur = s[i];
      if (cur == 0)
        next[i] = has(rule.birth, alive) ? 1 : 0;
      else if (cur == 1)
        next[i] = has(rule.survive, alive) ? 1 : (rule.decay ? static_cast<std::uint16_t>(rule.decay + 1) : 0);
      else
        next[i] = cur == 2 ? 0 : static_cast<std::uint16_t>(cur - 1);
    }
  }
  return next;
}

void register_gol(Registry& reg, const GolRule& rule) {
  TypeId agent = reg.register_type("Agent", std::nullopt, true,
                                   {FieldDescriptor::scalar("cell_id", 4), FieldDescriptor::scalar("is_new", 1),
                                    FieldDescriptor::scalar("action", 1)});
  std::vector<FieldDescriptor> alive_fields;
  if (rule.decay) alive_fields.push_back(FieldDescriptor::scalar("decay", 4));
  reg.register_type("Alive", agent, false, alive_fields);
  reg.register_type("Candidate", agent, false, {});
  reg.register_type("Cell", std::nullopt, false, {FieldDescriptor::reference("agent", "Agent")});
}

std::uint64_t gol_heap_size(std::uint32_t width, std::uint32_t height) {
  const std::uint64_t cells = std::uint64_t{width} * height;
  return (cells / 16 + 64) * 64;
}

GolSim::GolSim(Runtime& rt, GolRule rule)
    : rt_(rt),
      rule_(rule),
      alive_(rt.registry().id_of("Alive")),
      candidate_(rt.registry().id_of("Candidate")),
      cell_(rt.registry().id_of("Cell")) {
  rt_.defrag().add_roots(&cells_);
}

GolSim::~GolSim() { rt_.defrag().remove_roots(&cells_); }

Handle GolSim::agent_at(std::int64_t x, std::int64_t y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return Handle{};
  return rt_.alloc().load_ref(cells_[static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x)], kAgent);
}

bool GolSim::is_alive(Handle agent) const {
  if (agent.is_null() || agent.type() != alive_) return false;
  return rule_.decay == 0 || rt_.alloc().load<std::uint32_t>(agent, kDecay) == 0;
}

unsigned GolSim::alive_neighbors(std::uint32_t id) const {
  const std::int64_t x = id % width_, y = id / width_;
  unsigned n = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if ((dx || dy) && is_alive(agent_at(x + dx, y + dy))) ++n;
  return n;
}

Handle GolSim::make_agent(TypeId type, std::uint32_t id, bool is_new) {
  Allocator& a = rt_.alloc();
  Handle h = a.allocate(type);
  a.store<std::int32_t>(h, kCellId, static_cast<std::int32_t>(id));
  a.store<std::uint8_t>(h, kIsNew, is_new ? 1 : 0);
  a.store<std::uint8_t>(h, kAction, kNone);
  if (type == alive_ && rule_.decay) a.store<std::uint32_t>(h, kDecay, 0);
  a.store_ref(cells_[id], kAgent, h);
  return h;
}

void GolSim::load(const Pattern& p) {
  Allocator& a = rt_.alloc();
  width_ = p.width;
  height_ = p.height;
  const std::uint64_t n = std::uint64_t{width_} * height_;
  cells_.assign(n, Handle{});
  rt_.enumerator().parallel_new(cell_, n, [&](Handle h, std::uint64_t i) {
    cells_[i] = h;
    a.store_ref(h, kAgent, Handle{});
  });
  const unsigned workers = rt_.pool().size();
  rt_.pool().run([&](unsigned w) {
    for (std::uint64_t i = w; i < n; i += workers)
      if (p.cells[i]) make_agent(alive_, static_cast<std::uint32_t>(i), true);
  });
  rt_.enumerator().parallel_do(alive_, false, [&](Handle h) { create_candidates(h); });
}

void GolSim::step() {
  candidate_prepare();
  alive_prepare();
  candidate_update();
  alive_update();
}

void GolSim::candidate_prepare() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(candidate_, false, [&](Handle h) {
    const unsigned n = alive_neighbors(static_cast<std::uint32_t>(a.load<std::int32_t>(h, kCellId)));
    std::uint8_t action = kNone;
    if (has(rule_.birth, n))
      action = kSpawn;
    else if (n == 0)
      action = kDie;
    a.store<std::uint8_t>(h, kAction, action);
  });
}

void GolSim::alive_prepare() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(alive_, false, [&](Handle h) {
    a.store<std::uint8_t>(h, kIsNew, 0);
    std::uint8_t action = kNone;
    const std::uint32_t decay = rule_.decay ? a.load<std::uint32_t>(h, kDecay) : 0;
    if (decay > 0) {
      action = decay == 1 ? kDie : kDecayStep;
    } else {
      const unsigned n = alive_neighbors(static_cast<std::uint32_t>(a.load<std::int32_t>(h, kCellId)));
      if (!has(rule_.survive, n)) action = rule_.decay ? kStartDecay : kDie;
    }
    a.store<std::uint8_t>(h, kAction, action);
  });
}

void GolSim::candidate_update() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(candidate_, false, [&](Handle h) {
    const std::uint8_t action = a.load<std::uint8_t>(h, kAction);
    if (action == kNone) return;
    const auto id = static_cast<std::uint32_t>(a.load<std::int32_t>(h, kCellId));
    if (action == kSpawn)
      make_agent(alive_, id, true);
    else
      a.store_ref(cells_[id], kAgent, Handle{});
    a.deallocate(h);
  });
}

void GolSim::alive_update() {
  Allocator& a = rt_.alloc();
  rt_.enumerator().parallel_do(alive_, false, [&](Handle h) {
    if (a.load<std::uint8_t>(h, kIsNew)) {
      create_candidates(h);
      return;
    }
    switch (a.load<std::uint8_t>(h, kAction)) {
      case kDie:
        make_agent(candidate_, static_cast<std::uint32_t>(a.load<std::int32_t>(h, kCellId)), false);
        a.deallocate(h);
        break;
      case kStartDecay:
        a.store<std::uint32_t>(h, kDecay, rule_.decay);
        break;
      case kDecayStep:
        a.store<std::uint32_t>(h, kDecay, a.load<std::uint32_t>(h, kDecay) - 1);
        break;
      default:
        break;
    }
  });
}

// A free cell next to several new live cells gets its candidate from the
// first of them in a top-to-bottom, left-to-right scan of its neighborhood.
void GolSim::create_candidates(Handle self) {
  Allocator& a = rt_.alloc();
  const auto id = static_cast<std::uint32_t>(a.load<std::int32_t>(self, kCellId));
  const std::int64_t x = id % width_, y = id / width_;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const std::int64_t cx = x + dx, cy = y + dy;
      if ((!dx && !dy) || cx < 0 || cy < 0 || cx >= width_ || cy >= height_) continue;
      if (!agent_at(cx, cy).is_null()) continue;
      Handle creator;
      for (int ey = -1; ey <= 1 && creator.is_null(); ++ey) {
        for (int ex = -1; ex <= 1; ++ex) {
          Handle other = agent_at(cx + ex, cy + ey);
          if (!other.is_null() && other.type() == alive_ && a.load<std::uint8_t>(other, kIsNew)) {
            creator = other;
            break;
          }
        }
      }
      if (creator == self) make_agent(candidate_, static_cast<std::uint32_t>(cy * width_ + cx), false);
    }
  }
}

CellStates GolSim::states() {
  Allocator& a = rt_.alloc();
  CellStates s(cells_.size(), 0);
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Handle agent = a.load_ref(cells_[i], kAgent);
    if (agent.is_null() || agent.type() != alive_) continue;
    const std::uint32_t decay = rule_.decay ? a.load<std::uint32_t>(agent, kDecay) : 0;
    s[i] = static_cast<std::uint16_t>(decay ? decay + 1 : 1);
  }
  return s;
}

std::vector<std::uint32_t> GolSim::alive_cells() {
  std::vector<std::uint32_t> out;
  const CellStates s = states();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == 1) out.push_back(static_cast<std::uint32_t>(i));
  return out;
}

std::uint64_t GolSim::digest() {
  const auto cells = alive_cells();
  return fnv1a(cells.data(), cells.size() * sizeof(std::uint32_t));
}

std::uint64_t GolSim::agents() { return rt_.alloc().live_objects(alive_) + rt_.alloc().live_objects(candidate_); }

std::vector<std::string> GolSim::check_consistency() {
  Allocator& a = rt_.alloc();
  std::vector<std::string> problems;
  std::uint64_t occupied = 0;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Handle agent = a.load_ref(cells_[i], kAgent);
    if (agent.is_null()) continue;
    ++occupied;
    if (static_cast<std::size_t>(a.load<std::int32_t>(agent, kCellId)) != i)
      problems.push_back("agent on cell " + std::to_string(i) + " has a different cell id");
  }
  if (occupied != agents())
    problems.push_back(std::to_string(agents()) + " agents but " + std::to_string(occupied) + " occupied cells");
  // Every free cell next to a live cell must hold a candidate.
  const std::int64_t w = width_, h = height_;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (!is_alive(agent_at(x, y))) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::int64_t cx = x + dx, cy = y + dy;
          if (cx < 0 || cy < 0 || cx >= w || cy >= h) continue;
          if (agent_at(cx, cy).is_null())
            problems.push_back("free cell " + std::to_string(cy * w + cx) + " next to a live cell");
        }
    }
  }
  return problems;
}

std::vector<std::uint64_t> gol_run(const Pattern& p, std::uint64_t iterations, const GolRule& rule, unsigned workers) {
  Runtime rt([&](Registry& reg) { register_gol(reg, rule); }, gol_heap_size(p.width, p.height), AllocConfig{}, workers);
  GolSim sim(rt, rule);
  sim.load(p);
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = 0; i < iterations; ++i) {
    sim.step();
    out.push_back(sim.digest());
  }
  return out;
}

}  // namespace soaheap::apps

#include "soaheap/harness.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <set>
#include <sstream>

#include "soaheap/apps/collision.hpp"
#include "soaheap/apps/gol.hpp"
#include "soaheap/apps/linux_scalability.hpp"
#include "soaheap/apps/nbody.hpp"
#include "soaheap/apps/synthetic.hpp"
#include "soaheap/apps/wator.hpp"
#include "soaheap/runtime.hpp"

namespace soaheap::harness {

using nlohmann::json;

namespace {

std::string fmt_double(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

// App parameters with defaults; unknown keys are rejected once the app has
// read everything it understands.
class Params {
 public:
  explicit Params(const std::map<std::string, std::string>& raw) : raw_(raw) {}

  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    used_.insert(key);
    auto it = raw_.find(key);
    return it == raw_.end() ? def : parse_u64(key, it->second);
  }
  double real(const std::string& key, double def) {
    used_.insert(key);
    auto it = raw_.find(key);
    return it == raw_.end() ? def : parse_double(key, it->second);
  }
  std::string str(const std::string& key, const std::string& def) {
    used_.insert(key);
    auto it = raw_.find(key);
    return it == raw_.end() ? def : it->second;
  }
  bool has(const std::string& key) const { return raw_.count(key) != 0; }
  void finish(const std::string& app) const {
    for (const auto& [k, v] : raw_)
      if (!used_.count(k)) throw ConfigError("unknown parameter '" + k + "' for app " + app);
  }

 private:
  const std::map<std::string, std::string>& raw_;
  std::set<std::string> used_;
};

// An iterative app bound to its runtime.
class Scenario {
 public:
  virtual ~Scenario() = default;
  virtual void step() = 0;
  virtual std::vector<std::string> check() { return {}; }
  virtual void summarize(json&) {}
  Runtime& rt() { return *rt_; }

 protected:
  std::unique_ptr<Runtime> rt_;
};

AllocConfig alloc_config(const ScenarioConfig& c) {
  AllocConfig a;
  a.retries = c.retries;
  a.defrag_n = c.defrag_n;
  a.oom = c.oom;
  a.seed = c.seed;
  return a;
}

std::uint64_t heap_or(const ScenarioConfig& c, std::uint64_t def) { return c.heap_size ? c.heap_size : def; }

class BodyScenario : public Scenario {
 public:
  BodyScenario(const ScenarioConfig& c, Params& p, bool collision) {
    const std::uint64_t bodies = p.u64("bodies", 1024);
    apps::CollisionParams cp;
    cp.body.seed = c.seed;
    cp.body.dt = static_cast<float>(p.real("dt", cp.body.dt));
    cp.body.gravity = static_cast<float>(p.real("gravity", cp.body.gravity));
    cp.body.softening = static_cast<float>(p.real("softening", cp.body.softening));
    if (collision) cp.merge_threshold = static_cast<float>(p.real("merge_threshold", cp.merge_threshold));
    p.finish(c.app);
    if (bodies == 0 || bodies > (1u << 30)) throw ConfigError("bodies out of range");
    const std::uint64_t heap = heap_or(c, ((bodies + 63) / 64 + c.workers + 1) * 64);
    if (collision) {
      rt_ = std::make_unique<Runtime>(apps::register_collision, heap, alloc_config(c), c.workers);
      sim_ = std::make_unique<apps::CollisionSim>(*rt_, cp);
    } else {
      rt_ = std::make_unique<Runtime>(apps::register_nbody, heap, alloc_config(c), c.workers);
      sim_ = std::make_unique<apps::NbodySim>(*rt_, cp.body);
    }
    sim_->init_random(bodies);
  }
  void step() override { sim_->step(); }
  void summarize(json& j) override {
    const apps::BodySummary s = sim_->summary();
    j["bodies"] = s.bodies;
    j["mass"] = s.mass;
    j["momentum"] = {s.momentum_x, s.momentum_y};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(s.checksum));
    j["checksum"] = buf;
    if (auto* c = dynamic_cast<apps::CollisionSim*>(sim_.get())) j["merges"] = c->merges();
  }

 private:
  std::unique_ptr<apps::NbodySim> sim_;
};

class WatorScenario : public Scenario {
 public:
  WatorScenario(const ScenarioConfig& c, Params& p) {
    apps::WatorParams w;
    w.seed = c.seed;
    w.width = static_cast<std::uint32_t>(p.u64("width", w.width));
    w.height = static_cast<std::uint32_t>(p.u64("height", w.height));
    w.fish_ratio = p.real("fish_ratio", w.fish_ratio);
    w.shark_ratio = p.real("shark_ratio", w.shark_ratio);
    w.fish_spawn = static_cast<std::uint32_t>(p.u64("fish_spawn", w.fish_spawn));
    w.shark_spawn = static_cast<std::uint32_t>(p.u64("shark_spawn", w.shark_spawn));
    w.shark_energy_start = static_cast<std::uint32_t>(p.u64("shark_energy_start", w.shark_energy_start));
    w.shark_energy_boost = static_cast<std::uint32_t>(p.u64("shark_energy_boost", w.shark_energy_boost));
    p.finish(c.app);
    if (w.width < 2 || w.height < 2 || w.width > 8192 || w.height > 8192)
      throw ConfigError("grid must be between 2x2 and 8192x8192");
    if (w.fish_ratio < 0 || w.shark_ratio < 0 || w.fish_ratio + w.shark_ratio > 1)
      throw ConfigError("fish_ratio and shark_ratio must be non-negative and sum to at most 1");
    if (w.shark_energy_start == 0) throw ConfigError("shark_energy_start must be positive");
    rt_ = std::make_unique<Runtime>(apps::register_wator, heap_or(c, apps::wator_heap_size(w.width, w.height)),
                                    alloc_config(c), c.workers);
    sim_ = std::make_unique<apps::WatorSim>(*rt_, w);
    sim_->setup();
  }
  void step() override { sim_->step(); }
  std::vector<std::string> check() override { return sim_->check_consistency(); }
  void summarize(json& j) override {
    const apps::WatorCounts n = sim_->counts();
    j["fish"] = n.fish;
    j["sharks"] = n.sharks;
  }

 private:
  std::unique_ptr<apps::WatorSim> sim_;
};

class GolScenario : public Scenario {
 public:
  GolScenario(const ScenarioConfig& c, Params& p, bool generation) {
    const std::string pattern = p.str("pattern", "");
    const auto width = static_cast<std::uint32_t>(p.u64("width", 64));
    const auto height = static_cast<std::uint32_t>(p.u64("height", 64));
    const double density = p.real("density", 0.3);
    const std::string rule = p.str("rule", generation ? "generation" : "classic");
    p.finish(c.app);
    try {
      rule_ = apps::GolRule::parse(rule);
    } catch (const apps::PatternError& e) {
      throw ConfigError(e.what());
    }
    if (!pattern.empty()) {
      pattern_ = apps::load_pbm(pattern);
    } else {
      if (width == 0 || height == 0 || width > 8192 || height > 8192) throw ConfigError("grid size out of range");
      if (density < 0 || density > 1) throw ConfigError("density must be in [0, 1]");
      pattern_ = apps::random_soup(width, height, density, c.seed);
    }
    rt_ = std::make_unique<Runtime>([&](Registry& reg) { apps::register_gol(reg, rule_); },
                                    heap_or(c, apps::gol_heap_size(pattern_.width, pattern_.height)), alloc_config(c),
                                    c.workers);
    sim_ = std::make_unique<apps::GolSim>(*rt_, rule_);
    sim_->load(pattern_);
  }
  void step() override { sim_->step(); }
  std::vector<std::string> check() override { return sim_->check_consistency(); }
  void summarize(json& j) override {
    j["alive_cells"] = sim_->alive_cells().size();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(sim_->digest()));
    j["digest"] = buf;
  }

 private:
  apps::GolRule rule_;
  apps::Pattern pattern_;
  std::unique_ptr<apps::GolSim> sim_;
};

std::unique_ptr<Scenario> make_scenario(const ScenarioConfig& c) {
  Params p(c.params);
  if (c.app == "nbody") return std::make_unique<BodyScenario>(c, p, false);
  if (c.app == "collision") return std::make_unique<BodyScenario>(c, p, true);
  if (c.app == "wator") return std::make_unique<WatorScenario>(c, p);
  if (c.app == "gol") return std::make_unique<GolScenario>(c, p, false);
  if (c.app == "generation") return std::make_unique<GolScenario>(c, p, true);
  throw ConfigError("unknown app " + c.app);
}

json config_json(const ScenarioConfig& c) {
  json j;
  j["app"] = c.app;
  j["params"] = c.params;
  j["heap_size"] = c.heap_size;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["retries"] = c.retries;
  j["defrag_n"] = c.defrag_n;
  j["oom"] = c.oom == OomPolicy::error ? "error" : "spin";
  j["defrag_policy"] = c.policy.str();
  j["k1"] = c.k1;
  return j;
}

std::string dump_bitmaps(const Runtime& rt, Allocator& a) {
  std::string out = "free\n" + a.free_blocks().dump();
  for (TypeId t : rt.registry().concrete_types()) {
    const std::string& name = rt.registry().type(t).name;
    out += "allocated[" + name + "]\n" + a.allocated(t).dump();
    out += "active[" + name + "]\n" + a.active(t).dump();
    out += "defrag[" + name + "]\n" + a.candidates(t).dump();
  }
  return out;
}

// Fraction of all slots of the heap (free blocks included) that hold objects.
double utilization(const Runtime& rt, const Allocator& a) {
  double used = 0.0;
  for (TypeId t : rt.registry().concrete_types())
    used += static_cast<double>(a.live_objects(t)) / a.heap().capacity_of(t);
  return used / static_cast<double>(a.heap().num_blocks());
}

json pass_json(const std::string& type, const PassRecord& r, bool timings) {
  json j;
  j["type"] = type;
  j["candidates_before"] = r.candidates_before;
  j["candidates_after"] = r.candidates_after;
  j["moved"] = r.moved;
  j["rewritten"] = r.rewritten;
  j["copy_ns"] = timings ? r.copy_ns : 0;
  j["forward_ns"] = timings ? r.forward_ns : 0;
  j["rewrite_ns"] = timings ? r.rewrite_ns : 0;
  j["finalize_ns"] = timings ? r.finalize_ns : 0;
  return j;
}

void run_iterative(const ScenarioConfig& c, RunResult& res, json& summary) {
  std::unique_ptr<Scenario> sc = make_scenario(c);
  Runtime& rt = sc->rt();
  Allocator& a = rt.alloc();
  a.set_timing(c.timings);
  a.take_op_times();
  const auto types = rt.registry().concrete_types();

  auto audit = [&](const std::string& when) {
    auto problems = a.audit();
    auto refs = a.audit_references();
    problems.insert(problems.end(), refs.begin(), refs.end());
    if (!problems.empty()) throw AuditError(when + ": " + problems.front());
  };
  if (c.audit) {
    rt.enumerator().set_phase_hook([&] { audit("after phase"); });
    rt.defrag().set_pass_hook([&] { audit("after defragmentation pass"); });
    audit("after setup");
  }

  res.csv = "iteration";
  for (TypeId t : types) res.csv += ",live_" + rt.registry().type(t).name;
  res.csv += ",F,alloc_ns,dealloc_ns,defrag_passes,moved,rewritten\n";

  json passes = json::array();
  std::uint64_t total_passes = 0, total_moved = 0, total_rewritten = 0;
  std::uint64_t done = 0;
  a.take_op_times();
  for (std::uint64_t it = 1; it <= c.iterations; ++it) {
    sc->step();
    const Allocator::OpTimes times = a.take_op_times();

    std::uint64_t it_passes = 0, it_moved = 0, it_rewritten = 0;
    for (TypeId t : types) {
      bool go = false;
      if (c.policy.kind == DefragPolicy::Kind::every) go = it % c.policy.m == 0;
      if (c.policy.kind == DefragPolicy::Kind::massive) go = rt.defrag().should_defrag(t, c.policy.k2);
      if (!go) continue;
      const DefragReport rep = rt.defrag().defragment(t, c.k1, c.defrag_n);
      for (const PassRecord& r : rep.passes) {
        json pj = pass_json(rt.registry().type(t).name, r, c.timings);
        pj["iteration"] = it;
        passes.push_back(pj);
      }
      it_passes += rep.passes.size();
      it_moved += rep.moved();
      it_rewritten += rep.rewritten();
    }
    if (c.audit) {
      audit("after iteration " + std::to_string(it));
      auto app = sc->check();
      if (!app.empty()) throw AuditError("after iteration " + std::to_string(it) + ": " + app.front());
    }

    res.csv += std::to_string(it);
    for (TypeId t : types) res.csv += "," + std::to_string(a.live_objects(t));
    res.csv += "," + fmt_double(a.fragmentation());
    res.csv += "," + std::to_string(c.timings ? times.alloc_ns : 0);
    res.csv += "," + std::to_string(c.timings ? times.dealloc_ns : 0);
    res.csv += "," + std::to_string(it_passes) + "," + std::to_string(it_moved) + "," + std::to_string(it_rewritten);
    res.csv += "\n";
    total_passes += it_passes;
    total_moved += it_moved;
    total_rewritten += it_rewritten;
    done = it;
  }

  summary["iterations_completed"] = done;
  summary["fragmentation"] = a.fragmentation();
  summary["utilization"] = utilization(rt, a);
  summary["free_blocks"] = a.free_blocks().count();
  summary["num_blocks"] = a.heap().num_blocks();
  json live = json::object();
  for (TypeId t : types) live[rt.registry().type(t).name] = a.live_objects(t);
  summary["live"] = live;
  summary["defrag"] = {
      {"passes", total_passes}, {"moved", total_moved}, {"rewritten", total_rewritten}, {"records", passes}};
  json app = json::object();
  sc->summarize(app);
  summary["result"] = app;
  if (c.dump_bitmaps) res.bitmaps = dump_bitmaps(rt, a);
}

void run_scalability(const ScenarioConfig& c, RunResult& res, json& summary) {
  Params p(c.params);
  const std::uint64_t allocs = p.u64("allocs", 65536);
  const auto size = static_cast<std::uint32_t>(p.u64("object_size", 16));
  p.finish(c.app);
  if (size == 0 || size > 4096) throw ConfigError("object_size out of range");
  const apps::ScalabilityResult r =
      apps::linux_scalability_run(c.workers, allocs, size, c.heap_size, c.retries, c.seed);
  res.csv = "iteration,live_Object,F,alloc_ns,dealloc_ns,defrag_passes,moved,rewritten\n";
  const double f = r.blocks_used ? 1.0 - static_cast<double>(r.achieved) / static_cast<double>(r.blocks_used * 64) : 0;
  const auto alloc_total = static_cast<std::uint64_t>(r.alloc_ns * static_cast<double>(r.achieved));
  const auto dealloc_total = static_cast<std::uint64_t>(r.dealloc_ns * static_cast<double>(r.achieved));
  res.csv += "1," + std::to_string(r.achieved) + "," + fmt_double(f) + "," +
             std::to_string(c.timings ? alloc_total : 0) + ",0,0,0,0\n";
  res.csv += "2,0," + fmt_double(0.0) + ",0," + std::to_string(c.timings ? dealloc_total : 0) + ",0,0,0\n";
  summary["requested"] = r.requested;
  summary["achieved"] = r.achieved;
  summary["capacity"] = r.capacity;
  summary["utilization"] = r.utilization;
  summary["alloc_ns_per_op"] = c.timings ? r.alloc_ns : 0.0;
  summary["dealloc_ns_per_op"] = c.timings ? r.dealloc_ns : 0.0;
  summary["all_free_after"] = r.all_free_after;
  if (!r.all_free_after) throw AuditError("heap not entirely free after deallocation");
}

void run_synthetic(const ScenarioConfig& c, RunResult& res, json& summary) {
  Params p(c.params);
  const std::uint64_t objects = p.u64("objects", 65536);
  const std::string fractions = p.str("fractions", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9");
  p.finish(c.app);
  std::vector<double> xs;
  std::stringstream ss(fractions);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const double x = parse_double("fractions", item);
    if (x < 0 || x > 1) throw ConfigError("fractions must lie in [0, 1]");
    xs.push_back(x);
  }
  if (objects == 0) throw ConfigError("objects must be positive");
  res.csv = "delete_fraction,live_Object,F_before,F,defrag_passes,pass_bound,moved,rewritten\n";
  json rows = json::array();
  for (double x : xs) {
    apps::SyntheticParams sp;
    sp.objects = objects;
    sp.delete_fraction = x;
    sp.n = c.defrag_n;
    sp.k1 = c.k1;
    sp.seed = c.seed;
    sp.workers = c.workers;
    const apps::SyntheticResult r = apps::synthetic_run(sp);
    res.csv += fmt_double(x, 3) + "," + std::to_string(r.live) + "," + fmt_double(r.fragmentation_before) + "," +
               fmt_double(r.fragmentation_after) + "," + std::to_string(r.passes) + "," + std::to_string(r.pass_bound) +
               "," + std::to_string(r.moved) + "," + std::to_string(r.rewritten) + "\n";
    rows.push_back({{"delete_fraction", x},
                    {"F_before", r.fragmentation_before},
                    {"F", r.fragmentation_after},
                    {"passes", r.passes},
                    {"pass_bound", r.pass_bound},
                    {"integrity", r.integrity}});
    if (c.audit && (!r.integrity || !r.audit_clean))
      throw AuditError("synthetic run at delete fraction " + fmt_double(x, 3) + " failed its audit");
  }
  summary["sweep"] = rows;
}

}  // namespace

DefragPolicy DefragPolicy::parse(const std::string& text) {
  DefragPolicy p;
  if (text == "none") return p;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (colon == std::string::npos) throw ConfigError("defrag policy must be none, every:<m> or massive:<k2>");
  const std::string arg = text.substr(colon + 1);
  if (kind == "every") {
    p.kind = Kind::every;
    p.m = parse_u64("defrag-policy", arg);
    if (p.m < 1) throw ConfigError("every:<m> needs m >= 1");
  } else if (kind == "massive") {
    p.kind = Kind::massive;
    p.k2 = parse_double("defrag-policy", arg);
    if (!(p.k2 > 0)) throw ConfigError("massive:<k2> needs k2 > 0");
  } else {
    throw ConfigError("unknown defrag policy " + text);
  }
  return p;
}

std::string DefragPolicy::str() const {
  switch (kind) {
    case Kind::every:
      return "every:" + std::to_string(m);
    case Kind::massive: {
      std::ostringstream os;
      os << "massive:" << k2;
      return os.str();
    }
    default:
      return "none";
  }
}

std::vector<std::string> known_apps() {
  return {"nbody", "collision", "wator", "gol", "generation", "linux-scalability", "synthetic"};
}

void validate(const ScenarioConfig& c) {
  const auto apps = known_apps();
  if (std::find(apps.begin(), apps.end(), c.app) == apps.end()) throw ConfigError("unknown app " + c.app);
  if (c.heap_size % 64 != 0) throw ConfigError("heap size must be a multiple of 64");
  if (c.workers == 0 || c.workers > 1024) throw ConfigError("workers must be in 1..1024");
  if (c.defrag_n == 0 || c.defrag_n > 64) throw ConfigError("defrag-n must be in 1..64");
  if (c.policy.kind == DefragPolicy::Kind::every && c.policy.m == 0) throw ConfigError("every:<m> needs m >= 1");
  if (c.policy.kind == DefragPolicy::Kind::massive && !(c.policy.k2 > 0)) throw ConfigError("k2 must be positive");
}

ScenarioConfig config_from_json(const std::string& text, ScenarioConfig c) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> keys = {
        "app", "params",        "heap_size", "iterations", "seed",  "workers",      "retries", "defrag_n",
        "oom", "defrag_policy", "k1",        "k2",         "audit", "dump_bitmaps", "timings", "out"};
    for (const auto& [k, v] : j.items())
      if (!keys.count(k)) throw ConfigError("unknown config key " + k);
    if (j.contains("app")) c.app = j["app"].get<std::string>();
    if (j.contains("params")) {
      for (const auto& [k, v] : j["params"].items()) c.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    if (j.contains("heap_size")) c.heap_size = j["heap_size"].get<std::uint64_t>();
    if (j.contains("iterations")) c.iterations = j["iterations"].get<std::uint64_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("workers")) c.workers = j["workers"].get<unsigned>();
    if (j.contains("retries")) c.retries = j["retries"].get<unsigned>();
    if (j.contains("defrag_n")) c.defrag_n = j["defrag_n"].get<unsigned>();
    if (j.contains("oom")) {
      const std::string o = j["oom"].get<std::string>();
      if (o != "error" && o != "spin") throw ConfigError("oom must be error or spin");
      c.oom = o == "error" ? OomPolicy::error : OomPolicy::spin;
    }
    if (j.contains("defrag_policy")) c.policy = DefragPolicy::parse(j["defrag_policy"].get<std::string>());
    if (j.contains("k1")) c.k1 = j["k1"].get<std::uint64_t>();
    if (j.contains("k2")) {
      if (c.policy.kind != DefragPolicy::Kind::massive) throw ConfigError("k2 needs the massive defrag policy");
      c.policy.k2 = j["k2"].get<double>();
    }
    if (j.contains("audit")) c.audit = j["audit"].get<bool>();
    if (j.contains("dump_bitmaps")) c.dump_bitmaps = j["dump_bitmaps"].get<bool>();
    if (j.contains("timings")) c.timings = j["timings"].get<bool>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

ScenarioConfig load_config_file(const std::string& path, ScenarioConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::move(base));
}

RunResult run(const ScenarioConfig& c) {
  RunResult res;
  json summary;
  summary["config"] = config_json(c);
  try {
    validate(c);
    if (c.app == "linux-scalability")
      run_scalability(c, res, summary);
    else if (c.app == "synthetic")
      run_synthetic(c, res, summary);
    else
      run_iterative(c, res, summary);
  } catch (const ConfigError& e) {
    res.exit_code = kExitConfig, res.error = e.what();
  } catch (const RegistryError& e) {
    res.exit_code = kExitConfig, res.error = e.what();
  } catch (const apps::PatternError& e) {
    res.exit_code = kExitConfig, res.error = e.what();
  } catch (const OutOfMemory& e) {
    res.exit_code = kExitOutOfMemory, res.error = e.what();
  } catch (const AuditError& e) {
    res.exit_code = kExitAudit, res.error = e.what();
  } catch (const std::exception& e) {
    res.exit_code = kExitApp, res.error = e.what();
  }
  summary["exit_code"] = res.exit_code;
  if (!res.error.empty()) summary["error"] = res.error;
  res.json = summary.dump(2) + "\n";
  return res;
}

RunResult run_and_write(const ScenarioConfig& c) {
  RunResult res = run(c);
  if (c.out.empty()) return res;
  auto write = [&](const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary);
    f << data;
    if (!f) {
      res.exit_code = kExitConfig;
      res.error = "cannot write " + path;
    }
  };
  write(c.out + ".csv", res.csv);
  write(c.out + ".json", res.json);
  if (c.dump_bitmaps) write(c.out + ".bitmaps.txt", res.bitmaps);
  return res;
}

std::vector<CurvePoint> report_fragmentation_curve(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  std::vector<CurvePoint> out;
  if (!std::getline(in, line) || line.empty()) return out;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  auto column = [&](const std::string& name) -> long {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  long x = column("delete_fraction");
  if (x < 0) x = column("iteration");
  const long y = column("F");
  if (x < 0 || y < 0) throw ConfigError("metrics need an iteration or delete_fraction column and an F column");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<long>(cells.size()) <= std::max(x, y)) throw ConfigError("short metrics row: " + line);
    out.push_back(
        {parse_double("x", cells[static_cast<std::size_t>(x)]), parse_double("F", cells[static_cast<std::size_t>(y)])});
  }
  return out;
}

std::string curve_table(const std::vector<CurvePoint>& points) {
  if (points.empty()) return "";
  std::string out = "x\tF\n";
  for (const auto& p : points) out += fmt_double(p.x, 3) + "\t" + fmt_double(p.y) + "\n";
  return out;
}

int cli_main(int argc, char** argv) {
  CLI::App cli{"Run allocator scenarios and report fragmentation metrics"};
  ScenarioConfig flags;
  std::string config_path, policy = "none", oom = "error", curve;
  std::vector<std::string> params;
  double k2 = 0.0;
  bool no_timings = false;

  cli.add_option("--config", config_path, "JSON scenario file; flags override its values");
  auto* o_app =
      cli.add_option("--app", flags.app, "nbody, collision, wator, gol, generation, linux-scalability, synthetic");
  auto* o_heap = cli.add_option("--heap-size", flags.heap_size, "heap size in smallest-object slots (multiple of 64)");
  auto* o_iter = cli.add_option("--iterations", flags.iterations, "iterations to run");
  auto* o_seed = cli.add_option("--seed", flags.seed, "random seed");
  auto* o_workers = cli.add_option("--workers", flags.workers, "worker threads");
  auto* o_retries = cli.add_option("--retries", flags.retries, "active-block lookups before claiming a free block");
  auto* o_n = cli.add_option("--defrag-n", flags.defrag_n, "defragmentation factor");
  auto* o_policy = cli.add_option("--defrag-policy", policy, "none | every:<m> | massive:<k2>");
  auto* o_k1 = cli.add_option("--k1", flags.k1, "candidate blocks left in place by a defragmentation");
  auto* o_k2 = cli.add_option("--k2", k2, "threshold of the massive policy");
  auto* o_oom = cli.add_option("--oom", oom, "error | spin")->check(CLI::IsMember({"error", "spin"}));
  auto* o_audit = cli.add_flag("--audit", flags.audit, "check heap invariants after every phase");
  auto* o_dump = cli.add_flag("--dump-bitmaps", flags.dump_bitmaps, "write all bitmaps at the end");
  auto* o_notime = cli.add_flag("--no-timings", no_timings, "write zero for all timing columns");
  auto* o_out = cli.add_option("--out", flags.out, "output prefix for .csv/.json files");
  cli.add_option("--param", params, "app parameter key=value (repeatable)");
  cli.add_option("--curve", curve, "print the fragmentation curve of a metrics CSV and exit");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!curve.empty()) {
      std::ifstream in(curve);
      if (!in) throw ConfigError("cannot open " + curve);
      std::stringstream ss;
      ss << in.rdbuf();
      std::cout << curve_table(report_fragmentation_curve(ss.str()));
      return kExitOk;
    }

    ScenarioConfig c;
    if (!config_path.empty()) c = load_config_file(config_path);
    if (o_app->count()) c.app = flags.app;
    if (o_heap->count()) c.heap_size = flags.heap_size;
    if (o_iter->count()) c.iterations = flags.iterations;
    if (o_seed->count()) c.seed = flags.seed;
    if (o_workers->count()) c.workers = flags.workers;
    if (o_retries->count()) c.retries = flags.retries;
    if (o_n->count()) c.defrag_n = flags.defrag_n;
    if (o_policy->count()) c.policy = DefragPolicy::parse(policy);
    if (o_k1->count()) c.k1 = flags.k1;
    if (o_k2->count()) {
      if (c.policy.kind != DefragPolicy::Kind::massive) throw ConfigError("--k2 needs --defrag-policy massive:<k2>");
      c.policy.k2 = k2;
    }
    if (o_oom->count()) c.oom = oom == "error" ? OomPolicy::error : OomPolicy::spin;
    if (o_audit->count()) c.audit = true;
    if (o_dump->count()) c.dump_bitmaps = true;
    if (o_notime->count()) c.timings = false;
    if (o_out->count()) c.out = flags.out;
    for (const std::string& kv : params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--param expects key=value, got " + kv);
      c.params[kv.substr(0, eq)] = kv.substr(eq + 1);
    }

    RunResult res = run_and_write(c);
    if (c.out.empty()) std::cout << res.csv;
    if (!res.error.empty()) std::cerr << "error: " << res.error << "\n";
    return res.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace soaheap::harness

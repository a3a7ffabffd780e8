#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "soaheap/allocator.hpp"

namespace soaheap::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitOutOfMemory = 3,
  kExitApp = 4,
  kExitAudit = 5,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DefragPolicy {
  enum class Kind { none, every, massive };
  Kind kind = Kind::none;
  std::uint64_t m = 0;  // every m iterations
  double k2 = 0.0;      // candidate count (>= 1) or fraction of all blocks (< 1)

  // "none", "every:<m>" or "massive:<k2>".
  static DefragPolicy parse(const std::string& text);
  std::string str() const;
};

struct ScenarioConfig {
  std::string app = "wator";
  std::map<std::string, std::string> params;
  std::uint64_t heap_size = 0;  // smallest-object slots, multiple of 64; 0 picks an app default
  std::uint64_t iterations = 100;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  unsigned retries = 5;
  unsigned defrag_n = 1;
  OomPolicy oom = OomPolicy::error;
  DefragPolicy policy;
  std::uint64_t k1 = 16;
  bool audit = false;
  bool dump_bitmaps = false;
  bool timings = true;
  // Output prefix: <out>.csv, <out>.json and, with dump_bitmaps,
  // <out>.bitmaps.txt. Empty writes the CSV to stdout only.
  std::string out;
};

// Throws ConfigError.
void validate(const ScenarioConfig& config);
// Fills a config from a JSON document; keys mirror the command-line flags
// with dashes replaced by underscores, and "params" holds app parameters.
ScenarioConfig config_from_json(const std::string& text, ScenarioConfig base = {});
ScenarioConfig load_config_file(const std::string& path, ScenarioConfig base = {});

std::vector<std::string> known_apps();

struct RunResult {
  int exit_code = kExitOk;
  std::string error;
  std::string csv;
  std::string json;
  std::string bitmaps;
};

// Runs a scenario and returns its metrics; never throws.
RunResult run(const ScenarioConfig& config);
// Runs and writes the metrics files named by config.out.
RunResult run_and_write(const ScenarioConfig& config);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

// (x, F) pairs from a metrics CSV: x is the delete_fraction column when
// present, else the iteration column. Throws ConfigError on missing columns.
std::vector<CurvePoint> report_fragmentation_curve(const std::string& csv_text);
std::string curve_table(const std::vector<CurvePoint>& points);

// Command-line entry point shared by the CLI tool and the tests.
int cli_main(int argc, char** argv);

}  // namespace soaheap::harness

#pragma once

#include <cstdint>
#include <vector>

namespace soaheap::apps {

struct SyntheticParams {
  std::uint64_t objects = 65536;
  double delete_fraction = 0.5;
  unsigned n = 1;
  std::uint64_t k1 = 0;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

struct SyntheticResult {
  double fragmentation_before = 0.0;
  double fragmentation_after = 0.0;
  std::uint64_t blocks_before = 0;
  std::uint64_t blocks_after = 0;
  std::uint64_t candidates_before = 0;
  std::uint64_t candidates_after = 0;
  std::uint64_t passes = 0;
  std::uint64_t pass_bound = 0;
  std::uint64_t moved = 0;
  std::uint64_t rewritten = 0;
  std::uint64_t live = 0;
  // Every surviving object still reaches its own data and its peer.
  bool integrity = false;
  bool audit_clean = false;
};

// Allocates objects that each point at a random peer, deletes a uniformly
// random subset of exactly round(delete_fraction * objects), relinks the
// survivors and defragments with the given factor.
SyntheticResult synthetic_run(const SyntheticParams& params);

}  // namespace soaheap::apps

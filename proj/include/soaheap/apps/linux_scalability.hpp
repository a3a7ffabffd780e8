#pragma once

#include <cstdint>

namespace soaheap::apps {

struct ScalabilityResult {
  std::uint64_t requested = 0;
  std::uint64_t achieved = 0;  // objects obtained before running out of memory
  std::uint64_t capacity = 0;  // object slots in the heap
  std::uint64_t blocks_used = 0;
  double utilization = 0.0;  // achieved / capacity at the end of the allocation phase
  double alloc_ns = 0.0;     // mean per allocation, summed over threads
  double dealloc_ns = 0.0;
  bool all_free_after = false;
};

// Every thread allocates allocs_per_thread objects of object_size bytes one at
// a time (or until memory runs out when allocs_per_thread is 0), then frees
// them all. The heap holds exactly num_threads * allocs_per_thread objects,
// rounded up to whole blocks; heap_objects overrides that size.
ScalabilityResult linux_scalability_run(unsigned num_threads, std::uint64_t allocs_per_thread,
                                        std::uint32_t object_size, std::uint64_t heap_objects = 0, unsigned retries = 5,
                                        std::uint64_t seed = 0);

}  // namespace soaheap::apps

#include "soaheap/apps/linux_scalability.hpp"

#include <chrono>
#include <stdexcept>
#include <vector>

#include "soaheap/runtime.hpp"

namespace soaheap::apps {

namespace {

std::uint64_t elapsed_ns(std::chrono::steady_clock::time_point since) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - since).count());
}

}  // namespace

ScalabilityResult linux_scalability_run(unsigned num_threads, std::uint64_t allocs_per_thread,
                                        std::uint32_t object_size, std::uint64_t heap_objects, unsigned retries,
                                        std::uint64_t seed) {
  if (num_threads == 0) throw std::invalid_argument("need at least one thread");
  if (heap_objects == 0) heap_objects = num_threads * allocs_per_thread;
  if (heap_objects == 0) throw std::invalid_argument("heap size unknown: give allocations or a heap size");
  heap_objects = (heap_objects + 63) / 64 * 64;

  AllocConfig config;
  config.retries = retries;
  config.seed = seed;
  Runtime rt(
      [&](Registry& reg) {
        reg.register_type("Object", std::nullopt, false, {FieldDescriptor::array("payload", 1, object_size)});
      },
      heap_objects, config, num_threads);
  Allocator& a = rt.alloc();
  const TypeId type = rt.registry().id_of("Object");

  std::vector<std::vector<Handle>> owned(num_threads);
  std::vector<std::uint64_t> alloc_time(num_threads), dealloc_time(num_threads);
  rt.pool().run([&](unsigned w) {
    auto& mine = owned[w];
    if (allocs_per_thread) mine.reserve(allocs_per_thread);
    const auto start = std::chrono::steady_clock::now();
    try {
      while (allocs_per_thread == 0 || mine.size() < allocs_per_thread) mine.push_back(a.allocate(type));
    } catch (const OutOfMemory&) {
    }
    alloc_time[w] = elapsed_ns(start);
  });

  ScalabilityResult r;
  r.requested = num_threads * allocs_per_thread;
  for (const auto& v : owned) r.achieved += v.size();
  r.capacity = a.heap().num_blocks() * a.heap().capacity_of(type);
  r.blocks_used = a.allocated(type).count();
  r.utilization = static_cast<double>(a.live_objects(type)) / static_cast<double>(r.capacity);

  rt.pool().run([&](unsigned w) {
    const auto start = std::chrono::steady_clock::now();
    for (Handle h : owned[w]) a.deallocate(h);
    dealloc_time[w] = elapsed_ns(start);
  });

  std::uint64_t at = 0, dt = 0;
  for (unsigned w = 0; w < num_threads; ++w) at += alloc_time[w], dt += dealloc_time[w];
  if (r.achieved) {
    r.alloc_ns = static_cast<double>(at) / static_cast<double>(r.achieved);
    r.dealloc_ns = static_cast<double>(dt) / static_cast<double>(r.achieved);
  }
  r.all_free_after = a.free_blocks().count() == a.heap().num_blocks() && a.audit().empty();
  return r;
}

}  // namespace soaheap::apps

#pragma once

#include <cstdint>
#include <functional>
#include <memory>

#include "soaheap/allocator.hpp"
#include "soaheap/defrag.hpp"
#include "soaheap/enumerate.hpp"
#include "soaheap/registry.hpp"
#include "soaheap/worker_pool.hpp"

namespace soaheap {

// Registry, heap, worker pool, enumerator and defragmenter wired together.
class Runtime {
 public:
  Runtime(const std::function<void(Registry&)>& register_types, std::uint64_t heap_size, AllocConfig config = {},
          unsigned workers = 1)
      : pool_(workers) {
    register_types(registry_);
    registry_.freeze(heap_size);
    alloc_ = std::make_unique<Allocator>(registry_, config);
    enumerator_ = std::make_unique<Enumerator>(*alloc_, pool_);
    defrag_ = std::make_unique<Defragmenter>(*alloc_, pool_);
  }

  const Registry& registry() const { return registry_; }
  Allocator& alloc() { return *alloc_; }
  WorkerPool& pool() { return pool_; }
  Enumerator& enumerator() { return *enumerator_; }
  Defragmenter& defrag() { return *defrag_; }

 private:
  Registry registry_;
  WorkerPool pool_;
  std::unique_ptr<Allocator> alloc_;
  std::unique_ptr<Enumerator> enumerator_;
  std::unique_ptr<Defragmenter> defrag_;
};

// Called by apps at every iteration boundary (a quiescent point).
using IterationHook = std::function<void(std::uint64_t iteration)>;

}  // namespace soaheap

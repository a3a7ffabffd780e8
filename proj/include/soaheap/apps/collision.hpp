#pragma once

#include <cstdint>
#include <string>

#include "soaheap/apps/nbody.hpp"

namespace soaheap::apps {

struct CollisionParams {
  BodyParams body;
  float merge_threshold = 0.01f;
};

void register_collision(Registry& reg);

// Bodies that come closer than the merge threshold collide perfectly
// inelastically: the lighter body is merged into the heavier one and deleted.
//
// A receiver picks the eligible giver with the smallest id, and a giver
// claimed by several receivers keeps the receiver with the smallest id. With
// one worker the outcome therefore depends only on body ids, never on where
// bodies live in the heap. With several workers the giver-side choice races.
class CollisionSim : public NbodySim {
 public:
  CollisionSim(Runtime& rt, CollisionParams params);

  void step() override;
  void reset_merge();
  void prepare_merge();
  void perform_merge();
  void delete_merged();

  std::uint64_t merges() const { return merges_; }
  // Id of the body a live body will be merged into, or -1.
  std::int32_t merge_target_id(std::int32_t id);
  // Id-ordered state of all live bodies as raw bytes.
  std::string serialize();

 private:
  std::int32_t id_of(Handle h) const;
  Handle find(std::int32_t id);

  float threshold_;
  std::uint64_t merges_ = 0;
};

struct CollisionSummary {
  BodySummary bodies;
  std::uint64_t merges = 0;
};

CollisionSummary collision_run(std::uint64_t num_bodies, std::uint64_t iterations, std::uint64_t seed, float dt,
                               float merge_threshold, unsigned workers = 1);

}  // namespace soaheap::apps

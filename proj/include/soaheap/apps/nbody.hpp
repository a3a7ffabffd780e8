#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soaheap/runtime.hpp"

namespace soaheap::apps {

// Field indices of Body. Collision bodies extend the same layout.
namespace body {
inline constexpr std::uint32_t kPosX = 0, kPosY = 1, kVelX = 2, kVelY = 3, kForceX = 4, kForceY = 5, kMass = 6, kId = 7;
inline constexpr std::uint32_t kMergeTarget = 8, kSuccessfulMerge = 9, kBreakLoop = 10;
}  // namespace body

struct BodyParams {
  float dt = 0.01f;
  float gravity = 1e-3f;
  // Added to the squared distance; 0 gives the plain inverse-square law.
  float softening = 1e-4f;
  std::uint64_t seed = 1;
};

struct BodyState {
  std::int32_t id = 0;
  float pos_x = 0, pos_y = 0, vel_x = 0, vel_y = 0, mass = 0;
  bool operator==(const BodyState&) const = default;
};

struct BodySummary {
  std::uint64_t bodies = 0;
  double mass = 0;
  double momentum_x = 0, momentum_y = 0;
  // FNV-1a over the id-ordered state bytes.
  std::uint64_t checksum = 0;
};

void register_nbody(Registry& reg);

// Random body number index of a run with the given seed. Masses are
// multiples of 1/1024 so that sums of a few thousand masses stay exact.
BodyState random_body(std::uint64_t seed, std::int32_t index);

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

class NbodySim {
 public:
  NbodySim(Runtime& rt, BodyParams params);
  virtual ~NbodySim() = default;

  // parallel_new of count random bodies with ids 0..count-1.
  void init_random(std::uint64_t count);
  Handle add_body(const BodyState& s);

  virtual void step();
  void compute_forces();
  void update();

  // Live bodies ordered by id.
  std::vector<BodyState> bodies();
  std::vector<std::pair<float, float>> forces();
  BodySummary summary();
  std::uint64_t count();
  TypeId body_type() const { return body_; }

 protected:
  void store_state(Handle h, const BodyState& s);

  Runtime& rt_;
  BodyParams params_;
  TypeId body_;
  std::int32_t next_id_ = 0;
};

BodySummary nbody_run(std::uint64_t num_bodies, std::uint64_t iterations, std::uint64_t seed, float dt,
                      unsigned workers = 1);

}  // namespace soaheap::apps

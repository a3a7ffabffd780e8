#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace soaheap {

class WorkerPool;

struct OpOutcome {
  bool success = false;
  std::uint64_t position = 0;

  static OpOutcome fail() { return {}; }
  static OpOutcome at(std::uint64_t pos) { return {true, pos}; }
};

inline constexpr unsigned kNoBit = 64;

// Index of the n-th (0-based) set bit of word, or kNoBit if popcount <= n.
unsigned nth_set_bit(std::uint64_t word, unsigned n);

// Multi-level bitmap of 64-bit containers. Level 0 holds the payload bits; bit i
// of level l+1 summarizes container i of level l (set iff that container is
// nonzero). Summary levels are updated lazily by the thread whose level-0 write
// set the first or cleared the last bit of a container, so they agree with
// level 0 only once all in-flight operations have finished.
class HierBitmap {
 public:
  explicit HierBitmap(std::uint64_t num_bits, bool initially_set = false);

  std::uint64_t size() const { return num_bits_; }
  std::size_t num_levels() const { return levels_.size(); }
  std::size_t words_at(std::size_t level) const { return level_words_[level]; }
  std::uint64_t word(std::size_t level, std::size_t index) const {
    return levels_[level][index].load(std::memory_order_relaxed);
  }

  // Returns true iff this call changed the bit.
  bool try_write(std::uint64_t pos, bool value) { return try_write_at(0, pos, value); }
  bool try_set(std::uint64_t pos) { return try_write(pos, true); }
  bool try_clear(std::uint64_t pos) { return try_write(pos, false); }

  // Retries until the bit was changed by this call. Hangs if no opposite
  // write ever arrives.
  void write(std::uint64_t pos, bool value) { write_at(0, pos, value); }
  void set(std::uint64_t pos) { write(pos, true); }
  void clear(std::uint64_t pos) { write(pos, false); }

  bool get(std::uint64_t pos) const;

  // Top-down search; each level's word is rotated by six bits of the seed
  // before find-first-set. May fail spuriously while summaries lag.
  OpOutcome try_find_set(std::uint64_t seed) const;

  // Finds a set bit and clears it; the returned position was cleared by this
  // caller. Fails once the top level reports no candidates.
  OpOutcome claim_any(std::uint64_t seed);

  // Quiescent only. Positions of all set bits; order unspecified when a pool
  // is given.
  std::vector<std::uint64_t> indices(WorkerPool* pool = nullptr) const;
  std::vector<std::uint64_t> indices_sorted() const;

  // Visits set level-0 bits guided by the summaries. Safe to call during a
  // phase; concurrent changes may or may not be observed.
  template <class F>
  void for_each_set(F&& fn) const {
    for_each_set_at(levels_.size() - 1, 0, fn);
  }

  std::uint64_t count() const;
  bool any() const { return word(levels_.size() - 1, 0) != 0; }

  // Number of summary bits that disagree with their container.
  std::uint64_t consistency_violations() const;

  // Quiescent only.
  void reset(bool value);

  // One line per level (top first): "L<level>: <hex words>".
  std::string dump() const;

 private:
  bool try_write_at(std::size_t level, std::uint64_t pos, bool value);
  void write_at(std::size_t level, std::uint64_t pos, bool value);

  template <class F>
  void for_each_set_at(std::size_t level, std::uint64_t container, F& fn) const {
    std::uint64_t w = word(level, container);
    while (w) {
      unsigned b = static_cast<unsigned>(__builtin_ctzll(w));
      w &= w - 1;
      std::uint64_t pos = container * 64 + b;
      if (level == 0) {
        fn(pos);
      } else {
        for_each_set_at(level - 1, pos, fn);
      }
    }
  }

  std::uint64_t num_bits_;
  std::vector<std::size_t> level_words_;
  std::vector<std::unique_ptr<std::atomic<std::uint64_t>[]>> levels_;
};

}  // namespace soaheap

#include "soaheap/bitmap.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cstdio>

#include "soaheap/backoff.hpp"
#include "soaheap/worker_pool.hpp"

namespace soaheap {

unsigned nth_set_bit(std::uint64_t word, unsigned n) {
  if (static_cast<unsigned>(std::popcount(word)) <= n) return kNoBit;
  for (unsigned i = 0; i < n; ++i) word &= word - 1;
  return static_cast<unsigned>(std::countr_zero(word));
}

HierBitmap::HierBitmap(std::uint64_t num_bits, bool initially_set) : num_bits_(num_bits) {
  std::uint64_t n = std::max<std::uint64_t>(num_bits, 1);
  while (true) {
    std::uint64_t words = (n + 63) / 64;
    level_words_.push_back(words);
    levels_.emplace_back(new std::atomic<std::uint64_t>[words]);
    if (words == 1) break;
    n = words;
  }
  reset(initially_set);
}

void HierBitmap::reset(bool value) {
  std::uint64_t bits = num_bits_;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (std::size_t i = 0; i < level_words_[l]; ++i) {
      std::uint64_t w = 0;
      if (value) {
        std::uint64_t lo = i * 64;
        if (lo + 64 <= bits) {
          w = ~0ULL;
        } else if (lo < bits) {
          w = (1ULL << (bits - lo)) - 1;
        }
      }
      levels_[l][i].store(w, std::memory_order_relaxed);
    }
    bits = level_words_[l];
  }
  std::atomic_thread_fence(std::memory_order_seq_cst);
}

bool HierBitmap::get(std::uint64_t pos) const {
  assert(pos < num_bits_);
  return (levels_[0][pos / 64].load(std::memory_order_acquire) >> (pos % 64)) & 1;
}

bool HierBitmap::try_write_at(std::size_t level, std::uint64_t pos, bool value) {
  assert(level > 0 || pos < num_bits_);
  auto& container = levels_[level][pos / 64];
  std::uint64_t mask = 1ULL << (pos % 64);
  bool has_parent = level + 1 < levels_.size();
  if (value) {
    std::uint64_t before = container.fetch_or(mask, std::memory_order_acq_rel);
    if (before & mask) return false;
    if (before == 0 && has_parent) write_at(level + 1, pos / 64, true);
  } else {
    std::uint64_t before = container.fetch_and(~mask, std::memory_order_acq_rel);
    if (!(before & mask)) return false;
    if (before == mask && has_parent) write_at(level + 1, pos / 64, false);
  }
  return true;
}

void HierBitmap::write_at(std::size_t level, std::uint64_t pos, bool value) {
  Backoff backoff;
  while (!try_write_at(level, pos, value)) backoff.pause();
}

OpOutcome HierBitmap::try_find_set(std::uint64_t seed) const {
  std::uint64_t container = 0;
  for (std::size_t l = levels_.size(); l-- > 0;) {
    std::uint64_t w = levels_[l][container].load(std::memory_order_acquire);
    if (w == 0) return OpOutcome::fail();
    unsigned rot = static_cast<unsigned>((seed >> (6 * l)) & 63);
    unsigned b = (static_cast<unsigned>(std::countr_zero(std::rotr(w, static_cast<int>(rot)))) + rot) & 63;
    container = container * 64 + b;
  }
  return OpOutcome::at(container);
}

OpOutcome HierBitmap::claim_any(std::uint64_t seed) {
  constexpr unsigned kAttemptsBeforeScan = 64;
  Backoff backoff;
  for (unsigned attempt = 0;; ++attempt) {
    if (attempt >= kAttemptsBeforeScan) {
      for (std::size_t i = 0; i < level_words_[0]; ++i) {
        std::uint64_t w = levels_[0][i].load(std::memory_order_acquire);
        while (w) {
          std::uint64_t pos = i * 64 + static_cast<unsigned>(std::countr_zero(w));
          if (try_clear(pos)) return OpOutcome::at(pos);
          w &= w - 1;
        }
      }
      return OpOutcome::fail();
    }
    OpOutcome o = try_find_set(seed + attempt * 0x9E3779B97F4A7C15ULL);
    if (o.success) {
      if (try_clear(o.position)) return o;
    } else if (!any()) {
      return OpOutcome::fail();
    }
    backoff.pause();
  }
}

std::uint64_t HierBitmap::count() const {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < level_words_[0]; ++i) c += std::popcount(word(0, i));
  return c;
}

std::vector<std::uint64_t> HierBitmap::indices(WorkerPool* pool) const {
  if (!pool || pool->size() <= 1 || levels_.size() == 1) return indices_sorted();

  // Containers of level 0 flagged by level 1, split round-robin over workers;
  // each worker appends through a shared cursor.
  std::uint64_t total = count();
  std::vector<std::uint64_t> out(total);
  std::atomic<std::uint64_t> cursor{0};
  const std::size_t summaries = level_words_[1];
  pool->run([&](unsigned worker) {
    for (std::size_t s = worker; s < summaries; s += pool->size()) {
      std::uint64_t flags = word(1, s);
      while (flags) {
        std::uint64_t c = s * 64 + static_cast<unsigned>(std::countr_zero(flags));
        flags &= flags - 1;
        std::uint64_t w = word(0, c);
        if (!w) continue;
        std::uint64_t at = cursor.fetch_add(static_cast<std::uint64_t>(std::popcount(w)), std::memory_order_relaxed);
        while (w) {
          out[at++] = c * 64 + static_cast<unsigned>(std::countr_zero(w));
          w &= w - 1;
        }
      }
    }
  });
  out.resize(cursor.load());
  return out;
}

std::vector<std::uint64_t> HierBitmap::indices_sorted() const {
  std::vector<std::uint64_t> out;
  out.reserve(count());
  for_each_set([&](std::uint64_t pos) { out.push_back(pos); });
  return out;
}

std::uint64_t HierBitmap::consistency_violations() const {
  std::uint64_t bad = 0;
  for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
    for (std::size_t i = 0; i < level_words_[l]; ++i) {
      bool summary = (word(l + 1, i / 64) >> (i % 64)) & 1;
      if (summary != (word(l, i) != 0)) ++bad;
    }
    // Summary bits for containers that do not exist must stay clear.
    for (std::size_t i = level_words_[l]; i < level_words_[l + 1] * 64; ++i)
      if ((word(l + 1, i / 64) >> (i % 64)) & 1) ++bad;
  }
  return bad;
}

std::string HierBitmap::dump() const {
  std::string out;
  char buf[24];
  for (std::size_t l = levels_.size(); l-- > 0;) {
    out += "L" + std::to_string(l) + ":";
    for (std::size_t i = 0; i < level_words_[l]; ++i) {
      std::snprintf(buf, sizeof buf, " %016llx", static_cast<unsigned long long>(word(l, i)));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace soaheap

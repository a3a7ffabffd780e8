#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <future>
#include <random>
#include <set>
#include <thread>

#include "soaheap/bitmap.hpp"
#include "soaheap/worker_pool.hpp"

using namespace soaheap;

namespace {

unsigned naive_nth(std::uint64_t w, unsigned n) {
  for (unsigned i = 0; i < 64; ++i)
    if ((w >> i) & 1) {
      if (n == 0) return i;
      --n;
    }
  return kNoBit;
}

}  // namespace

TEST_CASE("nth_set_bit") {
  CHECK(nth_set_bit(0b101101, 0) == 0);
  CHECK(nth_set_bit(0b101101, 2) == 3);
  CHECK(nth_set_bit(0b101101, 5) == kNoBit);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t w = rng() & rng();
    for (unsigned n = 0; n < 65; ++n) CHECK(nth_set_bit(w, n) == naive_nth(w, n));
  }
}

TEST_CASE("try_write transitions") {
  HierBitmap b(64);
  b.try_set(1);
  b.try_set(2);
  CHECK(b.try_write(0, true));
  CHECK(b.word(0, 0) == 0b0111);
  CHECK_FALSE(b.try_write(1, true));

  HierBitmap c(4096);
  c.try_set(64);
  CHECK(c.word(1, 0) == 0b10);
  CHECK(c.try_write(64, false));
  CHECK(c.word(1, 0) == 0);
  CHECK(c.consistency_violations() == 0);
}

TEST_CASE("write waits for the opposite operation") {
  HierBitmap b(128);
  b.set(7);
  b.write(7, false);
  CHECK_FALSE(b.get(7));

  std::atomic<bool> done{false};
  std::thread waiter([&] {
    b.write(9, false);
    done = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  CHECK_FALSE(done.load());
  b.set(9);
  waiter.join();
  CHECK(done.load());
  CHECK_FALSE(b.get(9));
}

TEST_CASE("write of the same value twice does not return") {
  auto* b = new HierBitmap(64);  // leaked with the stuck thread
  b->set(3);
  auto fut = std::async(std::launch::async, [b] { b->write(3, true); });
  CHECK(fut.wait_for(std::chrono::milliseconds(100)) == std::future_status::timeout);
  // Let the thread finish so the process can exit cleanly.
  b->clear(3);
  fut.wait();
  delete b;
}

TEST_CASE("try_find_set") {
  HierBitmap empty(4096);
  CHECK_FALSE(empty.try_find_set(0).success);

  HierBitmap one(128);
  one.set(70);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto r = one.try_find_set(seed);
    REQUIRE(r.success);
    CHECK(r.position == 70);
  }

  HierBitmap two(64);
  two.set(3);
  two.set(40);
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    auto r = two.try_find_set(seed);
    REQUIRE(r.success);
    CHECK((r.position == 3 || r.position == 40));
    seen.insert(r.position);
  }
  CHECK(seen.size() == 2);
}

TEST_CASE("claim_any") {
  HierBitmap b(128);
  b.set(5);
  auto r = b.claim_any(0);
  REQUIRE(r.success);
  CHECK(r.position == 5);
  CHECK_FALSE(b.get(5));
  CHECK_FALSE(b.claim_any(1).success);

  for (int round = 0; round < 200; ++round) {
    HierBitmap c(128);
    c.set(3);
    c.set(90);
    OpOutcome x, y;
    std::thread t1([&] { x = c.claim_any(round); });
    std::thread t2([&] { y = c.claim_any(round + 1); });
    t1.join();
    t2.join();
    REQUIRE(x.success);
    REQUIRE(y.success);
    CHECK(std::set<std::uint64_t>{x.position, y.position} == std::set<std::uint64_t>{3, 90});
  }
}

TEST_CASE("get") {
  HierBitmap b(200);
  b.set(10);
  CHECK(b.get(10));
  b.clear(10);
  CHECK_FALSE(b.get(10));
  CHECK_FALSE(b.get(199));
}

TEST_CASE("indices") {
  HierBitmap b(256);
  for (auto p : {0, 64, 65, 255}) b.set(p);
  auto idx = b.indices();
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<std::uint64_t>{0, 64, 65, 255});
  CHECK(HierBitmap(256).indices().empty());

  std::mt19937_64 rng(11);
  WorkerPool pool(4);
  HierBitmap r(4096);
  std::vector<std::uint64_t> naive;
  for (std::uint64_t i = 0; i < 4096; ++i)
    if (rng() % 3 == 0) {
      r.set(i);
      naive.push_back(i);
    }
  CHECK(r.indices_sorted() == naive);
  auto par = r.indices(&pool);
  std::sort(par.begin(), par.end());
  CHECK(par == naive);
  CHECK(r.count() == naive.size());

  // Round trip: rebuilding from indices reproduces every level.
  HierBitmap copy(4096);
  for (auto i : par) copy.set(i);
  for (std::size_t l = 0; l < r.num_levels(); ++l)
    for (std::size_t w = 0; w < r.words_at(l); ++w) CHECK(copy.word(l, w) == r.word(l, w));
}

TEST_CASE("bits beyond the size stay clear") {
  HierBitmap b(100, true);
  CHECK(b.count() == 100);
  CHECK(b.word(0, 1) == (1ULL << 36) - 1);
  CHECK(b.consistency_violations() == 0);
}

TEST_CASE("try_find_set single-threaded soundness") {
  std::mt19937_64 rng(5);
  HierBitmap b(1 << 14);
  for (int i = 0; i < 500; ++i) b.try_set(rng() % (1 << 14));
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto r = b.try_find_set(seed);
    REQUIRE(r.success);
    CHECK(b.get(r.position));
  }
}

TEST_CASE("eventual consistency after concurrent legal operations") {
  constexpr std::uint64_t kBits = 1 << 14;
  HierBitmap b(kBits);
  std::vector<std::uint8_t> initial(kBits);
  std::mt19937_64 rng(1);
  for (std::uint64_t i = 0; i < kBits; ++i)
    if (rng() % 2) b.set(i), initial[i] = 1;
  // Each thread owns a disjoint set of bits and toggles them; per-bit surplus
  // stays within {-1, 0, 1}.
  constexpr unsigned kThreads = 4;
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < kThreads; ++t)
    threads.emplace_back([&, t] {
      std::mt19937_64 r(100 + t);
      for (int k = 0; k < 20000; ++k) {
        std::uint64_t pos = (r() % (kBits / kThreads)) * kThreads + t;
        b.write(pos, !b.get(pos));
      }
    });
  for (auto& t : threads) t.join();
  CHECK(b.consistency_violations() == 0);
}

TEST_CASE("dump format") {
  HierBitmap b(128);
  b.set(1);
  const std::string d = b.dump();
  CHECK(d.rfind("L1:", 0) == 0);
  CHECK(d.find("L0:") != std::string::npos);
}

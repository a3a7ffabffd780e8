#pragma once

#include <thread>

namespace soaheap {

// Spin briefly, then yield so a descheduled peer can finish the write this
// thread is waiting for (matters when workers outnumber cores).
class Backoff {
 public:
  void pause() {
    if (++spins_ > kSpinLimit) {
      std::this_thread::yield();
    } else {
#if defined(__x86_64__) || defined(__i386__)
      __builtin_ia32_pause();
#endif
    }
  }
  void reset() { spins_ = 0; }

 private:
  static constexpr unsigned kSpinLimit = 16;
  unsigned spins_ = 0;
};

}  // namespace soaheap

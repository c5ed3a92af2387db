#include "didsnmm/parallel.hpp"

namespace didsnmm {

namespace {
std::atomic<unsigned> configured{0};
}

void set_thread_count(unsigned n) { configured.store(n); }

unsigned thread_count() {
  const unsigned n = configured.load();
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace didsnmm

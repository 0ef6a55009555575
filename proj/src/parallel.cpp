#include "dcvae/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dcvae {

namespace {

int threads_from_env() {
  const char* raw = std::getenv("DCVAE_THREADS");
  if (!raw || !*raw) return 1;
  try {
    const int n = std::stoi(raw);
    return n > 0 ? n : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

std::atomic<int>& budget() {
  static std::atomic<int> value{threads_from_env()};
  return value;
}

}  // namespace

int thread_budget() { return budget().load(); }

void set_thread_budget(int threads) { budget().store(threads > 0 ? threads : 1); }

bool has_openmp() noexcept {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace dcvae

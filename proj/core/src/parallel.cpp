#include "metareg/parallel.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace metareg {
namespace {

std::atomic<bool> g_serial{false};
// Nested parallel_for calls run inline on the calling worker.
thread_local bool t_in_worker = false;

// Convolutions call into BLAS from worker threads; BLAS-internal threading
// would oversubscribe and make timing erratic.
const bool g_blas_single = [] {
  openblas_set_num_threads(1);
  return true;
}();

}  // namespace

void set_serial(bool serial) { g_serial = serial; }
bool serial_mode() { return g_serial; }

int worker_count() {
  (void)g_blas_single;
  if (g_serial) return 1;
  if (const char* env = std::getenv("METAREG_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(worker_count()));
  if (workers <= 1 || t_in_worker) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        t_in_worker = true;
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace metareg

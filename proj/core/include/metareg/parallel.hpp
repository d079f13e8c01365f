#pragma once

#include <cstddef>
#include <functional>

namespace metareg {

// Worker count: 1 in serial mode, otherwise METAREG_THREADS if set, otherwise
// the hardware concurrency.
int worker_count();
void set_serial(bool serial);
bool serial_mode();

// Runs fn(0..n-1), static round-robin assignment over workers. Results must be
// written to per-index slots by the callee; the first exception by index is
// rethrown after all workers join. Calls made from inside a worker run inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace metareg

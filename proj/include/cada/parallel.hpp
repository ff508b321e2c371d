#pragma once

#include <cstdint>

namespace cada {

/// Applies the `CADA_THREADS` cap (if set) to the internal thread pool.
/// Results never depend on the thread count: every parallel loop in the
/// library writes disjoint outputs and accumulates in a fixed order.
void configure_threads_from_env();

void set_num_threads(int threads);
int num_threads();

}  // namespace cada

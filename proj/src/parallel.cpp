#include "cada/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace cada {

void configure_threads_from_env() {
  if (const char* env = std::getenv("CADA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace cada

#include "sudokusens/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sudoku {

int thread_cap() {
  static const int cap = [] {
    const char* env = std::getenv("SUDOKU_AUG_THREADS");
    if (!env || !*env) return 0;
    try {
      int v = std::stoi(env);
      return v > 0 ? v : 0;
    } catch (...) {
      return 0;
    }
  }();
  return cap;
}

void apply_thread_cap() {
#ifdef _OPENMP
  int cap = thread_cap();
  if (cap > 0 && cap < omp_get_max_threads()) {
    omp_set_num_threads(cap);
  }
#endif
}

int worker_count() {
#ifdef _OPENMP
  int cap = thread_cap();
  int n = omp_get_max_threads();
  return (cap > 0 && cap < n) ? cap : n;
#else
  return 1;
#endif
}

} // namespace sudoku

#pragma once

namespace sudoku {

// Worker-thread cap, read once from SUDOKU_AUG_THREADS (0 = OpenMP default).
int thread_cap();

// Applies the cap to the OpenMP runtime. Safe to call repeatedly.
void apply_thread_cap();

// Number of workers parallel regions will actually use.
int worker_count();

} // namespace sudoku

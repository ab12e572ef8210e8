#pragma once

#include <cstddef>

namespace tensopt {

/// Execution policy for the data-parallel kernels and the Monte-Carlo
/// replicate loop.  `serial` runs the identical code path on one thread.
enum class Exec { serial, parallel };

/// Caps OpenMP worker threads (0 leaves the runtime default).
void set_thread_count(int threads);
int thread_count();

/// Reads TENSOPT_THREADS; returns `fallback` when unset or unparsable.
int threads_from_env(int fallback);

}  // namespace tensopt

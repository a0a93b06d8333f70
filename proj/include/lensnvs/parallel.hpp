#pragma once

#include <cstddef>

namespace lensnvs {

/// Caps OpenMP parallelism for the whole process. 1 gives bit-reproducible
/// single-threaded execution (multi-threaded runs partition work so that no
/// floating-point sum is split across threads, but 1 is the contract).
void set_num_threads(int n);
int num_threads();

}  // namespace lensnvs

// Parallel loop over [0, n) whose iterations are independent.
#define LENSNVS_PARALLEL_FOR _Pragma("omp parallel for schedule(static) if(lensnvs::num_threads() > 1)")

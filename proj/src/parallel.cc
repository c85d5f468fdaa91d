#include "imloc/parallel.h"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imloc {

void SetNumThreads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

int NumThreads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace imloc

#pragma once

namespace imloc {

// Worker threads used by the parallel loops. n <= 0 restores the default.
void SetNumThreads(int n);
int NumThreads();

}  // namespace imloc

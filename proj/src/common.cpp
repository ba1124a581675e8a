#include "partswap/common.hpp"

namespace partswap {

namespace {
int g_threads = 0;
}

void set_threads(int n) {
    g_threads = n > 0 ? n : 0;
#ifdef _OPENMP
    if (g_threads > 0) omp_set_num_threads(g_threads);
#endif
}

int thread_count() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace partswap

#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace partswap {

// Error taxonomy. The CLI maps these onto exit codes: config/usage -> 2,
// data-shaped failures -> 3, numeric failures -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct EmptyRegionError : Error { using Error::Error; };
struct OverlapError : Error { using Error::Error; };
struct GeometryError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

void set_threads(int n);
int thread_count();

// Runs f(i) for i in [0,n). Parallelizes when the estimated flop cost is
// worth a fork; iterations must write disjoint outputs so the result does
// not depend on the schedule.
template <class F>
void par_for(int n, int64_t cost, F&& f) {
#ifdef _OPENMP
    if (cost >= 65536 && n > 1 && thread_count() > 1) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    (void)cost;
    for (int i = 0; i < n; ++i) f(i);
}

// C[M,N] (+)= A[M,K] * B[K,N], row major.
template <class T>
void gemm_nn(int M, int K, int N, const T* A, const T* B, T* C, bool acc) {
    par_for(M, int64_t(M) * K * N, [&](int i) {
        T* c = C + int64_t(i) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = T(0);
        const T* a = A + int64_t(i) * K;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            if (av == T(0)) continue;
            const T* b = B + int64_t(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    });
}

// C[M,K] (+)= A[M,N] * B[K,N]^T
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool acc) {
    par_for(M, int64_t(M) * K * N, [&](int i) {
        const T* a = A + int64_t(i) * N;
        T* c = C + int64_t(i) * K;
        for (int k = 0; k < K; ++k) {
            const T* b = B + int64_t(k) * N;
            T s = T(0);
            for (int j = 0; j < N; ++j) s += a[j] * b[j];
            if (acc) c[k] += s; else c[k] = s;
        }
    });
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(int M, int K, int N, const T* A, const T* B, T* C, bool acc) {
    par_for(K, int64_t(M) * K * N, [&](int k) {
        T* c = C + int64_t(k) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = T(0);
        for (int i = 0; i < M; ++i) {
            const T av = A[int64_t(i) * K + k];
            if (av == T(0)) continue;
            const T* b = B + int64_t(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    });
}

}  // namespace partswap

// Compiled with -mavx2 only; callers must check CPU support first.
#include "envi/simd/ard.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

namespace envi::simd {
namespace {

void sqdist_avx2(const double* x, Index n, const double* z, Index m, Index d,
                 const double* w, double* out) {
  const Index n4 = n - n % 4;
  for (Index j = 0; j < m; ++j) {
    double* col = out + j * n;
    for (Index i = 0; i < n; ++i) col[i] = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double zk = z[j + k * m];
      const double wk = w[k];
      const double* xk = x + k * n;
      const __m256d vz = _mm256_set1_pd(zk);
      const __m256d vw = _mm256_set1_pd(wk);
      Index i = 0;
      for (; i < n4; i += 4) {
        __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(xk + i), vz);
        __m256d t = _mm256_mul_pd(diff, diff);
        t = _mm256_mul_pd(t, vw);
        _mm256_storeu_pd(col + i, _mm256_add_pd(_mm256_loadu_pd(col + i), t));
      }
      for (; i < n; ++i) {
        double diff = xk[i] - zk;
        double t = diff * diff;
        t = t * wk;
        col[i] = col[i] + t;
      }
    }
  }
}

void weighted_sqdist_sum_avx2(const double* x, Index n, const double* z, Index m,
                              Index d, const double* g, double* out) {
  const Index n4 = n - n % 4;
  for (Index k = 0; k < d; ++k) {
    const double* xk = x + k * n;
    __m256d vacc = _mm256_setzero_pd();
    double tail = 0.0;
    for (Index j = 0; j < m; ++j) {
      const __m256d vz = _mm256_set1_pd(z[j + k * m]);
      const double* gj = g + j * n;
      Index i = 0;
      for (; i < n4; i += 4) {
        __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(xk + i), vz);
        __m256d t = _mm256_mul_pd(diff, diff);
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(_mm256_loadu_pd(gj + i), t));
      }
      for (; i < n; ++i) {
        double diff = xk[i] - z[j + k * m];
        tail += gj[i] * (diff * diff);
      }
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, vacc);
    out[k] = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail;
  }
}

}  // namespace

const ArdKernels* avx2_kernels() {
  static const ArdKernels table{"avx2", &sqdist_avx2, &weighted_sqdist_sum_avx2};
  if (!__builtin_cpu_supports("avx2")) return nullptr;
  return &table;
}

}  // namespace envi::simd

#else

namespace envi::simd {
const ArdKernels* avx2_kernels() { return nullptr; }
}  // namespace envi::simd

#endif

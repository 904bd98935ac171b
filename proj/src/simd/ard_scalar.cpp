#include "envi/simd/ard.hpp"

namespace envi::simd {
namespace {

void sqdist_scalar(const double* x, Index n, const double* z, Index m, Index d,
                   const double* w, double* out) {
  for (Index j = 0; j < m; ++j) {
    double* col = out + j * n;
    for (Index i = 0; i < n; ++i) col[i] = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double zk = z[j + k * m];
      const double wk = w[k];
      const double* xk = x + k * n;
      for (Index i = 0; i < n; ++i) {
        double diff = xk[i] - zk;
        double t = diff * diff;
        t = t * wk;
        col[i] = col[i] + t;
      }
    }
  }
}

void weighted_sqdist_sum_scalar(const double* x, Index n, const double* z, Index m,
                                Index d, const double* g, double* out) {
  for (Index k = 0; k < d; ++k) {
    const double* xk = x + k * n;
    double acc = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double zk = z[j + k * m];
      const double* gj = g + j * n;
      for (Index i = 0; i < n; ++i) {
        double diff = xk[i] - zk;
        acc += gj[i] * (diff * diff);
      }
    }
    out[k] = acc;
  }
}

}  // namespace

const ArdKernels& scalar_kernels() {
  static const ArdKernels table{"scalar", &sqdist_scalar, &weighted_sqdist_sum_scalar};
  return table;
}

}  // namespace envi::simd

#pragma once

// Data-parallel inner loops of the ARD squared-exponential kernel.
//
// All matrices are dense column-major: x is n×d, z is m×d, out/g are n×m.
// Every variant of `sqdist` performs the same per-element operation sequence
// as the scalar reference, so results are bit-identical across variants.
// `weighted_sqdist_sum` is a reduction; lane-parallel variants reorder the
// summation and agree with the scalar reference to rounding.

#include <cstddef>
#include <vector>

namespace envi::simd {

using Index = std::ptrdiff_t;

struct ArdKernels {
  const char* name;

  // out(i,j) = sum_k w[k] * (x(i,k) - z(j,k))^2
  void (*sqdist)(const double* x, Index n, const double* z, Index m, Index d,
                 const double* w, double* out);

  // out[k] = sum_{i,j} g(i,j) * (x(i,k) - z(j,k))^2
  void (*weighted_sqdist_sum)(const double* x, Index n, const double* z, Index m,
                              Index d, const double* g, double* out);
};

const ArdKernels& scalar_kernels();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2.
const ArdKernels* avx2_kernels();

// Chosen once per process: AVX2 when available unless ENVI_SIMD=scalar.
const ArdKernels& active_kernels();

std::vector<const ArdKernels*> available_kernels();

}  // namespace envi::simd

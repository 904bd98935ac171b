#include <cstdlib>
#include <cstring>

#include "envi/simd/ard.hpp"

namespace envi::simd {

const ArdKernels& active_kernels() {
  static const ArdKernels& chosen = []() -> const ArdKernels& {
    const char* forced = std::getenv("ENVI_SIMD");
    if (forced != nullptr && std::strcmp(forced, "scalar") == 0) return scalar_kernels();
    if (const ArdKernels* k = avx2_kernels()) return *k;
    return scalar_kernels();
  }();
  return chosen;
}

std::vector<const ArdKernels*> available_kernels() {
  std::vector<const ArdKernels*> out{&scalar_kernels()};
  if (const ArdKernels* k = avx2_kernels()) out.push_back(k);
  return out;
}

}  // namespace envi::simd

#pragma once

// Forward kernels shared by the recorded (Var) and plain (Matrix) code paths.
// Both paths call exactly these functions, which keeps their values
// bit-identical.

#include <vector>

#include "envi/ad/tape.hpp"

namespace envi::ad::fwd {

struct CholeskyResult {
  Matrix factor;
  double jitter = 0.0;
};

// Lower Cholesky factor of sym(a) = (a + a^T)/2. On failure the diagonal gets
// `jitter`, then 10x, 100x, 1000x. Throws FactorizationError with the pivot of
// the last attempt.
CholeskyResult cholesky(const Matrix& a, double jitter);

// Plain factorization without retries; returns the failing pivot or -1.
Index cholesky_in_place(const Matrix& a, Matrix& factor);

// Evaluates one op. `aux` and `jitter` receive op-specific side results.
Matrix evaluate(Op op, const std::vector<const Matrix*>& in, const OpAttrs& attrs,
                Matrix& aux, double& jitter);

}  // namespace envi::ad::fwd

#pragma once

// Operation set, available on two backends with identical names:
//   * Var: recorded on the operand's tape, differentiable;
//   * Matrix: evaluated immediately, no tape.
// Algorithms written as templates over T ∈ {Matrix, Var} run on either.

#include <vector>

#include "envi/ad/tape.hpp"

namespace envi::ad {

// ---- recorded backend ------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var shift(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var cholesky(const Var& a, double jitter = kDefaultJitter);
Var tri_solve(const Var& lower, const Var& b, bool transpose_lower = false);
Var logdet(const Var& spd, double jitter = kDefaultJitter);
Var quad_form(const Var& x, const Var& a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice(const Var& a, Index row, Index col, Index rows, Index cols);
Var row_sum(const Var& a);
Var col_sum(const Var& a);
Var broadcast(const Var& a, Index rows, Index cols);
Var diag(const Var& a);
Var diag_embed(const Var& v);
Var lower_exp_diag(const Var& raw);
Var ard_kernel(const Var& x, const Var& z, const Var& log_lengthscale, const Var& log_variance);
Var detach(const Var& a);

// Constant on the same tape as `like`.
Var lift(const Var& like, Matrix value);
inline const Matrix& value_of(const Var& a) { return a.value(); }

// ---- plain backend ---------------------------------------------------------

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix mul(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix shift(const Matrix& a, double s);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix sum(const Matrix& a);
Matrix mean(const Matrix& a);
Matrix exp(const Matrix& a);
Matrix log(const Matrix& a);
Matrix sqrt(const Matrix& a);
Matrix square(const Matrix& a);
Matrix cholesky(const Matrix& a, double jitter = kDefaultJitter);
Matrix tri_solve(const Matrix& lower, const Matrix& b, bool transpose_lower = false);
Matrix logdet(const Matrix& spd, double jitter = kDefaultJitter);
Matrix quad_form(const Matrix& x, const Matrix& a);
Matrix concat_rows(const std::vector<Matrix>& parts);
Matrix concat_cols(const std::vector<Matrix>& parts);
Matrix slice(const Matrix& a, Index row, Index col, Index rows, Index cols);
Matrix row_sum(const Matrix& a);
Matrix col_sum(const Matrix& a);
Matrix broadcast(const Matrix& a, Index rows, Index cols);
Matrix diag(const Matrix& a);
Matrix diag_embed(const Matrix& v);
Matrix lower_exp_diag(const Matrix& raw);
Matrix ard_kernel(const Matrix& x, const Matrix& z, const Matrix& log_lengthscale,
                  const Matrix& log_variance);
Matrix detach(const Matrix& a);

inline Matrix lift(const Matrix& /*like*/, Matrix value) { return value; }
inline const Matrix& value_of(const Matrix& a) { return a; }

// ---- composites (both backends) -------------------------------------------

// A^{-1} B from the lower Cholesky factor of A.
template <class T>
T chol_solve(const T& lower, const T& b) {
  return tri_solve(lower, tri_solve(lower, b), true);
}

// 2 * sum(log(diag(L))) for a Cholesky factor L.
template <class T>
T logdet_from_factor(const T& lower) {
  return scale(sum(log(diag(lower))), 2.0);
}

template <class T>
T column(const T& a, Index c) {
  return slice(a, 0, c, value_of(a).rows(), 1);
}

template <class T>
T row(const T& a, Index r) {
  return slice(a, r, 0, 1, value_of(a).cols());
}

}  // namespace envi::ad

#include "envi/ad/ops.hpp"

#include "envi/ad/forward.hpp"
#include "envi/error.hpp"

namespace envi::ad {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw TapeError("op on an empty Var");
  return *a.tape();
}

Matrix eval(Op op, std::vector<const Matrix*> in, const OpAttrs& attrs = {}) {
  Matrix aux;
  double jitter = 0;
  return fwd::evaluate(op, in, attrs, aux, jitter);
}

OpAttrs scalar_attr(double s) {
  OpAttrs a;
  a.scalar = s;
  return a;
}

OpAttrs block_attr(Index row, Index col, Index rows, Index cols) {
  OpAttrs a;
  a.row = row;
  a.col = col;
  a.rows = rows;
  a.cols = cols;
  return a;
}

OpAttrs transpose_attr(bool t) {
  OpAttrs a;
  a.transpose = t;
  return a;
}

}  // namespace

Var add(const Var& a, const Var& b) { return tape_of(a).record(Op::kAdd, {a, b}); }
Var sub(const Var& a, const Var& b) { return tape_of(a).record(Op::kSub, {a, b}); }
Var mul(const Var& a, const Var& b) { return tape_of(a).record(Op::kMul, {a, b}); }
Var scale(const Var& a, double s) { return tape_of(a).record(Op::kScale, {a}, scalar_attr(s)); }
Var shift(const Var& a, double s) { return tape_of(a).record(Op::kShift, {a}, scalar_attr(s)); }
Var matmul(const Var& a, const Var& b) { return tape_of(a).record(Op::kMatMul, {a, b}); }
Var transpose(const Var& a) { return tape_of(a).record(Op::kTranspose, {a}); }
Var sum(const Var& a) { return tape_of(a).record(Op::kSum, {a}); }
Var mean(const Var& a) { return tape_of(a).record(Op::kMean, {a}); }
Var exp(const Var& a) { return tape_of(a).record(Op::kExp, {a}); }
Var log(const Var& a) { return tape_of(a).record(Op::kLog, {a}); }
Var sqrt(const Var& a) { return tape_of(a).record(Op::kSqrt, {a}); }
Var square(const Var& a) { return tape_of(a).record(Op::kSquare, {a}); }
Var cholesky(const Var& a, double jitter) {
  return tape_of(a).record(Op::kCholesky, {a}, scalar_attr(jitter));
}
Var tri_solve(const Var& lower, const Var& b, bool transpose_lower) {
  return tape_of(lower).record(Op::kTriSolve, {lower, b}, transpose_attr(transpose_lower));
}
Var logdet(const Var& spd, double jitter) {
  return tape_of(spd).record(Op::kLogDet, {spd}, scalar_attr(jitter));
}
Var quad_form(const Var& x, const Var& a) { return tape_of(x).record(Op::kQuadForm, {x, a}); }
Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concatenate-rows: no inputs");
  return tape_of(parts.front()).record(Op::kConcatRows, parts);
}
Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concatenate-cols: no inputs");
  return tape_of(parts.front()).record(Op::kConcatCols, parts);
}
Var slice(const Var& a, Index row, Index col, Index rows, Index cols) {
  return tape_of(a).record(Op::kSlice, {a}, block_attr(row, col, rows, cols));
}
Var row_sum(const Var& a) { return tape_of(a).record(Op::kRowSum, {a}); }
Var col_sum(const Var& a) { return tape_of(a).record(Op::kColSum, {a}); }
Var broadcast(const Var& a, Index rows, Index cols) {
  return tape_of(a).record(Op::kBroadcast, {a}, block_attr(0, 0, rows, cols));
}
Var diag(const Var& a) { return tape_of(a).record(Op::kDiag, {a}); }
Var diag_embed(const Var& v) { return tape_of(v).record(Op::kDiagEmbed, {v}); }
Var lower_exp_diag(const Var& raw) { return tape_of(raw).record(Op::kLowerExpDiag, {raw}); }
Var ard_kernel(const Var& x, const Var& z, const Var& log_lengthscale, const Var& log_variance) {
  return tape_of(x).record(Op::kArdKernel, {x, z, log_lengthscale, log_variance});
}
Var detach(const Var& a) { return tape_of(a).record(Op::kDetach, {a}); }
Var lift(const Var& like, Matrix value) { return tape_of(like).constant(std::move(value)); }

Matrix add(const Matrix& a, const Matrix& b) { return eval(Op::kAdd, {&a, &b}); }
Matrix sub(const Matrix& a, const Matrix& b) { return eval(Op::kSub, {&a, &b}); }
Matrix mul(const Matrix& a, const Matrix& b) { return eval(Op::kMul, {&a, &b}); }
Matrix scale(const Matrix& a, double s) { return eval(Op::kScale, {&a}, scalar_attr(s)); }
Matrix shift(const Matrix& a, double s) { return eval(Op::kShift, {&a}, scalar_attr(s)); }
Matrix matmul(const Matrix& a, const Matrix& b) { return eval(Op::kMatMul, {&a, &b}); }
Matrix transpose(const Matrix& a) { return eval(Op::kTranspose, {&a}); }
Matrix sum(const Matrix& a) { return eval(Op::kSum, {&a}); }
Matrix mean(const Matrix& a) { return eval(Op::kMean, {&a}); }
Matrix exp(const Matrix& a) { return eval(Op::kExp, {&a}); }
Matrix log(const Matrix& a) { return eval(Op::kLog, {&a}); }
Matrix sqrt(const Matrix& a) { return eval(Op::kSqrt, {&a}); }
Matrix square(const Matrix& a) { return eval(Op::kSquare, {&a}); }
Matrix cholesky(const Matrix& a, double jitter) {
  return eval(Op::kCholesky, {&a}, scalar_attr(jitter));
}
Matrix tri_solve(const Matrix& lower, const Matrix& b, bool transpose_lower) {
  return eval(Op::kTriSolve, {&lower, &b}, transpose_attr(transpose_lower));
}
Matrix logdet(const Matrix& spd, double jitter) {
  return eval(Op::kLogDet, {&spd}, scalar_attr(jitter));
}
Matrix quad_form(const Matrix& x, const Matrix& a) { return eval(Op::kQuadForm, {&x, &a}); }
Matrix concat_rows(const std::vector<Matrix>& parts) {
  std::vector<const Matrix*> in;
  for (const Matrix& p : parts) in.push_back(&p);
  return eval(Op::kConcatRows, in);
}
Matrix concat_cols(const std::vector<Matrix>& parts) {
  std::vector<const Matrix*> in;
  for (const Matrix& p : parts) in.push_back(&p);
  return eval(Op::kConcatCols, in);
}
Matrix slice(const Matrix& a, Index row, Index col, Index rows, Index cols) {
  return eval(Op::kSlice, {&a}, block_attr(row, col, rows, cols));
}
Matrix row_sum(const Matrix& a) { return eval(Op::kRowSum, {&a}); }
Matrix col_sum(const Matrix& a) { return eval(Op::kColSum, {&a}); }
Matrix broadcast(const Matrix& a, Index rows, Index cols) {
  return eval(Op::kBroadcast, {&a}, block_attr(0, 0, rows, cols));
}
Matrix diag(const Matrix& a) { return eval(Op::kDiag, {&a}); }
Matrix diag_embed(const Matrix& v) { return eval(Op::kDiagEmbed, {&v}); }
Matrix lower_exp_diag(const Matrix& raw) { return eval(Op::kLowerExpDiag, {&raw}); }
Matrix ard_kernel(const Matrix& x, const Matrix& z, const Matrix& log_lengthscale,
                  const Matrix& log_variance) {
  return eval(Op::kArdKernel, {&x, &z, &log_lengthscale, &log_variance});
}
Matrix detach(const Matrix& a) { return a; }

}  // namespace envi::ad

#include "envi/ad/forward.hpp"

#include <cmath>
#include <sstream>

#include "envi/error.hpp"
#include "envi/simd/ard.hpp"

namespace envi::ad::fwd {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(Op op, const std::vector<const Matrix*>& in,
                              const std::string& detail = {}) {
  std::ostringstream os;
  os << op_name(op) << ": incompatible shapes";
  for (std::size_t i = 0; i < in.size(); ++i) os << (i == 0 ? " " : ", ") << shape(*in[i]);
  if (!detail.empty()) os << " (" << detail << ")";
  throw ShapeError(os.str());
}

void require_arity(Op op, const std::vector<const Matrix*>& in, std::size_t n) {
  if (in.size() != n) {
    throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                     " inputs, got " + std::to_string(in.size()));
  }
}

void require_same(Op op, const std::vector<const Matrix*>& in) {
  if (in[0]->rows() != in[1]->rows() || in[0]->cols() != in[1]->cols()) shape_error(op, in);
}

void require_square(Op op, const std::vector<const Matrix*>& in, const Matrix& a) {
  if (a.rows() != a.cols()) shape_error(op, in, "square matrix required");
}

Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

Matrix ard_kernel(Op op, const std::vector<const Matrix*>& in) {
  const Matrix& x = *in[0];
  const Matrix& z = *in[1];
  const Matrix& log_ell = *in[2];
  const Matrix& log_var = *in[3];
  const Index d = x.cols();
  if (z.cols() != d || log_ell.rows() != 1 || log_ell.cols() != d || log_var.size() != 1) {
    shape_error(op, in);
  }
  if (x.hasNaN() || z.hasNaN()) throw NumericalError("ard_kernel: NaN input");
  Eigen::VectorXd w(d);
  for (Index k = 0; k < d; ++k) w[k] = std::exp(-2.0 * log_ell(0, k));
  Matrix out(x.rows(), z.rows());
  simd::active_kernels().sqdist(x.data(), x.rows(), z.data(), z.rows(), d, w.data(),
                                out.data());
  const double variance = std::exp(log_var(0, 0));
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = variance * std::exp(-0.5 * out.data()[i]);
  return out;
}

}  // namespace

Index cholesky_in_place(const Matrix& a, Matrix& factor) {
  const Index n = a.rows();
  factor.setZero(n, n);
  for (Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - factor.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0) || !std::isfinite(pivot)) return j;
    const double ljj = std::sqrt(pivot);
    factor(j, j) = ljj;
    const Index rest = n - j - 1;
    if (rest > 0) {
      factor.col(j).tail(rest) =
          (a.col(j).tail(rest) - factor.block(j + 1, 0, rest, j) * factor.row(j).head(j).transpose()) /
          ljj;
    }
  }
  return -1;
}

CholeskyResult cholesky(const Matrix& a, double jitter) {
  if (a.rows() != a.cols()) {
    throw ShapeError("cholesky: square matrix required, got " + shape(a));
  }
  const Matrix sym = symmetrized(a);
  CholeskyResult result;
  Index pivot = cholesky_in_place(sym, result.factor);
  if (pivot < 0) return result;
  double added = jitter;
  for (int attempt = 0; attempt < 4 && jitter > 0.0; ++attempt, added *= 10.0) {
    Matrix shifted = sym;
    shifted.diagonal().array() += added;
    pivot = cholesky_in_place(shifted, result.factor);
    if (pivot < 0) {
      result.jitter = added;
      return result;
    }
  }
  throw FactorizationError("cholesky: matrix " + shape(a) + " is not positive definite", pivot);
}

Matrix evaluate(Op op, const std::vector<const Matrix*>& in, const OpAttrs& attrs, Matrix& aux,
                double& jitter) {
  jitter = 0.0;
  switch (op) {
    case Op::kLeaf:
    case Op::kConstant:
      throw TapeError("evaluate: leaves and constants carry their own value");
    case Op::kAdd:
      require_arity(op, in, 2);
      require_same(op, in);
      return *in[0] + *in[1];
    case Op::kSub:
      require_arity(op, in, 2);
      require_same(op, in);
      return *in[0] - *in[1];
    case Op::kMul:
      require_arity(op, in, 2);
      require_same(op, in);
      return in[0]->cwiseProduct(*in[1]);
    case Op::kScale:
      require_arity(op, in, 1);
      return attrs.scalar * *in[0];
    case Op::kShift:
      require_arity(op, in, 1);
      return (in[0]->array() + attrs.scalar).matrix();
    case Op::kMatMul:
      require_arity(op, in, 2);
      if (in[0]->cols() != in[1]->rows()) shape_error(op, in);
      return *in[0] * *in[1];
    case Op::kTranspose:
      require_arity(op, in, 1);
      return in[0]->transpose();
    case Op::kSum:
      require_arity(op, in, 1);
      return Matrix::Constant(1, 1, in[0]->sum());
    case Op::kMean:
      require_arity(op, in, 1);
      if (in[0]->size() == 0) shape_error(op, in, "empty input");
      return Matrix::Constant(1, 1, in[0]->mean());
    case Op::kExp:
      require_arity(op, in, 1);
      return in[0]->array().exp().matrix();
    case Op::kLog:
      require_arity(op, in, 1);
      return in[0]->array().log().matrix();
    case Op::kSqrt:
      require_arity(op, in, 1);
      return in[0]->array().sqrt().matrix();
    case Op::kSquare:
      require_arity(op, in, 1);
      return in[0]->array().square().matrix();
    case Op::kCholesky: {
      require_arity(op, in, 1);
      CholeskyResult r = cholesky(*in[0], attrs.scalar);
      jitter = r.jitter;
      return std::move(r.factor);
    }
    case Op::kTriSolve: {
      require_arity(op, in, 2);
      const Matrix& l = *in[0];
      require_square(op, in, l);
      if (l.rows() != in[1]->rows()) shape_error(op, in);
      if (attrs.transpose) return l.triangularView<Eigen::Lower>().transpose().solve(*in[1]);
      return l.triangularView<Eigen::Lower>().solve(*in[1]);
    }
    case Op::kLogDet: {
      require_arity(op, in, 1);
      require_square(op, in, *in[0]);
      CholeskyResult r = cholesky(*in[0], attrs.scalar);
      jitter = r.jitter;
      aux = std::move(r.factor);
      return Matrix::Constant(1, 1, 2.0 * aux.diagonal().array().log().sum());
    }
    case Op::kQuadForm: {
      require_arity(op, in, 2);
      const Matrix& x = *in[0];
      const Matrix& a = *in[1];
      require_square(op, in, a);
      if (a.rows() != x.rows()) shape_error(op, in);
      return x.transpose() * (a * x);
    }
    case Op::kConcatRows: {
      if (in.empty()) shape_error(op, in, "no inputs");
      Index rows = 0;
      for (const Matrix* m : in) {
        if (m->cols() != in[0]->cols()) shape_error(op, in);
        rows += m->rows();
      }
      Matrix out(rows, in[0]->cols());
      Index at = 0;
      for (const Matrix* m : in) {
        out.middleRows(at, m->rows()) = *m;
        at += m->rows();
      }
      return out;
    }
    case Op::kConcatCols: {
      if (in.empty()) shape_error(op, in, "no inputs");
      Index cols = 0;
      for (const Matrix* m : in) {
        if (m->rows() != in[0]->rows()) shape_error(op, in);
        cols += m->cols();
      }
      Matrix out(in[0]->rows(), cols);
      Index at = 0;
      for (const Matrix* m : in) {
        out.middleCols(at, m->cols()) = *m;
        at += m->cols();
      }
      return out;
    }
    case Op::kSlice: {
      require_arity(op, in, 1);
      const Matrix& a = *in[0];
      if (attrs.row < 0 || attrs.col < 0 || attrs.rows < 0 || attrs.cols < 0 ||
          attrs.row + attrs.rows > a.rows() || attrs.col + attrs.cols > a.cols()) {
        shape_error(op, in, "block out of range");
      }
      return a.block(attrs.row, attrs.col, attrs.rows, attrs.cols);
    }
    case Op::kRowSum:
      require_arity(op, in, 1);
      return in[0]->rowwise().sum();
    case Op::kColSum:
      require_arity(op, in, 1);
      return in[0]->colwise().sum();
    case Op::kBroadcast: {
      require_arity(op, in, 1);
      const Matrix& a = *in[0];
      const bool rows_ok = a.rows() == attrs.rows || a.rows() == 1;
      const bool cols_ok = a.cols() == attrs.cols || a.cols() == 1;
      if (!rows_ok || !cols_ok) shape_error(op, in, "cannot broadcast");
      return a.replicate(attrs.rows / a.rows(), attrs.cols / a.cols());
    }
    case Op::kDiag:
      require_arity(op, in, 1);
      require_square(op, in, *in[0]);
      return in[0]->diagonal();
    case Op::kDiagEmbed: {
      require_arity(op, in, 1);
      if (in[0]->cols() != 1) shape_error(op, in, "column vector required");
      Matrix out = Matrix::Zero(in[0]->rows(), in[0]->rows());
      out.diagonal() = *in[0];
      return out;
    }
    case Op::kLowerExpDiag: {
      require_arity(op, in, 1);
      require_square(op, in, *in[0]);
      Matrix out = in[0]->triangularView<Eigen::StrictlyLower>();
      out.diagonal() = in[0]->diagonal().array().exp().matrix();
      return out;
    }
    case Op::kArdKernel:
      require_arity(op, in, 4);
      return ard_kernel(op, in);
    case Op::kDetach:
      require_arity(op, in, 1);
      return *in[0];
  }
  throw TapeError("evaluate: unknown op");
}

}  // namespace envi::ad::fwd

#include "envi/ad/tape.hpp"

#include <algorithm>

#include "envi/ad/forward.hpp"
#include "envi/error.hpp"
#include "envi/simd/ard.hpp"

namespace envi::ad {
namespace {

void accumulate(Matrix& slot, const Matrix& contribution) {
  if (slot.size() == 0) {
    slot = contribution;
  } else {
    slot += contribution;
  }
}

// Lower triangle with the diagonal halved.
Matrix phi(const Matrix& a) {
  Matrix out = a.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

Matrix cholesky_vjp(const Matrix& l, const Matrix& l_bar) {
  const Matrix lower_bar = l_bar.triangularView<Eigen::Lower>();
  Matrix p = phi(l.transpose() * lower_bar);
  // L^{-T} P L^{-1}
  const auto lt = l.triangularView<Eigen::Lower>().transpose();
  Matrix tmp = lt.solve(p);                                // L^{-T} P
  Matrix g = lt.solve(tmp.transpose()).transpose();        // (L^{-T} (L^{-T} P)^T)^T
  return 0.5 * (g + g.transpose());
}

Matrix spd_inverse_from_factor(const Matrix& l) {
  const Index n = l.rows();
  Matrix inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  return inv.transpose() * inv;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "elementwise-multiply";
    case Op::kScale: return "scalar-multiply";
    case Op::kShift: return "shift";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kExp: return "elementwise-exp";
    case Op::kLog: return "elementwise-log";
    case Op::kSqrt: return "elementwise-sqrt";
    case Op::kSquare: return "elementwise-square";
    case Op::kCholesky: return "cholesky";
    case Op::kTriSolve: return "lower-triangular-solve";
    case Op::kLogDet: return "log-determinant";
    case Op::kQuadForm: return "quadratic-form";
    case Op::kConcatRows: return "concatenate-rows";
    case Op::kConcatCols: return "concatenate-cols";
    case Op::kSlice: return "slice";
    case Op::kRowSum: return "row-sum";
    case Op::kColSum: return "col-sum";
    case Op::kBroadcast: return "broadcast";
    case Op::kDiag: return "diag";
    case Op::kDiagEmbed: return "diag-embed";
    case Op::kLowerExpDiag: return "lower-exp-diag";
    case Op::kArdKernel: return "ard-kernel";
    case Op::kDetach: return "detach";
  }
  return "unknown";
}

const Matrix& Var::value() const {
  if (!valid()) throw TapeError("Var: use of an empty handle");
  return tape_->node(id_).value;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ShapeError("Var::scalar: node is " + std::to_string(v.rows()) + "x" +
                     std::to_string(v.cols()));
  }
  return v(0, 0);
}

Var Tape::push(Node node) {
  if (consumed_) throw TapeError("tape: cannot record on a consumed tape");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::leaf(const std::string& name, Matrix value) {
  if (leaves_.count(name) != 0) throw TapeError("tape: duplicate leaf '" + name + "'");
  Node node;
  node.op = Op::kLeaf;
  node.value = std::move(value);
  node.needs_grad = true;
  Var v = push(std::move(node));
  leaves_[name] = v.id();
  return v;
}

Var Tape::constant(Matrix value) {
  Node node;
  node.op = Op::kConstant;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, const OpAttrs& attrs) {
  return record(op, std::vector<Var>(inputs), attrs);
}

Var Tape::record(Op op, const std::vector<Var>& inputs, const OpAttrs& attrs) {
  Node node;
  node.op = op;
  node.attrs = attrs;
  node.parents.reserve(inputs.size());
  std::vector<const Matrix*> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw TapeError(std::string(op_name(op)) + ": input from another tape");
    node.parents.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(v.id())].needs_grad;
    values.push_back(&nodes_[static_cast<std::size_t>(v.id())].value);
  }
  if (op == Op::kDetach) node.needs_grad = false;
  node.value = fwd::evaluate(op, values, attrs, node.aux, node.jitter_used);
  return push(std::move(node));
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
  consumed_ = false;
}

bool Tape::replay_matches() const {
  std::vector<Matrix> values(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf || n.op == Op::kConstant) {
      values[i] = n.value;
    } else {
      std::vector<const Matrix*> in;
      for (NodeId p : n.parents) in.push_back(&values[static_cast<std::size_t>(p)]);
      Matrix aux;
      double jitter = 0;
      values[i] = fwd::evaluate(n.op, in, n.attrs, aux, jitter);
    }
    if (values[i].rows() != n.value.rows() || values[i].cols() != n.value.cols()) return false;
    if (!std::equal(values[i].data(), values[i].data() + values[i].size(), n.value.data())) {
      return false;
    }
  }
  return true;
}

Gradients Tape::backward(const Var& root) {
  if (consumed_) throw TapeError("backward: tape already consumed");
  if (root.tape() != this) throw TapeError("backward: root belongs to another tape");
  if (root.value().size() != 1) {
    throw TapeError("backward: root must be 1x1, got " + std::to_string(root.rows()) + "x" +
                    std::to_string(root.cols()));
  }
  consumed_ = true;

  for (Node& n : nodes_) n.adjoint.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id())].adjoint = Matrix::Ones(1, 1);

  for (NodeId i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.adjoint.size() == 0 || !n.needs_grad) continue;
    if (n.op == Op::kLeaf || n.op == Op::kConstant || n.op == Op::kDetach) continue;

    const Matrix& g = n.adjoint;
    auto parent = [&](int k) -> Node& {
      return nodes_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(k)])];
    };
    auto wants = [&](int k) { return parent(k).needs_grad; };
    auto give = [&](int k, const Matrix& contribution) {
      if (wants(k)) accumulate(parent(k).adjoint, contribution);
    };

    switch (n.op) {
      case Op::kAdd:
        give(0, g);
        give(1, g);
        break;
      case Op::kSub:
        give(0, g);
        if (wants(1)) give(1, -g);
        break;
      case Op::kMul:
        if (wants(0)) give(0, g.cwiseProduct(parent(1).value));
        if (wants(1)) give(1, g.cwiseProduct(parent(0).value));
        break;
      case Op::kScale:
        give(0, n.attrs.scalar * g);
        break;
      case Op::kShift:
        give(0, g);
        break;
      case Op::kMatMul:
        if (wants(0)) give(0, g * parent(1).value.transpose());
        if (wants(1)) give(1, parent(0).value.transpose() * g);
        break;
      case Op::kTranspose:
        give(0, g.transpose());
        break;
      case Op::kSum:
        give(0, Matrix::Constant(parent(0).value.rows(), parent(0).value.cols(), g(0, 0)));
        break;
      case Op::kMean: {
        const Matrix& a = parent(0).value;
        give(0, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
        break;
      }
      case Op::kExp:
        give(0, g.cwiseProduct(n.value));
        break;
      case Op::kLog:
        give(0, g.cwiseQuotient(parent(0).value));
        break;
      case Op::kSqrt:
        give(0, (g.array() / (2.0 * n.value.array())).matrix());
        break;
      case Op::kSquare:
        give(0, 2.0 * g.cwiseProduct(parent(0).value));
        break;
      case Op::kCholesky:
        give(0, cholesky_vjp(n.value, g));
        break;
      case Op::kTriSolve: {
        const Matrix& l = parent(0).value;
        const auto tri = l.triangularView<Eigen::Lower>();
        if (!n.attrs.transpose) {
          Matrix b_bar = tri.transpose().solve(g);
          if (wants(0)) {
            Matrix l_bar = -(b_bar * n.value.transpose());
            give(0, l_bar.triangularView<Eigen::Lower>().toDenseMatrix());
          }
          give(1, b_bar);
        } else {
          Matrix b_bar = tri.solve(g);
          if (wants(0)) {
            Matrix l_bar = -(n.value * b_bar.transpose());
            give(0, l_bar.triangularView<Eigen::Lower>().toDenseMatrix());
          }
          give(1, b_bar);
        }
        break;
      }
      case Op::kLogDet:
        give(0, g(0, 0) * spd_inverse_from_factor(n.aux));
        break;
      case Op::kQuadForm: {
        const Matrix& x = parent(0).value;
        const Matrix& a = parent(1).value;
        if (wants(0)) give(0, a * x * g.transpose() + a.transpose() * x * g);
        if (wants(1)) give(1, x * g * x.transpose());
        break;
      }
      case Op::kConcatRows: {
        Index at = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Index r = parent(static_cast<int>(k)).value.rows();
          if (wants(static_cast<int>(k))) give(static_cast<int>(k), g.middleRows(at, r));
          at += r;
        }
        break;
      }
      case Op::kConcatCols: {
        Index at = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Index c = parent(static_cast<int>(k)).value.cols();
          if (wants(static_cast<int>(k))) give(static_cast<int>(k), g.middleCols(at, c));
          at += c;
        }
        break;
      }
      case Op::kSlice: {
        const Matrix& a = parent(0).value;
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.block(n.attrs.row, n.attrs.col, n.attrs.rows, n.attrs.cols) = g;
        give(0, full);
        break;
      }
      case Op::kRowSum:
        give(0, g.replicate(1, parent(0).value.cols()));
        break;
      case Op::kColSum:
        give(0, g.replicate(parent(0).value.rows(), 1));
        break;
      case Op::kBroadcast: {
        const Matrix& a = parent(0).value;
        Matrix reduced = g;
        if (a.rows() == 1 && g.rows() != 1) reduced = reduced.colwise().sum().eval();
        if (a.cols() == 1 && g.cols() != 1) reduced = reduced.rowwise().sum().eval();
        give(0, reduced);
        break;
      }
      case Op::kDiag: {
        const Matrix& a = parent(0).value;
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.diagonal() = g;
        give(0, full);
        break;
      }
      case Op::kDiagEmbed:
        give(0, g.diagonal());
        break;
      case Op::kLowerExpDiag: {
        Matrix raw_bar = g.triangularView<Eigen::StrictlyLower>();
        raw_bar.diagonal() = g.diagonal().cwiseProduct(n.value.diagonal());
        give(0, raw_bar);
        break;
      }
      case Op::kArdKernel: {
        const Matrix& x = parent(0).value;
        const Matrix& z = parent(1).value;
        const Matrix& log_ell = parent(2).value;
        const Index d = x.cols();
        const Matrix weighted = g.cwiseProduct(n.value);  // K_bar ⊙ K
        Eigen::RowVectorXd w(d);
        for (Index k = 0; k < d; ++k) w[k] = std::exp(-2.0 * log_ell(0, k));
        if (wants(0)) {
          const Eigen::VectorXd row_sums = weighted.rowwise().sum();
          Matrix gx = weighted * z;
          gx -= (x.array().colwise() * row_sums.array()).matrix();
          gx.array().rowwise() *= w.array();
          give(0, gx);
        }
        if (wants(1)) {
          const Eigen::RowVectorXd col_sums = weighted.colwise().sum();
          Matrix gz = weighted.transpose() * x;
          gz -= (z.array().colwise() * col_sums.transpose().array()).matrix();
          gz.array().rowwise() *= w.array();
          give(1, gz);
        }
        if (wants(2)) {
          Eigen::RowVectorXd gl(d);
          simd::active_kernels().weighted_sqdist_sum(x.data(), x.rows(), z.data(), z.rows(), d,
                                                     weighted.data(), gl.data());
          give(2, gl.cwiseProduct(w));
        }
        if (wants(3)) give(3, Matrix::Constant(1, 1, weighted.sum()));
        break;
      }
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kDetach:
        break;
    }
  }

  Gradients grads;
  for (const auto& [name, id] : leaves_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    grads[name] = n.adjoint.size() == 0 ? Matrix::Zero(n.value.rows(), n.value.cols()) : n.adjoint;
  }
  return grads;
}

}  // namespace envi::ad

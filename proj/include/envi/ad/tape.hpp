#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation as a Node in execution order. Each node keeps
// its forward value, the ids of its parents and the attributes needed to
// recompute it, so the whole tape can be replayed and differentiated without
// closures. Backward visits nodes in strict reverse tape order and sums
// adjoints into parents.

#include <cstdint>
#include <deque>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace envi::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using NodeId = std::int32_t;

inline constexpr double kDefaultJitter = 1e-6;

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,         // elementwise
  kScale,       // attrs.scalar * a
  kShift,       // a + attrs.scalar
  kMatMul,
  kTranspose,
  kSum,         // -> 1x1
  kMean,        // -> 1x1
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kCholesky,    // lower factor of sym(a), jitter escalation from attrs.scalar
  kTriSolve,    // L^{-1} B, or L^{-T} B when attrs.transpose
  kLogDet,      // log det sym(a) via Cholesky
  kQuadForm,    // X^T A X
  kConcatRows,
  kConcatCols,
  kSlice,
  kRowSum,      // r×c -> r×1
  kColSum,      // r×c -> 1×c
  kBroadcast,   // 1×1, 1×c or r×1 -> attrs.rows × attrs.cols
  kDiag,        // n×n -> n×1
  kDiagEmbed,   // n×1 -> n×n
  kLowerExpDiag,
  kArdKernel,   // (X, Z, log_lengthscale 1×d, log_variance 1×1) -> n×m
  kDetach,      // identity forward, blocks gradients
};

const char* op_name(Op op);

struct OpAttrs {
  double scalar = 0.0;
  Index row = 0;
  Index col = 0;
  Index rows = 0;
  Index cols = 0;
  bool transpose = false;
};

struct Node {
  Op op = Op::kConstant;
  std::vector<NodeId> parents;
  OpAttrs attrs;
  Matrix value;
  Matrix adjoint;
  Matrix aux;              // Cholesky factor cached by kLogDet
  double jitter_used = 0;  // diagonal jitter actually applied (kCholesky, kLogDet)
  bool needs_grad = false;
};

using Gradients = std::map<std::string, Matrix>;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives
// and has not been cleared.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Named differentiable input. Names must be unique on a tape.
  Var leaf(const std::string& name, Matrix value);

  // Non-differentiable input.
  Var constant(Matrix value);

  // Evaluates `op` on the inputs and appends the result.
  // Throws ShapeError / FactorizationError / NumericalError from the forward.
  Var record(Op op, std::initializer_list<Var> inputs, const OpAttrs& attrs = {});
  Var record(Op op, const std::vector<Var>& inputs, const OpAttrs& attrs = {});

  // Gradient of a 1×1 root with respect to every named leaf. A tape can be
  // differentiated once; afterwards it is consumed.
  Gradients backward(const Var& root);

  // Recomputes every node from leaves and constants and reports whether each
  // recomputed value is bit-identical to the stored one.
  bool replay_matches() const;

  void clear();

  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const std::map<std::string, NodeId>& leaves() const { return leaves_; }

 private:
  Var push(Node node);

  std::deque<Node> nodes_;  // deque: Var::value() references stay valid while recording
  std::map<std::string, NodeId> leaves_;
  bool consumed_ = false;
};

}  // namespace envi::ad

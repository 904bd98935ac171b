#include "envi/models/params.hpp"

namespace envi::models {

ModelView plain_view(const ParamMap& params, const Matrix& emission) {
  const Index dx = emission.cols();
  return assemble_view<Matrix>(dx, emission, [&](const std::string& name) -> Matrix {
    const auto it = params.find(name);
    if (it == params.end()) throw InputError("missing parameter " + name);
    return it->second;
  });
}

ModelViewT<ad::Var> record_view(ad::Tape& tape, const ParamMap& params,
                                const std::set<std::string>& frozen, const Matrix& emission) {
  const Index dx = emission.cols();
  return assemble_view<ad::Var>(dx, emission, [&](const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw InputError("missing parameter " + name);
    return frozen.count(name) ? tape.constant(it->second) : tape.leaf(name, it->second);
  });
}

ModelViewT<ad::Var> leaf_view(const ad::LeafMap& leaves, const Matrix& emission) {
  const Index dx = emission.cols();
  return assemble_view<ad::Var>(dx, emission, [&](const std::string& name) {
    const auto it = leaves.find(name);
    if (it == leaves.end()) throw InputError("missing parameter " + name);
    return it->second;
  });
}

void validate_params(const ParamMap& params, Index dx, Index dy, Index m) {
  const auto check = [&](const std::string& name, Index rows, Index cols) {
    const auto it = params.find(name);
    if (it == params.end()) throw InputError("missing parameter " + name);
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw ShapeError("parameter " + name + " is " + std::to_string(it->second.rows()) + "x" +
                       std::to_string(it->second.cols()) + ", expected " + std::to_string(rows) +
                       "x" + std::to_string(cols));
    }
    if (!it->second.allFinite()) throw NumericalError("parameter " + name + " is not finite");
  };
  check(names::kLogVariance, 1, dx);
  check(names::kLogLengthscale, dx, dx);
  check(names::kLogQ, 1, dx);
  check(names::kLogR, 1, dy);
  check(names::kZ, m, dx);
  check(names::kInducingMean, m, dx);
  for (Index d = 0; d < dx; ++d) check(names::inducing_chol(d), m, m);
  check(names::kX0Mean, dx, 1);
  check(names::kX0Chol, dx, dx);
}

}  // namespace envi::models

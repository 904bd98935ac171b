#pragma once

#include <functional>
#include <map>
#include <string>

#include "envi/ad/tape.hpp"

namespace envi::ad {

using ParamMap = std::map<std::string, Matrix>;
using LeafMap = std::map<std::string, Var>;

// Builds a scalar on `tape` from leaves registered under the ParamMap names.
using ScalarProgram = std::function<Var(Tape& tape, const LeafMap& leaves)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients with central differences in every
// coordinate of every parameter:
//   max |autodiff - fd| / (|fd| + 1e-12).
// Throws NumericalError naming the coordinate if an evaluation is non-finite.
GradCheckReport grad_check(const ScalarProgram& program, const ParamMap& point,
                           double step = 1e-5);

// Value of the program at `point` without differentiating.
double evaluate_program(const ScalarProgram& program, const ParamMap& point);

}  // namespace envi::ad

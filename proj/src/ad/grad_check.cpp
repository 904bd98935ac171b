#include "envi/ad/grad_check.hpp"

#include <cmath>

#include "envi/error.hpp"

namespace envi::ad {
namespace {

Var build(Tape& tape, const ScalarProgram& program, const ParamMap& point) {
  LeafMap leaves;
  for (const auto& [name, value] : point) leaves.emplace(name, tape.leaf(name, value));
  return program(tape, leaves);
}

}  // namespace

double evaluate_program(const ScalarProgram& program, const ParamMap& point) {
  Tape tape;
  return build(tape, program, point).scalar();
}

GradCheckReport grad_check(const ScalarProgram& program, const ParamMap& point, double step) {
  Tape tape;
  Var root = build(tape, program, point);
  if (!std::isfinite(root.scalar())) throw NumericalError("grad_check: non-finite value at point");
  const Gradients analytic = tape.backward(root);

  GradCheckReport report;
  for (const auto& [name, value] : point) {
    const Matrix& grad = analytic.at(name);
    for (Index i = 0; i < value.size(); ++i) {
      ParamMap shifted = point;
      shifted[name].data()[i] = value.data()[i] + step;
      const double up = evaluate_program(program, shifted);
      shifted[name].data()[i] = value.data()[i] - step;
      const double down = evaluate_program(program, shifted);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("grad_check: non-finite value perturbing " + name + "[" +
                             std::to_string(i) + "]");
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(grad.data()[i] - numeric) / (std::abs(numeric) + 1e-12);
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = grad.data()[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace envi::ad

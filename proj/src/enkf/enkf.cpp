#include "envi/enkf/enkf.hpp"

namespace envi::enkf {

GaussianBelief condition_on_observation(const GaussianBelief& pred, const EmissionModel& emission,
                                        const Matrix& y) {
  const Matrix y_col = y.cols() == 1 ? y : Matrix(y.transpose());
  const auto inn = innovation(pred, emission, true, 0.0);
  const Matrix gain = ad::chol_solve(inn.factor, inn.cp).transpose();
  GaussianBelief out;
  out.mean = pred.mean + gain * (y_col - emission.c * pred.mean);
  out.cov = pred.cov - gain * inn.cp;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

ObjectiveIdentity objective_identity(const GaussianBelief& pred, const EmissionModel& emission,
                                     const Matrix& y) {
  const Matrix y_col = y.cols() == 1 ? y : Matrix(y.transpose());
  const GaussianBelief post = condition_on_observation(pred, emission, y_col);
  const Matrix r = noise_cov(emission);
  const Matrix r_factor = ad::cholesky(r, 0.0);

  ObjectiveIdentity out;
  out.lhs = step_log_likelihood(pred, emission, y_col, LikelihoodVariant::kWithR, 0.0)(0, 0);
  const Matrix residual = y_col - emission.c * post.mean;
  const double fit = gaussian_logpdf_from_factor(residual, r_factor)(0, 0);
  const Matrix spread = ad::tri_solve(r_factor, Matrix(emission.c * post.cov * emission.c.transpose()));
  const Matrix whitened = ad::tri_solve(r_factor, Matrix(spread.transpose()));
  out.reconstruction = fit - 0.5 * whitened.trace();
  out.kl = gp::kl_gaussian(post, pred, 0.0)(0, 0);
  out.rhs = out.reconstruction - out.kl;
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

}  // namespace envi::enkf

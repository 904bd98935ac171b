#pragma once

// Differentiable perturbed-observation ensemble Kalman filter. Particles are
// stored as rows of an N×dx matrix; noise is always passed in as standard
// normal draws so that the same draws can be replayed on either backend.

#include <cmath>
#include <numbers>

#include "envi/gp/gp.hpp"

namespace envi::enkf {

using ad::Index;
using ad::Matrix;
using gp::GaussianBeliefT;
using gp::MomentsT;

// How the per-step marginal likelihood treats the observation noise.
enum class LikelihoodVariant {
  kWithR,    // log N(y | C m, C P C^T + R)
  kLiteral,  // log N(y | C m, C P C^T)
};

struct FilterConfig {
  double ensemble_jitter = 1e-6;  // added to the sample covariance
  double solve_jitter = ad::kDefaultJitter;
  LikelihoodVariant likelihood = LikelihoodVariant::kWithR;
};

// Linear emission with a fixed C and diagonal R = diag(exp(log_r)).
template <class T>
struct EmissionModelT {
  Matrix c;  // dy×dx
  T log_r;   // 1×dy
};

using EmissionModel = EmissionModelT<Matrix>;
using GaussianBelief = GaussianBeliefT<Matrix>;

template <class T>
T noise_cov(const EmissionModelT<T>& emission) {
  return ad::diag_embed(ad::transpose(ad::exp(emission.log_r)));
}

// x̄ = ξ + sqrt(Ξ) ⊙ ε from transition moments and N×dx standard normals.
template <class T>
T propagate_ensemble(const MomentsT<T>& moments, const Matrix& eps) {
  const Matrix& var = ad::value_of(moments.var);
  if (eps.rows() != var.rows() || eps.cols() != var.cols()) {
    throw ShapeError("propagate_ensemble: eps is " + std::to_string(eps.rows()) + "x" +
                     std::to_string(eps.cols()) + ", expected " + std::to_string(var.rows()) + "x" +
                     std::to_string(var.cols()));
  }
  if (!var.allFinite()) throw NumericalError("propagate_ensemble: non-finite predictive variance");
  const double lowest = var.minCoeff();
  if (lowest < -1e-10) {
    throw NumericalError("propagate_ensemble: negative predictive variance " + std::to_string(lowest));
  }
  T safe_var = moments.var;
  if (lowest <= 0.0) {
    // Round-off below zero: lift the offending entries to a tiny positive
    // value without changing the gradient path.
    const Matrix offset = (var.array() <= 0.0).select(1e-300 - var.array(), 0.0);
    safe_var = ad::add(moments.var, ad::lift(moments.var, offset));
  }
  return ad::add(moments.mean, ad::mul(ad::sqrt(safe_var), ad::lift(moments.mean, eps)));
}

// Generic form taking a transition provider x -> MomentsT<T>.
template <class T, class Provider>
T propagate_ensemble(const T& particles, const Provider& transition, const Matrix& eps) {
  return propagate_ensemble<T>(transition(particles), eps);
}

// Sample mean and (N-1)-normalised covariance plus jitter·I.
template <class T>
GaussianBeliefT<T> ensemble_moments(const T& particles, double ensemble_jitter = 1e-6) {
  const Index n = ad::value_of(particles).rows();
  const Index d = ad::value_of(particles).cols();
  if (n < 2) throw ShapeError("ensemble_moments: need at least 2 particles, got " + std::to_string(n));
  const T mean_row = ad::scale(ad::col_sum(particles), 1.0 / static_cast<double>(n));
  const T centered = ad::sub(particles, ad::broadcast(mean_row, n, d));
  T cov = ad::scale(ad::matmul(ad::transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
  cov = ad::add(cov, ad::lift(cov, ensemble_jitter * Matrix::Identity(d, d)));
  return {ad::transpose(mean_row), cov};
}

// Innovation covariance C P C^T (+ R) and its factor.
template <class T>
struct InnovationT {
  T c;       // C lifted onto the backend
  T cp;      // C P, dy×dx
  T factor;  // chol(C P C^T + R)
};

template <class T>
InnovationT<T> innovation(const GaussianBeliefT<T>& pred, const EmissionModelT<T>& emission,
                          bool with_noise, double jitter) {
  const Index dx = ad::value_of(pred.mean).rows();
  if (emission.c.cols() != dx || ad::value_of(emission.log_r).cols() != emission.c.rows()) {
    throw ShapeError("innovation: C is " + std::to_string(emission.c.rows()) + "x" +
                     std::to_string(emission.c.cols()) + " for a " + std::to_string(dx) +
                     "-dimensional state");
  }
  InnovationT<T> out;
  out.c = ad::lift(pred.mean, emission.c);
  out.cp = ad::matmul(out.c, pred.cov);
  T s = ad::matmul(out.cp, ad::transpose(out.c));
  if (with_noise) s = ad::add(s, noise_cov(emission));
  out.factor = ad::cholesky(s, jitter);
  return out;
}

// G = P C^T (C P C^T + R)^{-1}, dx×dy, via a Cholesky solve.
template <class T>
T kalman_gain(const GaussianBeliefT<T>& pred, const EmissionModelT<T>& emission,
              double jitter = ad::kDefaultJitter) {
  const auto inn = innovation(pred, emission, true, jitter);
  return ad::transpose(ad::chol_solve(inn.factor, inn.cp));
}

// x = x̄ + (y + R^{1/2} ε - C x̄) G^T for every particle; eps is N×dy.
template <class T>
T update_ensemble(const T& particles, const Matrix& y, const T& gain,
                  const EmissionModelT<T>& emission, const Matrix& eps) {
  const Index n = ad::value_of(particles).rows();
  const Index dy = emission.c.rows();
  const Matrix y_row = y.rows() == 1 ? y : Matrix(y.transpose());
  if (y_row.rows() != 1 || y_row.cols() != dy) throw ShapeError("update_ensemble: y must have dy entries");
  if (eps.rows() != n || eps.cols() != dy) throw ShapeError("update_ensemble: eps must be N×dy");
  if (ad::value_of(gain).rows() != ad::value_of(particles).cols() || ad::value_of(gain).cols() != dy) {
    throw ShapeError("update_ensemble: gain must be dx×dy");
  }
  const T noise = ad::mul(ad::broadcast(ad::sqrt(ad::exp(emission.log_r)), n, dy),
                          ad::lift(particles, eps));
  const T predicted_obs = ad::matmul(particles, ad::lift(particles, Matrix(emission.c.transpose())));
  const T target = ad::add(ad::lift(particles, y_row.replicate(n, 1)), noise);
  return ad::add(particles, ad::matmul(ad::sub(target, predicted_obs), ad::transpose(gain)));
}

template <class T>
T gaussian_logpdf_from_factor(const T& residual, const T& factor) {
  const double k = static_cast<double>(ad::value_of(residual).rows());
  const T white = ad::tri_solve(factor, residual);
  const T quad = ad::sum(ad::square(white));
  return ad::scale(ad::shift(ad::add(quad, ad::logdet_from_factor(factor)),
                             k * std::log(2.0 * std::numbers::pi)),
                   -0.5);
}

// log N(y | C m̄, C P̄ C^T + R), or without R for the literal variant.
template <class T>
T step_log_likelihood(const GaussianBeliefT<T>& pred, const EmissionModelT<T>& emission,
                      const Matrix& y, LikelihoodVariant variant = LikelihoodVariant::kWithR,
                      double jitter = ad::kDefaultJitter) {
  const Matrix y_col = y.cols() == 1 ? y : Matrix(y.transpose());
  const auto inn = innovation(pred, emission, variant == LikelihoodVariant::kWithR, jitter);
  const T residual = ad::sub(ad::lift(pred.mean, y_col), ad::matmul(inn.c, pred.mean));
  return gaussian_logpdf_from_factor(residual, inn.factor);
}

template <class T>
struct StepResultT {
  T filtered;               // N×dx
  GaussianBeliefT<T> pred;  // moments of the propagated ensemble
  T log_likelihood;         // 1×1
};

// One analysis step on an already propagated ensemble, sharing the
// innovation factorisation between gain and likelihood when possible.
template <class T>
StepResultT<T> analysis_step(const T& propagated, const EmissionModelT<T>& emission,
                             const Matrix& y, const Matrix& obs_eps, const FilterConfig& config) {
  StepResultT<T> out;
  out.pred = ensemble_moments(propagated, config.ensemble_jitter);
  const auto inn = innovation(out.pred, emission, true, config.solve_jitter);
  const T gain = ad::transpose(ad::chol_solve(inn.factor, inn.cp));
  out.filtered = update_ensemble(propagated, y, gain, emission, obs_eps);
  const Matrix y_col = y.cols() == 1 ? y : Matrix(y.transpose());
  if (config.likelihood == LikelihoodVariant::kWithR) {
    const T residual = ad::sub(ad::lift(out.pred.mean, y_col), ad::matmul(inn.c, out.pred.mean));
    out.log_likelihood = gaussian_logpdf_from_factor(residual, inn.factor);
  } else {
    out.log_likelihood = step_log_likelihood(out.pred, emission, y_col, config.likelihood,
                                             config.solve_jitter);
  }
  return out;
}

// Exact Gaussian conditioning of a prediction belief on y.
GaussianBelief condition_on_observation(const GaussianBelief& pred, const EmissionModel& emission,
                                        const Matrix& y);

// Reconstruction-minus-KL form of the step likelihood:
//   lhs = log N(y | C m̄, C P̄ C^T + R)
//   rhs = E_filter[log N(y | Cx, R)] - KL(filter || pred)
struct ObjectiveIdentity {
  double lhs = 0;
  double rhs = 0;
  double gap = 0;
  double reconstruction = 0;
  double kl = 0;
};

ObjectiveIdentity objective_identity(const GaussianBelief& pred, const EmissionModel& emission,
                                     const Matrix& y);

}  // namespace envi::enkf

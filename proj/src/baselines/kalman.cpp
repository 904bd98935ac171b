#include "envi/baselines/kalman.hpp"

#include <cmath>
#include <numbers>

#include "envi/ad/forward.hpp"
#include "envi/error.hpp"
#include "envi/rng.hpp"

namespace envi::baselines {

Matrix KalmanResult::filtered_means() const {
  if (filtered.empty()) return {};
  Matrix out(static_cast<Eigen::Index>(filtered.size()), filtered.front().mean.rows());
  for (std::size_t t = 0; t < filtered.size(); ++t) {
    out.row(static_cast<Eigen::Index>(t)) = filtered[t].mean.transpose();
  }
  return out;
}

KalmanResult kalman_filter(const LinearModel& model, const Matrix& y) {
  const Eigen::Index dx = model.h.rows();
  const Eigen::Index dy = model.c.rows();
  if (model.h.cols() != dx || model.c.cols() != dx || model.q.rows() != dx || model.r.rows() != dy ||
      y.cols() != dy || model.prior.mean.rows() != dx) {
    throw ShapeError("kalman_filter: inconsistent model or observation dimensions");
  }
  const Matrix eye = Matrix::Identity(dx, dx);
  KalmanResult out;
  GaussianBelief belief = model.prior;
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    GaussianBelief pred;
    pred.mean = model.h * belief.mean;
    pred.cov = model.h * belief.cov * model.h.transpose() + model.q;
    pred.cov = 0.5 * (pred.cov + pred.cov.transpose());

    const Matrix s = model.c * pred.cov * model.c.transpose() + model.r;
    Matrix factor;
    const Eigen::Index pivot = ad::fwd::cholesky_in_place(0.5 * (s + s.transpose()), factor);
    if (pivot >= 0) {
      throw FactorizationError(
          "kalman_filter: innovation covariance at step " + std::to_string(t + 1) + " is not positive definite",
          pivot);
    }
    const Matrix residual = y.row(t).transpose() - model.c * pred.mean;
    const Matrix gain = ad::chol_solve(factor, Matrix(model.c * pred.cov)).transpose();
    const Matrix white = ad::tri_solve(factor, residual);
    const double logdet = 2.0 * factor.diagonal().array().log().sum();
    out.log_evidence += -0.5 * (white.squaredNorm() + logdet +
                                static_cast<double>(dy) * std::log(2.0 * std::numbers::pi));

    GaussianBelief post;
    post.mean = pred.mean + gain * residual;
    const Matrix a = eye - gain * model.c;
    post.cov = a * pred.cov * a.transpose() + gain * model.r * gain.transpose();
    post.cov = 0.5 * (post.cov + post.cov.transpose());

    out.predicted.push_back(pred);
    out.filtered.push_back(post);
    belief = post;
  }
  return out;
}

Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Trajectory simulate_lgssm(const LinearModel& model, int steps, std::uint64_t seed) {
  if (steps < 1) throw InputError("simulate_lgssm: need at least one step");
  const Eigen::Index dx = model.h.rows();
  const Eigen::Index dy = model.c.rows();
  const CounterRng rng(seed);
  const Matrix noise = rng.normal_matrix(streams::kSimulation, dx + dy, steps + 1);
  const Matrix q_sqrt = psd_sqrt(model.q);
  const Matrix r_sqrt = psd_sqrt(model.r);

  Trajectory out{Matrix(steps + 1, dx), Matrix(steps, dy)};
  Eigen::VectorXd x = model.prior.mean + psd_sqrt(model.prior.cov) * noise.col(0).head(dx);
  out.states.row(0) = x.transpose();
  for (int t = 1; t <= steps; ++t) {
    x = model.h * x + q_sqrt * noise.col(t).head(dx);
    out.states.row(t) = x.transpose();
    out.observations.row(t - 1) = (model.c * x + r_sqrt * noise.col(t).tail(dy)).transpose();
  }
  return out;
}

LinearModel cartrack_model(const CarTrackSettings& s) {
  LinearModel m;
  m.h = Matrix::Identity(4, 4);
  m.h(0, 2) = s.dt;
  m.h(1, 3) = s.dt;
  m.q = Matrix::Zero(4, 4);
  const double dt2 = s.dt * s.dt;
  const double dt3 = dt2 * s.dt;
  const double qc[2] = {s.q1, s.q2};
  for (int i = 0; i < 2; ++i) {
    m.q(i, i) = qc[i] * dt3 / 3.0;
    m.q(i, i + 2) = m.q(i + 2, i) = qc[i] * dt2 / 2.0;
    m.q(i + 2, i + 2) = qc[i] * s.dt;
  }
  m.c = Matrix::Identity(4, 4);
  m.r = s.obs_std * s.obs_std * Matrix::Identity(4, 4);
  m.prior.mean = Matrix::Zero(4, 1);
  m.prior.cov = Matrix::Identity(4, 4);
  return m;
}

}  // namespace envi::baselines

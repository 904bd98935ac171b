#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "envi/gp/gp.hpp"

namespace envi::baselines {

using Matrix = Eigen::MatrixXd;
using gp::GaussianBelief;

// x_{t+1} = H x_t + v,  y_t = C x_t + e,  v ~ N(0, Q), e ~ N(0, R),
// x_0 ~ prior.
struct LinearModel {
  Matrix h;
  Matrix c;
  Matrix q;
  Matrix r;
  GaussianBelief prior;
};

struct KalmanResult {
  std::vector<GaussianBelief> predicted;  // p(x_t | y_{1:t-1}), t = 1..T
  std::vector<GaussianBelief> filtered;   // p(x_t | y_{1:t})
  double log_evidence = 0.0;

  // T×dx filtered means.
  Matrix filtered_means() const;
};

// Observations are rows of y (T×dy); y row t-1 is observed at time t.
KalmanResult kalman_filter(const LinearModel& model, const Matrix& y);

struct Trajectory {
  Matrix states;        // (T+1)×dx, row 0 is x_0
  Matrix observations;  // T×dy
};

Trajectory simulate_lgssm(const LinearModel& model, int steps, std::uint64_t seed);

// Symmetric square root factor S with S S^T = a, valid for PSD (singular) a.
Matrix psd_sqrt(const Matrix& a);

struct CarTrackSettings {
  double dt = 0.1;
  double q1 = 1.0;
  double q2 = 1.0;
  double obs_std = 0.5;
};

// Constant-velocity car model: state (px, py, vx, vy), C = I4, prior N(0, I4).
LinearModel cartrack_model(const CarTrackSettings& settings = {});

}  // namespace envi::baselines

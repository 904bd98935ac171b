#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "envi/baselines/kalman.hpp"

namespace envi::data {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Per-column affine map fitted on the training split: z = (y - mean) / scale.
struct Standardization {
  RowVector mean;
  RowVector scale;
  Eigen::Index train_rows = 0;
};

struct Dataset {
  std::string name;
  Matrix y;                              // T×dy, row t-1 observed at time t
  Matrix x_true;                         // T×dx aligned with y, or empty
  std::optional<Eigen::VectorXd> x_initial;
  std::optional<Standardization> stats;  // set once y has been standardized
  std::uint64_t seed = 0;
  double process_var = 0.0;
  double obs_var = 0.0;

  Eigen::Index steps() const { return y.rows(); }
  bool has_truth() const { return x_true.size() > 0; }
};

// 0.8 + (x + 0.2)(1 - 5 / (1 + e^{-2x}))
double kink_true(double x);

Dataset simulate_kink(int steps, double process_var, double obs_var, std::uint64_t seed,
                      double x_initial = 0.5);

Dataset simulate_cartrack(int steps, std::uint64_t seed,
                          const baselines::CarTrackSettings& settings = {});

Dataset from_trajectory(const std::string& name, const baselines::Trajectory& traj);

// Header `t,y1..y<dy>[,x1..x<dx>]`, one row per time step.
Dataset load_csv(const std::string& path);
void write_csv(const std::string& path, const Dataset& dataset);

// Fits the statistics on the first round(split·T) rows and applies them to
// all rows. Latent truth is left in its original units.
Dataset standardize(const Dataset& dataset, double split = 0.5);
Matrix unstandardize(const Matrix& y, const Standardization& stats);

// sqrt((1/T) Σ_t Σ_d (est - truth)²)
double state_rmse(const Matrix& estimate, const Matrix& truth);
// Same formula over a forecast horizon.
double forecast_rmse(const Matrix& forecast, const Matrix& truth);
// (1/n) Σ (mean - truth)²
double transition_mse(const Eigen::VectorXd& mean, const Eigen::VectorXd& truth);
// (1/n) Σ log N(truth | mean, var)
double transition_log_density(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                              const Eigen::VectorXd& truth);

// `points` values evenly spaced over [lo, hi].
Eigen::VectorXd uniform_grid(double lo, double hi, int points = 100);

}  // namespace envi::data

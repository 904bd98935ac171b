#include "envi/data/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <vector>

#include "envi/error.hpp"
#include "envi/rng.hpp"

namespace envi::data {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, const std::string& path, int line, std::size_t col) {
  const std::string cell = trim(raw);
  double value = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw InputError(path + ":" + std::to_string(line) + ": non-numeric cell '" + cell +
                     "' in column " + std::to_string(col + 1));
  }
  return value;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.size() == 0 || b.size() == 0) throw InputError(std::string(what) + ": empty input");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes differ");
  }
}

}  // namespace

double kink_true(double x) { return 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + std::exp(-2.0 * x))); }

Dataset simulate_kink(int steps, double process_var, double obs_var, std::uint64_t seed,
                      double x_initial) {
  if (steps < 1) throw InputError("simulate_kink: need at least one step");
  if (process_var < 0.0 || obs_var < 0.0) throw InputError("simulate_kink: negative variance");
  const CounterRng rng(seed);
  const Matrix noise = rng.normal_matrix(streams::kSimulation, 2, steps);
  Dataset out;
  out.name = "kink";
  out.seed = seed;
  out.process_var = process_var;
  out.obs_var = obs_var;
  out.y.resize(steps, 1);
  out.x_true.resize(steps, 1);
  out.x_initial = Eigen::VectorXd::Constant(1, x_initial);
  double x = x_initial;
  for (int t = 0; t < steps; ++t) {
    x = kink_true(x) + std::sqrt(process_var) * noise(0, t);
    out.x_true(t, 0) = x;
    out.y(t, 0) = x + std::sqrt(obs_var) * noise(1, t);
  }
  return out;
}

Dataset from_trajectory(const std::string& name, const baselines::Trajectory& traj) {
  Dataset out;
  out.name = name;
  out.y = traj.observations;
  out.x_true = traj.states.bottomRows(traj.states.rows() - 1);
  out.x_initial = traj.states.row(0).transpose();
  return out;
}

Dataset simulate_cartrack(int steps, std::uint64_t seed, const baselines::CarTrackSettings& settings) {
  const auto model = baselines::cartrack_model(settings);
  Dataset out = from_trajectory("cartrack", baselines::simulate_lgssm(model, steps, seed));
  out.seed = seed;
  out.obs_var = settings.obs_std * settings.obs_std;
  return out;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ":1: missing header row");
  const auto header = split_fields(line);
  if (header.empty() || trim(header[0]) != "t") {
    throw InputError(path + ":1: header must start with column 't'");
  }
  Eigen::Index dy = 0, dx = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    const std::string expect_y = "y" + std::to_string(dy + 1);
    const std::string expect_x = "x" + std::to_string(dx + 1);
    if (dx == 0 && name == expect_y) {
      ++dy;
    } else if (dy > 0 && name == expect_x) {
      ++dx;
    } else {
      throw InputError(path + ":1: unexpected column '" + name + "' (expected " +
                       (dx == 0 ? expect_y + " or " : std::string()) + expect_x + ")");
    }
  }
  if (dy == 0) throw InputError(path + ":1: no observation columns");

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    std::vector<double> row;
    for (std::size_t c = 0; c < fields.size(); ++c) row.push_back(parse_cell(fields[c], path, line_no, c));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(path + ": no data rows");

  Dataset out;
  out.name = path;
  out.y.resize(static_cast<Eigen::Index>(rows.size()), dy);
  if (dx > 0) out.x_true.resize(static_cast<Eigen::Index>(rows.size()), dx);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    for (Eigen::Index c = 0; c < dy; ++c) out.y(i, c) = rows[r][static_cast<std::size_t>(1 + c)];
    for (Eigen::Index c = 0; c < dx; ++c) out.x_true(i, c) = rows[r][static_cast<std::size_t>(1 + dy + c)];
  }
  return out;
}

void write_csv(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "t";
  for (Eigen::Index c = 0; c < dataset.y.cols(); ++c) out << ",y" << c + 1;
  for (Eigen::Index c = 0; c < dataset.x_true.cols(); ++c) out << ",x" << c + 1;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index t = 0; t < dataset.y.rows(); ++t) {
    out << t + 1;
    for (Eigen::Index c = 0; c < dataset.y.cols(); ++c) out << ',' << dataset.y(t, c);
    for (Eigen::Index c = 0; c < dataset.x_true.cols(); ++c) out << ',' << dataset.x_true(t, c);
    out << '\n';
  }
}

Dataset standardize(const Dataset& dataset, double split) {
  if (dataset.y.rows() == 0) throw InputError("standardize: empty dataset");
  if (!(split > 0.0 && split <= 1.0)) throw InputError("standardize: split must lie in (0, 1]");
  const auto train = std::max<Eigen::Index>(
      2, static_cast<Eigen::Index>(std::lround(split * static_cast<double>(dataset.y.rows()))));
  if (train > dataset.y.rows()) throw InputError("standardize: training split needs at least 2 rows");
  const Matrix head = dataset.y.topRows(train);
  Standardization stats;
  stats.train_rows = train;
  stats.mean = head.colwise().mean();
  stats.scale.resize(head.cols());
  for (Eigen::Index c = 0; c < head.cols(); ++c) {
    const double var = (head.col(c).array() - stats.mean[c]).square().sum() / static_cast<double>(train - 1);
    if (!(var > 0.0)) throw InputError("zero variance column y" + std::to_string(c + 1));
    stats.scale[c] = std::sqrt(var);
  }
  Dataset out = dataset;
  out.y = (dataset.y.rowwise() - stats.mean).array().rowwise() / stats.scale.array();
  out.stats = stats;
  return out;
}

Matrix unstandardize(const Matrix& y, const Standardization& stats) {
  if (y.cols() != stats.mean.cols()) throw ShapeError("unstandardize: column count differs");
  return (y.array().rowwise() * stats.scale.array()).matrix().rowwise() + stats.mean;
}

double state_rmse(const Matrix& estimate, const Matrix& truth) {
  require_same_shape(estimate, truth, "state_rmse");
  return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(truth.rows()));
}

double forecast_rmse(const Matrix& forecast, const Matrix& truth) {
  require_same_shape(forecast, truth, "forecast_rmse");
  return state_rmse(forecast, truth);
}

double transition_mse(const Eigen::VectorXd& mean, const Eigen::VectorXd& truth) {
  require_same_shape(mean, truth, "transition_mse");
  return (mean - truth).squaredNorm() / static_cast<double>(truth.size());
}

double transition_log_density(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                              const Eigen::VectorXd& truth) {
  require_same_shape(mean, truth, "transition_log_density");
  require_same_shape(var, truth, "transition_log_density");
  if ((var.array() <= 0.0).any()) throw NumericalError("transition_log_density: non-positive variance");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const double r = truth[i] - mean[i];
    total += -0.5 * (log2pi + std::log(var[i]) + r * r / var[i]);
  }
  return total / static_cast<double>(truth.size());
}

Eigen::VectorXd uniform_grid(double lo, double hi, int points) {
  if (points < 2) throw InputError("uniform_grid: need at least two points");
  if (!(hi >= lo)) throw InputError("uniform_grid: empty range");
  return Eigen::VectorXd::LinSpaced(points, lo, hi);
}

}  // namespace envi::data

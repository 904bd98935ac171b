#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "envi/data/dataset.hpp"
#include "envi/error.hpp"

namespace data = envi::data;
using data::Matrix;

namespace {

std::filesystem::path scratch_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "envi_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string error_of(const std::filesystem::path& p) {
  try {
    data::load_csv(p.string());
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Kink, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(data::kink_true(-0.2), 0.8);
  EXPECT_DOUBLE_EQ(data::kink_true(0.0), 0.5);
  // Direct evaluation: 0.8 + 2.2 (1 - 5 / (1 + e^-4)).
  EXPECT_NEAR(data::kink_true(2.0), -7.80215169041699, 1e-12);
}

TEST(Kink, NoiseFreeOrbit) {
  const auto ds = data::simulate_kink(50, 0.0, 0.0, 3);
  double x = 0.5;
  for (int t = 0; t < 50; ++t) {
    x = data::kink_true(x);
    EXPECT_DOUBLE_EQ(ds.y(t, 0), x);
    EXPECT_DOUBLE_EQ(ds.x_true(t, 0), x);
  }
}

TEST(Kink, BoundedEnvelope) {
  // Long-run range at the default noise levels. The orbit occasionally
  // overshoots well past the fixed point (f has its minimum near x≈1.7).
  const auto ds = data::simulate_kink(20000, 0.05, 0.008, 11);
  EXPECT_GT(ds.x_true.minCoeff(), -8.0);
  EXPECT_LT(ds.x_true.maxCoeff(), 2.5);
  EXPECT_TRUE(ds.y.allFinite());
}

TEST(Kink, ObservationNoiseMonteCarlo) {
  for (double r : {0.008, 0.08, 0.8}) {
    const auto ds = data::simulate_kink(20000, 0.05, r, 21);
    const Eigen::ArrayXd e = (ds.y - ds.x_true).col(0).array();
    EXPECT_NEAR((e - e.mean()).square().mean() / r, 1.0, 0.05) << r;
  }
}

TEST(Kink, ProcessNoiseMonteCarlo) {
  const auto ds = data::simulate_kink(20000, 0.05, 0.0, 22);
  Eigen::ArrayXd v(19999);
  for (int t = 1; t < 20000; ++t) v(t - 1) = ds.x_true(t, 0) - data::kink_true(ds.x_true(t - 1, 0));
  EXPECT_NEAR(v.square().mean(), 0.05, 0.0025);
}

TEST(Kink, SeedDeterminism) {
  EXPECT_EQ(data::simulate_kink(100, 0.05, 0.08, 5).y, data::simulate_kink(100, 0.05, 0.08, 5).y);
  EXPECT_NE(data::simulate_kink(100, 0.05, 0.08, 5).y, data::simulate_kink(100, 0.05, 0.08, 6).y);
}

TEST(CarTrack, AlignedTruth) {
  const auto ds = data::simulate_cartrack(120, 0);
  EXPECT_EQ(ds.y.rows(), 120);
  EXPECT_EQ(ds.x_true.rows(), 120);
  ASSERT_TRUE(ds.x_initial.has_value());
  EXPECT_EQ(ds.x_initial->size(), 4);
}

TEST(CarTrack, ObservationBaselineBand) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = data::simulate_cartrack(120, seed);
    total += data::state_rmse(ds.y, ds.x_true);
  }
  EXPECT_GE(total / 5.0, 0.95);
  EXPECT_LE(total / 5.0, 1.05);
}

TEST(Csv, RoundTripIsExact) {
  const auto ds = data::simulate_cartrack(30, 4);
  const auto path = scratch_file("round.csv");
  data::write_csv(path.string(), ds);
  const auto back = data::load_csv(path.string());
  EXPECT_EQ(back.y, ds.y);
  EXPECT_EQ(back.x_true, ds.x_true);
}

TEST(Csv, ObservationsOnly) {
  const auto path = scratch_file("obs.csv");
  write_text(path, "t,y1,y2\n1,0.5,1.5\n2,-1,2\n");
  const auto ds = data::load_csv(path.string());
  EXPECT_EQ(ds.y.rows(), 2);
  EXPECT_EQ(ds.y.cols(), 2);
  EXPECT_FALSE(ds.has_truth());
  EXPECT_DOUBLE_EQ(ds.y(1, 0), -1.0);
}

TEST(Csv, NonNumericCellNamesLine) {
  const auto path = scratch_file("bad_cell.csv");
  write_text(path, "t,y1\n1,0.5\n2,abc\n");
  const std::string msg = error_of(path);
  EXPECT_NE(msg.find("non-numeric cell"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
}

TEST(Csv, RaggedRowNamesLine) {
  const auto path = scratch_file("ragged.csv");
  write_text(path, "t,y1,y2\n1,0.5,1\n2,0.1\n");
  const std::string msg = error_of(path);
  EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
}

TEST(Csv, MissingFileIsIoError) {
  EXPECT_THROW(data::load_csv("/nonexistent/envi.csv"), envi::IoError);
}

TEST(Standardize, TrainingColumnsAreUnitScale) {
  const auto ds = data::simulate_cartrack(120, 2);
  const auto z = data::standardize(ds, 0.5);
  ASSERT_TRUE(z.stats.has_value());
  EXPECT_EQ(z.stats->train_rows, 60);
  const Matrix train = z.y.topRows(60);
  for (int c = 0; c < 4; ++c) {
    const Eigen::ArrayXd col = train.col(c).array();
    EXPECT_LT(std::abs(col.mean()), 1e-9);
    const double sd = std::sqrt((col - col.mean()).square().sum() / (col.size() - 1));
    EXPECT_NEAR(sd, 1.0, 1e-9);
  }
  EXPECT_LT((data::unstandardize(z.y, *z.stats) - ds.y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(z.x_true, ds.x_true);
}

TEST(Standardize, ConstantColumnRejected) {
  data::Dataset ds;
  ds.y = Matrix::Ones(10, 2);
  ds.y.col(0).setLinSpaced(10, 0.0, 1.0);
  try {
    data::standardize(ds);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("zero variance column"), std::string::npos);
  }
}

TEST(Metrics, PerfectFit) {
  const Matrix x = Matrix::Random(10, 3);
  EXPECT_EQ(data::state_rmse(x, x), 0.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, -1, 1);
  EXPECT_EQ(data::transition_mse(v, v), 0.0);
}

TEST(Metrics, StandardNormalAtMean) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  EXPECT_NEAR(data::transition_log_density(zero, Eigen::VectorXd::Ones(1), zero),
              -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(data::transition_log_density(zero, Eigen::VectorXd::Ones(1), zero), -0.91894, 1e-5);
}

TEST(Metrics, RmseSumsOverDimensions) {
  const Matrix e = Matrix::Ones(4, 2);
  EXPECT_DOUBLE_EQ(data::state_rmse(e, Matrix::Zero(4, 2)), std::sqrt(2.0));
}

TEST(Metrics, EmptyInputsRejected) {
  EXPECT_ANY_THROW(data::state_rmse(Matrix(0, 2), Matrix(0, 2)));
  EXPECT_ANY_THROW(data::transition_mse(Eigen::VectorXd(), Eigen::VectorXd()));
}

TEST(Metrics, GridOrderInvariance) {
  const Eigen::VectorXd grid = data::uniform_grid(-3.0, 1.5);
  ASSERT_EQ(grid.size(), 100);
  EXPECT_DOUBLE_EQ(grid(0), -3.0);
  EXPECT_DOUBLE_EQ(grid(99), 1.5);
  Eigen::VectorXd truth(100), mean(100), var(100);
  for (int i = 0; i < 100; ++i) {
    truth(i) = data::kink_true(grid(i));
    mean(i) = truth(i) + 0.1 * std::sin(grid(i));
    var(i) = 0.05 + 0.01 * i;
  }
  const Eigen::VectorXd rt = truth.reverse(), rm = mean.reverse(), rv = var.reverse();
  EXPECT_NEAR(data::transition_mse(mean, truth), data::transition_mse(rm, rt), 1e-15);
  EXPECT_NEAR(data::transition_log_density(mean, var, truth), data::transition_log_density(rm, rv, rt), 1e-13);
}

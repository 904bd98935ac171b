#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "envi/ad/grad_check.hpp"
#include "envi/gp/gp.hpp"
#include "envi/rng.hpp"

namespace ad = envi::ad;
namespace gp = envi::gp;
using ad::Matrix;

namespace {

Matrix random_matrix(int rows, int cols, unsigned seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

gp::KernelParams unit_kernel(int dx) {
  return {Matrix::Zero(1, dx), Matrix::Zero(dx, dx)};
}

gp::InducingSet inducing_set(const Matrix& z, const Matrix& mean, double log_diag) {
  gp::InducingSet s{z, mean, {}};
  for (int d = 0; d < z.cols(); ++d) {
    s.chol_raw.push_back(Matrix::Identity(z.rows(), z.rows()) * log_diag);
  }
  return s;
}

// Independent closed-form SE kernel.
double se(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double var, const Eigen::VectorXd& ell) {
  return var * std::exp(-0.5 * ((a - b).array() / ell.array()).square().sum());
}

gp::KernelParams kernel1(double log_variance, double log_lengthscale) {
  return {Matrix::Constant(1, 1, log_variance), Matrix::Constant(1, 1, log_lengthscale)};
}

// Stores a lower factor in the raw parameterisation used by InducingSet.
Matrix to_raw(const Matrix& lower) {
  Matrix raw = lower.triangularView<Eigen::StrictlyLower>();
  raw.diagonal() = lower.diagonal().array().log().matrix();
  return raw;
}

}  // namespace

TEST(KernelMatrix, ZeroDistanceGivesSignalVariance) {
  gp::KernelParams k{(Matrix(1, 2) << std::log(2.5), 0.0).finished(), Matrix::Zero(2, 2)};
  const Matrix x = random_matrix(1, 2, 1);
  EXPECT_DOUBLE_EQ(gp::kernel_matrix(x, x, k, 0)(0, 0), 2.5);
}

TEST(KernelMatrix, SymmetricGram) {
  const Matrix x = random_matrix(7, 3, 2);
  gp::KernelParams k{Matrix::Zero(1, 3), random_matrix(3, 3, 3, 0.3)};
  for (int d = 0; d < 3; ++d) {
    const Matrix g = gp::kernel_matrix(x, x, k, d);
    EXPECT_EQ(g, g.transpose());
  }
}

TEST(KernelMatrix, ClosedFormAtUnitDistance) {
  const Matrix zero = Matrix::Zero(1, 1);
  const Matrix one = Matrix::Ones(1, 1);
  EXPECT_NEAR(gp::kernel_matrix(zero, one, unit_kernel(1), 0)(0, 0), 0.6065306597126334, 1e-15);
}

TEST(KernelMatrix, MatchesIndependentFormulaWithArd) {
  const Matrix x1 = random_matrix(4, 3, 4);
  const Matrix x2 = random_matrix(5, 3, 5);
  gp::KernelParams k{random_matrix(1, 2, 6, 0.5), random_matrix(2, 3, 7, 0.5)};
  for (int d = 0; d < 2; ++d) {
    const Matrix g = gp::kernel_matrix(x1, x2, k, d);
    const Eigen::VectorXd ell = k.log_lengthscale.row(d).transpose().array().exp();
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        const double expect = se(x1.row(i).transpose(), x2.row(j).transpose(),
                                 std::exp(k.log_variance(0, d)), ell);
        EXPECT_NEAR(g(i, j), expect, 1e-14);
      }
    }
  }
}

TEST(KernelMatrix, GramWithJitterIsPositiveDefinite) {
  const Matrix x = random_matrix(15, 2, 8);
  const Matrix g = gp::kernel_matrix(x, x, unit_kernel(2), 0) + 1e-6 * Matrix::Identity(15, 15);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(KernelMatrix, ColumnMismatchRejected) {
  EXPECT_THROW(gp::kernel_matrix(Matrix(Matrix::Zero(2, 3)), Matrix(Matrix::Zero(2, 2)), unit_kernel(2), 0),
               envi::ShapeError);
}

TEST(Conditional, DenseJointOracle) {
  // M=2, dx=1, Z=[0,1], unit kernel, q=0.05, u=[1,-1], x=0.5.
  const Matrix z = (Matrix(2, 1) << 0.0, 1.0).finished();
  const auto s = inducing_set(z, Matrix::Zero(2, 1), 0.0);
  const Matrix u = (Matrix(2, 1) << 1.0, -1.0).finished();
  const Matrix log_q = Matrix::Constant(1, 1, std::log(0.05));
  gp::GpConfig config;
  config.gram_jitter = 0.0;
  const auto b = gp::sparse_gp_conditional(Matrix(Matrix::Constant(1, 1, 0.5)), s, u, unit_kernel(1), log_q, config);

  // Joint of (f(x), u) with u's covariance K_zz + q I; condition explicitly.
  Matrix joint(3, 3);
  const double pts[3] = {0.5, 0.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) joint(i, j) = std::exp(-0.5 * (pts[i] - pts[j]) * (pts[i] - pts[j]));
  }
  joint.bottomRightCorner(2, 2) += 0.05 * Matrix::Identity(2, 2);
  const Matrix inv = joint.bottomRightCorner(2, 2).inverse();
  const double mean = (joint.block(0, 1, 1, 2) * inv * u)(0, 0);
  const double var = joint(0, 0) - (joint.block(0, 1, 1, 2) * inv * joint.block(1, 0, 2, 1))(0, 0) + 0.05;
  EXPECT_NEAR(b.mean(0, 0), mean, 1e-12);
  EXPECT_NEAR(b.cov(0, 0), var, 1e-12);
  EXPECT_NEAR(b.mean(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(b.cov(0, 0), 0.10972065351750615, 1e-12);
}

TEST(Conditional, InterpolatesInducingPointInNoiseFreeLimit) {
  const Matrix z = (Matrix(3, 1) << -1.0, 0.2, 1.5).finished();
  const auto s = inducing_set(z, Matrix::Zero(3, 1), 0.0);
  const Matrix u = (Matrix(3, 1) << 0.3, -0.7, 1.1).finished();
  gp::GpConfig config;
  config.inducing_noise = gp::InducingNoise::kNone;
  config.gram_jitter = 1e-12;
  const Matrix log_q = Matrix::Constant(1, 1, std::log(1e-12));
  const auto b = gp::sparse_gp_conditional(Matrix(z.row(1)), s, u, unit_kernel(1), log_q, config);
  EXPECT_NEAR(b.mean(0, 0), -0.7, 1e-6);
  EXPECT_NEAR(b.cov(0, 0), 0.0, 1e-6);
}

TEST(Conditional, ZeroInducingOutputsGiveZeroMean) {
  const Matrix z = random_matrix(6, 2, 9);
  const auto s = inducing_set(z, Matrix::Zero(6, 2), 0.0);
  const auto b = gp::sparse_gp_conditional(random_matrix(1, 2, 10), s, Matrix(Matrix::Zero(6, 2)),
                                           unit_kernel(2), Matrix(Matrix::Constant(1, 2, -3.0)));
  EXPECT_EQ(b.mean, Matrix::Zero(2, 1));
  EXPECT_EQ(b.cov(0, 1), 0.0);
}

TEST(Conditional, VarianceNeverBelowProcessNoise) {
  const Matrix z = random_matrix(15, 2, 11);
  const auto s = inducing_set(z, Matrix::Zero(15, 2), 0.0);
  const Matrix log_q = (Matrix(1, 2) << std::log(0.05), std::log(0.2)).finished();
  gp::KernelParams k{random_matrix(1, 2, 12, 0.3), random_matrix(2, 2, 13, 0.3)};
  for (const auto mode : {gp::InducingNoise::kProcess, gp::InducingNoise::kNone}) {
    gp::GpConfig config;
    config.inducing_noise = mode;
    const Matrix u = random_matrix(15, 2, 14);
    const auto cache = gp::prepare_transition(s, k, log_q, u, config);
    // Query points include the inducing inputs themselves.
    const Matrix x = ad::concat_rows({z, random_matrix(200, 2, 15, 2.0)});
    const auto m = gp::transition_moments(x, cache, s, k);
    for (int d = 0; d < 2; ++d) {
      EXPECT_GE(m.var.col(d).minCoeff(), std::exp(log_q(0, d)) - 1e-10);
    }
  }
}

TEST(Conditional, BatchMatchesSinglePoint) {
  const Matrix z = random_matrix(5, 2, 16);
  const auto s = inducing_set(z, Matrix::Zero(5, 2), 0.0);
  const Matrix u = random_matrix(5, 2, 17);
  const Matrix log_q = Matrix::Constant(1, 2, -2.0);
  const Matrix x = random_matrix(4, 2, 18);
  const auto cache = gp::prepare_transition(s, unit_kernel(2), log_q, u, {});
  const auto batch = gp::transition_moments(x, cache, s, unit_kernel(2));
  for (int i = 0; i < 4; ++i) {
    const auto b = gp::sparse_gp_conditional(Matrix(x.row(i)), s, u, unit_kernel(2), log_q);
    EXPECT_NEAR((b.mean.transpose() - batch.mean.row(i)).norm(), 0.0, 1e-14);
    EXPECT_NEAR((b.cov.diagonal().transpose() - batch.var.row(i)).norm(), 0.0, 1e-14);
  }
}

TEST(SampleU, ZeroNoiseGivesMean) {
  const Matrix mean = random_matrix(4, 2, 19);
  const auto s = inducing_set(random_matrix(4, 2, 20), mean, -1.0);
  EXPECT_EQ(gp::sample_variational_u(s, Matrix(Matrix::Zero(4, 2))), mean);
}

TEST(SampleU, UnitFactorAddsNoise) {
  const Matrix mean = random_matrix(4, 2, 21);
  const Matrix eps = random_matrix(4, 2, 22);
  const auto s = inducing_set(random_matrix(4, 2, 23), mean, 0.0);
  EXPECT_LT((gp::sample_variational_u(s, eps) - (mean + eps)).norm(), 1e-15);
}

TEST(SampleU, EmpiricalCovarianceMatchesS) {
  const int m = 3;
  Matrix lower = random_matrix(m, m, 24, 0.5).triangularView<Eigen::Lower>();
  lower.diagonal() = lower.diagonal().array().abs() + 0.5;
  gp::InducingSet s{random_matrix(m, 1, 25), random_matrix(m, 1, 26), {to_raw(lower)}};
  const envi::CounterRng rng(3);
  const int draws = 100000;
  Matrix samples(draws, m);
  for (int i = 0; i < draws; ++i) {
    samples.row(i) = gp::sample_variational_u(s, rng.normal_matrix(1, m, 1, static_cast<std::uint64_t>(i * m))).transpose();
  }
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  const Matrix cov = centered.transpose() * centered / (draws - 1);
  const Matrix expect = lower * lower.transpose();
  EXPECT_LT((cov - expect).norm() / expect.norm(), 0.02);
}

TEST(KlGaussian, ClosedFormValues) {
  const auto belief = [](double mean, double var) {
    return gp::GaussianBelief{Matrix::Constant(1, 1, mean), Matrix::Constant(1, 1, var)};
  };
  EXPECT_NEAR(gp::kl_gaussian(belief(0, 1), belief(0, 1))(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(gp::kl_gaussian(belief(1, 1), belief(0, 1))(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(gp::kl_gaussian(belief(0, 2), belief(0, 1))(0, 0), 0.5 * (2.0 - 1.0 - std::log(2.0)), 1e-15);
  EXPECT_NEAR(gp::kl_gaussian(belief(0, 2), belief(0, 1))(0, 0), 0.15342640972002736, 1e-15);
}

TEST(KlGaussian, NonNegativeAndZeroAtEquality) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    const int n = 1 + static_cast<int>(seed % 5);
    Matrix a = random_matrix(n, n, seed);
    Matrix b = random_matrix(n, n, seed + 1000);
    gp::GaussianBelief q{random_matrix(n, 1, seed + 2000), a * a.transpose() + 0.1 * Matrix::Identity(n, n)};
    gp::GaussianBelief p{random_matrix(n, 1, seed + 3000), b * b.transpose() + 0.1 * Matrix::Identity(n, n)};
    EXPECT_GE(gp::kl_gaussian(q, p)(0, 0), -1e-10);
    EXPECT_NEAR(gp::kl_gaussian(q, q)(0, 0), 0.0, 1e-10);
  }
}

TEST(KlGaussian, MatchesExplicitInverseFormula) {
  Matrix a = random_matrix(3, 3, 30), b = random_matrix(3, 3, 31);
  gp::GaussianBelief q{random_matrix(3, 1, 32), a * a.transpose() + Matrix::Identity(3, 3)};
  gp::GaussianBelief p{random_matrix(3, 1, 33), b * b.transpose() + Matrix::Identity(3, 3)};
  const Matrix pinv = p.cov.inverse();
  const Matrix diff = p.mean - q.mean;
  const double expect = 0.5 * ((pinv * q.cov).trace() + (diff.transpose() * pinv * diff)(0, 0) - 3.0 +
                               std::log(p.cov.determinant() / q.cov.determinant()));
  EXPECT_NEAR(gp::kl_gaussian(q, p)(0, 0), expect, 1e-12);
}

TEST(KlInducing, ZeroWhenPosteriorEqualsPrior) {
  const Matrix z = random_matrix(5, 2, 40);
  gp::KernelParams k{random_matrix(1, 2, 41, 0.3), random_matrix(2, 2, 42, 0.3)};
  gp::GpConfig config;
  gp::InducingSet s{z, Matrix::Zero(5, 2), {}};
  for (int d = 0; d < 2; ++d) {
    const Matrix gram = gp::kernel_matrix(z, z, k, d) + config.gram_jitter * Matrix::Identity(5, 5);
    s.chol_raw.push_back(to_raw(Matrix(gram.llt().matrixL())));
  }
  EXPECT_NEAR(gp::kl_inducing(s, k, config)(0, 0), 0.0, 1e-8);
}

TEST(KlInducing, GrowsWithMeanNorm) {
  const Matrix z = random_matrix(6, 1, 43);
  auto s = inducing_set(z, Matrix::Zero(6, 1), std::log(0.3));
  const Matrix direction = random_matrix(6, 1, 44);
  double last = gp::kl_inducing(s, unit_kernel(1))(0, 0);
  for (double scale : {0.1, 0.5, 1.0, 2.0}) {
    s.mean = scale * direction;
    const double kl = gp::kl_inducing(s, unit_kernel(1))(0, 0);
    EXPECT_GT(kl, last);
    last = kl;
  }
}

TEST(KlInducing, EqualsDenseKlOnAssembledBlocks) {
  const Matrix z = random_matrix(2, 2, 45);
  gp::KernelParams k{random_matrix(1, 2, 46, 0.3), random_matrix(2, 2, 47, 0.3)};
  gp::InducingSet s{z, random_matrix(2, 2, 48), {}};
  Matrix q_cov = Matrix::Zero(4, 4), p_cov = Matrix::Zero(4, 4);
  for (int d = 0; d < 2; ++d) {
    Matrix raw = random_matrix(2, 2, 49 + d, 0.4);
    s.chol_raw.push_back(raw);
    const Matrix l = ad::lower_exp_diag(raw);
    q_cov.block(2 * d, 2 * d, 2, 2) = l * l.transpose();
    p_cov.block(2 * d, 2 * d, 2, 2) = gp::kernel_matrix(z, z, k, d) + 1e-6 * Matrix::Identity(2, 2);
  }
  Matrix q_mean(4, 1);
  q_mean << s.mean.col(0), s.mean.col(1);
  const double dense = gp::kl_gaussian(gp::GaussianBelief{q_mean, q_cov},
                                       gp::GaussianBelief{Matrix::Zero(4, 1), p_cov}, 0.0)(0, 0);
  EXPECT_NEAR(gp::kl_inducing(s, k)(0, 0), dense, 1e-9);
}

TEST(KlInducing, GradientsMatchFiniteDifferences) {
  ad::ParamMap point{{"z", random_matrix(4, 2, 60)},
                     {"mean", random_matrix(4, 2, 61)},
                     {"raw0", random_matrix(4, 4, 62, 0.3)},
                     {"raw1", random_matrix(4, 4, 63, 0.3)},
                     {"log_var", random_matrix(1, 2, 64, 0.3)},
                     {"log_ell", random_matrix(2, 2, 65, 0.3)}};
  const auto program = [](ad::Tape&, const ad::LeafMap& v) {
    gp::InducingSetT<ad::Var> s{v.at("z"), v.at("mean"), {v.at("raw0"), v.at("raw1")}};
    gp::KernelParamsT<ad::Var> k{v.at("log_var"), v.at("log_ell")};
    return gp::kl_inducing(s, k);
  };
  const auto report = ad::grad_check(program, point);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
}

TEST(Conditional, GradientsMatchFiniteDifferences) {
  ad::ParamMap point{{"x", random_matrix(3, 2, 70)},
                     {"z", random_matrix(5, 2, 71)},
                     {"mean", random_matrix(5, 2, 72)},
                     {"raw0", random_matrix(5, 5, 73, 0.3)},
                     {"raw1", random_matrix(5, 5, 74, 0.3)},
                     {"log_var", random_matrix(1, 2, 75, 0.3)},
                     {"log_ell", random_matrix(2, 2, 76, 0.3)},
                     {"log_q", Matrix::Constant(1, 2, -2.0)}};
  const Matrix eps = random_matrix(5, 2, 77);
  const Matrix weights = random_matrix(3, 2, 78);
  for (const auto mode : {gp::InducingNoise::kProcess, gp::InducingNoise::kNone}) {
    const auto program = [&](ad::Tape& tape, const ad::LeafMap& v) {
      gp::InducingSetT<ad::Var> s{v.at("z"), v.at("mean"), {v.at("raw0"), v.at("raw1")}};
      gp::KernelParamsT<ad::Var> k{v.at("log_var"), v.at("log_ell")};
      gp::GpConfig config;
      config.inducing_noise = mode;
      const auto u = gp::sample_variational_u(s, eps);
      const auto cache = gp::prepare_transition(s, k, v.at("log_q"), u, config);
      const auto m = gp::transition_moments(v.at("x"), cache, s, k);
      const auto w = tape.constant(weights);
      return ad::add(ad::sum(ad::mul(m.mean, w)), ad::sum(ad::mul(ad::log(m.var), w)));
    };
    const auto report = ad::grad_check(program, point);
    EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
  }
}

TEST(FunctionPosterior, MatchesDenseFormula) {
  const Matrix z = random_matrix(4, 1, 80);
  Matrix raw = random_matrix(4, 4, 81, 0.3);
  gp::InducingSet s{z, random_matrix(4, 1, 82), {raw}};
  const Matrix log_q = Matrix::Constant(1, 1, std::log(0.05));
  const Matrix x = random_matrix(6, 1, 83);
  const auto post = gp::function_posterior(x, s, unit_kernel(1), log_q);

  const Matrix a = gp::kernel_matrix(z, z, unit_kernel(1), 0) + (0.05 + 1e-6) * Matrix::Identity(4, 4);
  const Matrix ainv = a.inverse();
  const Matrix l = ad::lower_exp_diag(raw);
  const Matrix cov_u = l * l.transpose();
  for (int i = 0; i < 6; ++i) {
    const Matrix k = gp::kernel_matrix(Matrix(x.row(i)), z, unit_kernel(1), 0);
    EXPECT_NEAR(post.mean(i, 0), (k * ainv * s.mean)(0, 0), 1e-10);
    const double var = 1.0 - (k * ainv * k.transpose())(0, 0) + (k * ainv * cov_u * ainv * k.transpose())(0, 0);
    EXPECT_NEAR(post.var(i, 0), var, 1e-10);
  }
}

TEST(Whitening, MapsToLowerTriangularUSpaceFactor) {
  const auto k = kernel1(0.7, 0.4);
  gp::InducingSet w;
  w.z = (Matrix(4, 1) << -1.0, 0.0, 0.5, 2.0).finished();
  w.mean = (Matrix(4, 1) << 0.3, -0.2, 1.0, 0.1).finished();
  Matrix raw = Matrix::Zero(4, 4);
  raw(2, 0) = 0.4;
  raw.diagonal() << -0.5, 0.1, -1.0, 0.2;
  w.chol_raw = {raw};
  const auto u = gp::unwhiten(w, k);
  Matrix gram = gp::kernel_matrix(w.z, w.z, k, 0);
  gram.diagonal().array() += 1e-6;
  const Matrix r = gram.llt().matrixL();
  const Matrix lv = ad::lower_exp_diag(raw);
  const Matrix lu = ad::lower_exp_diag(u.chol_raw[0]);
  EXPECT_LT((u.mean - r * w.mean).norm(), 1e-12);
  EXPECT_LT((lu - r * lv).norm(), 1e-12);
  EXPECT_LT(lu.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm(), 1e-300);
}

TEST(Whitening, KlEqualsUSpaceKl) {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto k = kernel1(0.5 + 0.1 * seed, 1.3);
    gp::InducingSet w;
    w.z = random_matrix(6, 1, 40 + seed, 1.5);
    w.mean = random_matrix(6, 1, 60 + seed);
    Matrix raw = random_matrix(6, 6, 80 + seed, 0.5).triangularView<Eigen::Lower>();
    w.chol_raw = {raw};
    const double white = gp::kl_whitened(w)(0, 0);
    const double explicit_kl = gp::kl_inducing(gp::unwhiten(w, k), k)(0, 0);
    EXPECT_NEAR(white, explicit_kl, 1e-6 * std::max(1.0, white)) << seed;
    EXPECT_GE(white, 0.0);
  }
}

TEST(Whitening, CoincidentInputsKeepKlFinite) {
  const auto k = kernel1(1.0, 0.0);
  gp::InducingSet w;
  w.z = (Matrix(3, 1) << 0.5, 0.5, 0.5 + 1e-9).finished();
  w.mean = (Matrix(3, 1) << 0.4, -0.4, 0.2).finished();
  w.chol_raw = {Matrix::Zero(3, 3)};
  EXPECT_NEAR(gp::kl_whitened(w)(0, 0), 0.5 * 0.36, 1e-15);
  EXPECT_TRUE(gp::unwhiten(w, k).mean.allFinite());
}

TEST(Whitening, GradientsMatchCentralDifferences) {
  const ad::ParamMap point{{"z", (Matrix(3, 1) << -0.5, 0.4, 1.1).finished()},
                           {"m", (Matrix(3, 1) << 0.2, -0.3, 0.5).finished()},
                           {"raw", (Matrix(3, 3) << -0.2, 0, 0, 0.3, 0.1, 0, -0.1, 0.2, -0.4).finished()},
                           {"ll", Matrix::Constant(1, 1, -0.2)},
                           {"lv", Matrix::Constant(1, 1, 0.3)}};
  const ad::ScalarProgram program = [](ad::Tape&, const ad::LeafMap& l) {
    gp::KernelParamsT<ad::Var> k{l.at("lv"), l.at("ll")};
    gp::InducingSetT<ad::Var> w{l.at("z"), l.at("m"), {l.at("raw")}};
    const auto u = gp::unwhiten(w, k);
    const ad::Var draw = gp::sample_variational_u(u, (Matrix(3, 1) << 0.3, -1.0, 0.7).finished());
    return ad::add(ad::sum(ad::square(draw)), gp::kl_whitened(w));
  };
  EXPECT_LT(ad::grad_check(program, point).max_rel_error, 1e-4);
}

#pragma once

// Sparse GP transition model: d_x independent scalar GPs with ARD
// squared-exponential kernels sharing one set of inducing inputs.
//
// Everything here is templated over the backend T (ad::Matrix or ad::Var) so
// the same code computes plain values and recorded, differentiable ones.

#include <cmath>
#include <numbers>
#include <vector>

#include "envi/ad/ops.hpp"
#include "envi/error.hpp"

namespace envi::gp {

using ad::Index;
using ad::Matrix;

enum class InducingNoise {
  kProcess,  // (K_zz + q_d I)^{-1}
  kNone,     // K_zz^{-1}
};

// Prior mean of the transition. kIdentity models f(x) = x + g(x) with the GP
// on g, which lets random-walk coordinates leave the inducing region.
enum class PriorMean {
  kZero,
  kIdentity,
};

struct GpConfig {
  InducingNoise inducing_noise = InducingNoise::kProcess;
  PriorMean prior_mean = PriorMean::kZero;
  double gram_jitter = 1e-6;
  // Store q(u) through v with u_d = R_d v_d, R_d R_d^T = K_zz,d + jitter I.
  // Consumed by the model layer; the u-space operations below ignore it.
  bool whiten = true;
};

// Log-scale hyperparameters. Row d of log_lengthscale holds the ARD
// lengthscales of output dimension d.
template <class T>
struct KernelParamsT {
  T log_variance;     // 1×dx
  T log_lengthscale;  // dx×dx
};

// Inducing inputs shared across output dims; column d of `mean` is m_d and
// chol_raw[d] stores L_d with its diagonal on log scale.
template <class T>
struct InducingSetT {
  T z;                       // M×dx
  T mean;                    // M×dx
  std::vector<T> chol_raw;   // dx entries, M×M
};

// q(x0) = N(mean, L0 L0^T), L0 = lower_exp_diag(chol_raw).
template <class T>
struct InitialStateT {
  T mean;      // dx×1
  T chol_raw;  // dx×dx
};

template <class T>
struct GaussianBeliefT {
  T mean;  // d×1
  T cov;   // d×d
};

// Per-particle transition moments, both N×dx; `var` is the diagonal of Ξ.
template <class T>
struct MomentsT {
  T mean;
  T var;
};

using KernelParams = KernelParamsT<Matrix>;
using InducingSet = InducingSetT<Matrix>;
using InitialState = InitialStateT<Matrix>;
using GaussianBelief = GaussianBeliefT<Matrix>;
using Moments = MomentsT<Matrix>;

inline Index state_dim(const Matrix& z) { return z.cols(); }

template <class T>
T kernel_matrix(const T& x1, const T& x2, const KernelParamsT<T>& kernel, Index dim) {
  const Index dx = ad::value_of(kernel.log_lengthscale).cols();
  if (ad::value_of(x1).cols() != dx || ad::value_of(x2).cols() != dx) {
    throw ShapeError("kernel_matrix: inputs must have " + std::to_string(dx) + " columns");
  }
  return ad::ard_kernel(x1, x2, ad::row(kernel.log_lengthscale, dim),
                        ad::slice(kernel.log_variance, 0, dim, 1, 1));
}

// u = m + L ε per output dimension; eps is M×dx.
template <class T>
T sample_variational_u(const InducingSetT<T>& inducing, const Matrix& eps) {
  const Matrix& m = ad::value_of(inducing.mean);
  if (eps.rows() != m.rows() || eps.cols() != m.cols()) {
    throw ShapeError("sample_variational_u: eps must be " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
  std::vector<T> cols;
  for (Index d = 0; d < m.cols(); ++d) {
    const T l = ad::lower_exp_diag(inducing.chol_raw[static_cast<std::size_t>(d)]);
    cols.push_back(ad::add(ad::column(inducing.mean, d),
                           ad::matmul(l, ad::lift(inducing.mean, eps.col(d)))));
  }
  return ad::concat_cols(cols);
}

// Factorizations that depend on u but not on the query point, computed once
// per ELBO evaluation and shared by every particle and time step.
template <class T>
struct TransitionCacheT {
  std::vector<T> factor;     // chol(A_d)
  std::vector<T> alpha;      // A_d^{-1} u_d
  std::vector<T> prior_var;  // 1×1: σ²_f,d + q_d
  bool identity_mean = false;
};

template <class T>
T gram_with_noise(const InducingSetT<T>& inducing, const KernelParamsT<T>& kernel,
                  const T& log_q, Index d, const GpConfig& config) {
  const Index m = ad::value_of(inducing.z).rows();
  T gram = kernel_matrix(inducing.z, inducing.z, kernel, d);
  const T eye = ad::lift(gram, Matrix::Identity(m, m));
  if (config.inducing_noise == InducingNoise::kProcess) {
    const T q = ad::exp(ad::slice(log_q, 0, d, 1, 1));
    gram = ad::add(gram, ad::mul(ad::broadcast(q, m, m), eye));
  }
  return ad::add(gram, ad::scale(eye, config.gram_jitter));
}

template <class T>
TransitionCacheT<T> prepare_transition(const InducingSetT<T>& inducing,
                                       const KernelParamsT<T>& kernel, const T& log_q,
                                       const T& u, const GpConfig& config) {
  const Index dx = ad::value_of(inducing.z).cols();
  if (ad::value_of(u).rows() != ad::value_of(inducing.z).rows() || ad::value_of(u).cols() != dx) {
    throw ShapeError("prepare_transition: u must be M×dx");
  }
  TransitionCacheT<T> cache;
  cache.identity_mean = config.prior_mean == PriorMean::kIdentity;
  for (Index d = 0; d < dx; ++d) {
    const T a = gram_with_noise(inducing, kernel, log_q, d, config);
    const T l = ad::cholesky(a, config.gram_jitter);
    cache.factor.push_back(l);
    cache.alpha.push_back(ad::chol_solve(l, ad::column(u, d)));
    cache.prior_var.push_back(ad::add(ad::exp(ad::slice(kernel.log_variance, 0, d, 1, 1)),
                                      ad::exp(ad::slice(log_q, 0, d, 1, 1))));
  }
  return cache;
}

// ξ and diag Ξ for every row of x (N×dx).
template <class T>
MomentsT<T> transition_moments(const T& x, const TransitionCacheT<T>& cache,
                               const InducingSetT<T>& inducing, const KernelParamsT<T>& kernel) {
  const Index n = ad::value_of(x).rows();
  const Index dx = ad::value_of(inducing.z).cols();
  std::vector<T> means, vars;
  for (Index d = 0; d < dx; ++d) {
    const auto di = static_cast<std::size_t>(d);
    const T kxz = kernel_matrix(x, inducing.z, kernel, d);                 // N×M
    const T mean = ad::matmul(kxz, cache.alpha[di]);                        // N×1
    means.push_back(cache.identity_mean ? ad::add(mean, ad::column(x, d)) : mean);
    const T v = ad::tri_solve(cache.factor[di], ad::transpose(kxz));        // M×N
    const T explained = ad::transpose(ad::col_sum(ad::square(v)));         // N×1
    vars.push_back(ad::sub(ad::broadcast(cache.prior_var[di], n, 1), explained));
  }
  return {ad::concat_cols(means), ad::concat_cols(vars)};
}

// p(x_t | u, x_{t-1}) for a single previous state (1×dx or dx×1).
template <class T>
GaussianBeliefT<T> sparse_gp_conditional(const T& x_prev, const InducingSetT<T>& inducing,
                                         const T& u, const KernelParamsT<T>& kernel,
                                         const T& log_q, const GpConfig& config = {}) {
  const Index dx = ad::value_of(inducing.z).cols();
  const T row = ad::value_of(x_prev).rows() == 1 ? x_prev : ad::transpose(x_prev);
  if (ad::value_of(row).cols() != dx) throw ShapeError("sparse_gp_conditional: x_prev has wrong size");
  const auto cache = prepare_transition(inducing, kernel, log_q, u, config);
  const auto m = transition_moments(row, cache, inducing, kernel);
  return {ad::transpose(m.mean), ad::diag_embed(ad::transpose(m.var))};
}

// Closed-form KL(N(mq, Lq Lq^T) || N(mp, Lp Lp^T)) from lower factors.
template <class T>
T kl_from_factors(const T& mean_q, const T& factor_q, const T& mean_p, const T& factor_p) {
  const double k = static_cast<double>(ad::value_of(mean_q).rows());
  const T trace = ad::sum(ad::square(ad::tri_solve(factor_p, factor_q)));
  const T maha = ad::sum(ad::square(ad::tri_solve(factor_p, ad::sub(mean_p, mean_q))));
  const T logdets = ad::sub(ad::logdet_from_factor(factor_p), ad::logdet_from_factor(factor_q));
  return ad::scale(ad::shift(ad::add(ad::add(trace, maha), logdets), -k), 0.5);
}

template <class T>
T kl_gaussian(const GaussianBeliefT<T>& q, const GaussianBeliefT<T>& p,
              double jitter = ad::kDefaultJitter) {
  const Matrix& mq = ad::value_of(q.mean);
  if (mq.cols() != 1 || ad::value_of(p.mean).rows() != mq.rows() ||
      ad::value_of(q.cov).rows() != mq.rows() || ad::value_of(p.cov).rows() != mq.rows()) {
    throw ShapeError("kl_gaussian: mismatched dimensions");
  }
  return kl_from_factors(q.mean, ad::cholesky(q.cov, jitter), p.mean, ad::cholesky(p.cov, jitter));
}

// Σ_d KL(N(m_d, L_d L_d^T) || N(0, K_zz,d + jitter I)).
template <class T>
T kl_inducing(const InducingSetT<T>& inducing, const KernelParamsT<T>& kernel,
              const GpConfig& config = {}) {
  const Index m = ad::value_of(inducing.z).rows();
  const Index dx = ad::value_of(inducing.z).cols();
  if (static_cast<Index>(inducing.chol_raw.size()) != dx) {
    throw ShapeError("kl_inducing: need one covariance factor per output dimension");
  }
  const T zero = ad::lift(inducing.mean, Matrix::Zero(m, 1));
  T total;
  for (Index d = 0; d < dx; ++d) {
    T gram = kernel_matrix(inducing.z, inducing.z, kernel, d);
    gram = ad::add(gram, ad::lift(gram, config.gram_jitter * Matrix::Identity(m, m)));
    const T lk = ad::cholesky(gram, config.gram_jitter);
    const T lq = ad::lower_exp_diag(inducing.chol_raw[static_cast<std::size_t>(d)]);
    const T kl = kl_from_factors(ad::column(inducing.mean, d), lq, zero, lk);
    total = d == 0 ? kl : ad::add(total, kl);
  }
  return total;
}

// Maps a whitened set (mean and factor of v) to the equivalent u-space set:
// mean R m, factor R L. R L is lower triangular with a positive diagonal, so
// it is stored back in the same raw form.
template <class T>
InducingSetT<T> unwhiten(const InducingSetT<T>& whitened, const KernelParamsT<T>& kernel,
                         const GpConfig& config = {}) {
  const Index m = ad::value_of(whitened.z).rows();
  const Index dx = ad::value_of(whitened.z).cols();
  if (static_cast<Index>(whitened.chol_raw.size()) != dx) {
    throw ShapeError("unwhiten: need one covariance factor per output dimension");
  }
  InducingSetT<T> out;
  out.z = whitened.z;
  std::vector<T> means;
  for (Index d = 0; d < dx; ++d) {
    T gram = kernel_matrix(whitened.z, whitened.z, kernel, d);
    gram = ad::add(gram, ad::lift(gram, config.gram_jitter * Matrix::Identity(m, m)));
    const T r = ad::cholesky(gram, config.gram_jitter);
    means.push_back(ad::matmul(r, ad::column(whitened.mean, d)));
    const T f = ad::matmul(r, ad::lower_exp_diag(whitened.chol_raw[static_cast<std::size_t>(d)]));
    const T diagonal = ad::diag(f);
    out.chol_raw.push_back(ad::add(ad::sub(f, ad::diag_embed(diagonal)), ad::diag_embed(ad::log(diagonal))));
  }
  out.mean = ad::concat_cols(means);
  return out;
}

// Σ_d KL(N(m_d, L_d L_d^T) || N(0, I)) for a whitened set. Equals
// kl_inducing on unwhiten(set) without touching the Gram matrix.
template <class T>
T kl_whitened(const InducingSetT<T>& whitened) {
  const Index m = ad::value_of(whitened.z).rows();
  const Index dx = ad::value_of(whitened.z).cols();
  const T zero = ad::lift(whitened.mean, Matrix::Zero(m, 1));
  const T eye = ad::lift(whitened.mean, Matrix::Identity(m, m));
  T total;
  for (Index d = 0; d < dx; ++d) {
    const T lq = ad::lower_exp_diag(whitened.chol_raw[static_cast<std::size_t>(d)]);
    const T kl = kl_from_factors(ad::column(whitened.mean, d), lq, zero, eye);
    total = d == 0 ? kl : ad::add(total, kl);
  }
  return total;
}

// KL(q(x0) || N(prior_mean, prior_cov)).
template <class T>
T kl_initial_state(const InitialStateT<T>& x0, const Matrix& prior_mean, const Matrix& prior_cov) {
  const Matrix prior_factor = ad::cholesky(prior_cov);
  return kl_from_factors(x0.mean, ad::lower_exp_diag(x0.chol_raw), ad::lift(x0.mean, prior_mean),
                         ad::lift(x0.mean, prior_factor));
}

// Posterior of the latent function f (without process noise) at query rows,
// with u marginalised under q(u):
//   mean = k A^{-1} m,  var = σ²_f - k A^{-1} k^T + k A^{-1} S A^{-1} k^T.
Moments function_posterior(const Matrix& x, const InducingSet& inducing, const KernelParams& kernel,
                           const Matrix& log_q, const GpConfig& config = {});

}  // namespace envi::gp

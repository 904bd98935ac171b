#include "envi/gp/gp.hpp"

namespace envi::gp {

Moments function_posterior(const Matrix& x, const InducingSet& inducing, const KernelParams& kernel,
                           const Matrix& log_q, const GpConfig& config) {
  const Index dx = inducing.z.cols();
  Moments out{Matrix(x.rows(), dx), Matrix(x.rows(), dx)};
  for (Index d = 0; d < dx; ++d) {
    const Matrix a = gram_with_noise(inducing, kernel, log_q, d, config);
    const Matrix l = ad::cholesky(a, config.gram_jitter);
    const Matrix kxz = kernel_matrix(x, inducing.z, kernel, d);
    const Matrix proj = ad::chol_solve(l, Matrix(kxz.transpose()));  // A^{-1} k^T, M×n
    const Matrix lq = ad::lower_exp_diag(inducing.chol_raw[static_cast<std::size_t>(d)]);
    const Matrix spread = lq.transpose() * proj;                        // L^T A^{-1} k^T
    out.mean.col(d) = proj.transpose() * inducing.mean.col(d);
    if (config.prior_mean == PriorMean::kIdentity) out.mean.col(d) += x.col(d);
    const double sf2 = std::exp(kernel.log_variance(0, d));
    for (Index i = 0; i < x.rows(); ++i) {
      out.var(i, d) = sf2 - kxz.row(i).dot(proj.col(i)) + spread.col(i).squaredNorm();
    }
  }
  return out;
}

}  // namespace envi::gp

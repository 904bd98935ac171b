#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "envi/models/params.hpp"
#include "envi/rng.hpp"

namespace envi::models {

struct ModelConfig {
  Index state_dim = 1;
  Index obs_dim = 1;
  Index inducing = 15;
  Index particles = 50;
  Matrix emission;  // C, dy×dx; identity-like when left empty
  gp::GpConfig gp;
  enkf::FilterConfig filter;
  int u_samples = 1;      // Monte Carlo samples of u per ELBO evaluation
  int bptt_window = 0;    // 0: differentiate through the full rollout
  Matrix prior_mean;      // p(x0); zeros when empty
  Matrix prior_cov;       // identity when empty
  double init_noise = 0.1;           // initial Q and R diagonals
  std::optional<double> fixed_obs_var;  // pins R to this value, untrained
  bool train_initial_state = true;

  // C, prior mean and covariance with defaults filled in.
  Matrix emission_matrix() const;
  Matrix prior_mean_vector() const;
  Matrix prior_covariance() const;
  void validate() const;
};

// All standard normal draws consumed by one ELBO evaluation.
struct NoiseBundle {
  struct Sample {
    Matrix u;                         // M×dx
    Matrix x0;                        // N×dx
    std::vector<Matrix> transition;   // T of N×dx
    std::vector<Matrix> observation;  // T of N×dy
  };
  std::vector<Sample> samples;
};

NoiseBundle draw_noise(const ModelConfig& config, Index steps, const CounterRng& rng,
                       std::uint64_t stream);

template <class T>
struct ElboT {
  T loglik;
  T kl_x0;
  T kl_u;
  T elbo;
  Matrix filtered_mean;  // T×dx, first u sample
  Matrix filtered_var;   // T×dx
};

struct ElboBreakdown {
  double loglik = 0;
  double kl_x0 = 0;
  double kl_u = 0;
  double elbo = 0;
  Matrix filtered_mean;
  Matrix filtered_var;
};

template <class T>
ElboBreakdown to_breakdown(const ElboT<T>& e) {
  return {ad::value_of(e.loglik)(0, 0), ad::value_of(e.kl_x0)(0, 0), ad::value_of(e.kl_u)(0, 0),
          ad::value_of(e.elbo)(0, 0), e.filtered_mean, e.filtered_var};
}

namespace detail {

// Re-throws `error` with the time step prefixed, preserving its type.
[[noreturn]] void rethrow_with_step(int step);

Matrix row_variance(const Matrix& particles);

}  // namespace detail

// q(u) in u-space whichever way the parameters store it.
template <class T>
gp::InducingSetT<T> inducing_posterior(const ModelViewT<T>& view, const ModelConfig& config) {
  return config.gp.whiten ? gp::unwhiten(view.inducing, view.kernel, config.gp) : view.inducing;
}

template <class T>
T inducing_kl(const ModelViewT<T>& view, const ModelConfig& config) {
  return config.gp.whiten ? gp::kl_whitened(view.inducing) : gp::kl_inducing(view.inducing, view.kernel, config.gp);
}

// Posterior of the transition function f at query rows (no process noise).
gp::Moments transition_posterior(const ModelConfig& config, const ParamMap& params, const Matrix& x);

// Initial ensemble x0 = m0 + eps L0^T (N×dx).
template <class T>
T sample_initial_ensemble(const gp::InitialStateT<T>& x0, const Matrix& eps) {
  const Index n = eps.rows();
  const Index dx = eps.cols();
  const T l0 = ad::lower_exp_diag(x0.chol_raw);
  return ad::add(ad::broadcast(ad::transpose(x0.mean), n, dx),
                 ad::matmul(ad::lift(x0.mean, eps), ad::transpose(l0)));
}

// Per-step filtered summaries of a rollout (values only).
struct RolloutTrace {
  Matrix mean;           // T×dx
  Matrix var;            // T×dx
  Matrix last_ensemble;  // N×dx
};

// Log-likelihood of y (T×dy) under one EnKF rollout conditioned on u.
template <class T>
T rollout_loglik(const ModelViewT<T>& view, const T& u, const Matrix& y,
                 const NoiseBundle::Sample& noise, const ModelConfig& config,
                 RolloutTrace* trace = nullptr) {
  const auto cache = gp::prepare_transition(view.inducing, view.kernel, view.log_q, u, config.gp);
  T particles = sample_initial_ensemble(view.x0, noise.x0);
  T total = ad::lift(u, Matrix::Zero(1, 1));
  if (trace) {
    trace->mean.resize(y.rows(), config.state_dim);
    trace->var.resize(y.rows(), config.state_dim);
  }
  for (Index t = 0; t < y.rows(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    try {
      if (config.bptt_window > 0 && t > 0 && t % config.bptt_window == 0) {
        particles = ad::detach(particles);
      }
      const auto moments = gp::transition_moments(particles, cache, view.inducing, view.kernel);
      const T propagated = enkf::propagate_ensemble(moments, noise.transition[ti]);
      auto step = enkf::analysis_step(propagated, view.emission, Matrix(y.row(t)),
                                      noise.observation[ti], config.filter);
      particles = step.filtered;
      total = ad::add(total, step.log_likelihood);
    } catch (const Error&) {
      detail::rethrow_with_step(static_cast<int>(t + 1));
    }
    if (trace) {
      trace->mean.row(t) = ad::value_of(particles).colwise().mean();
      trace->var.row(t) = detail::row_variance(ad::value_of(particles));
    }
  }
  if (trace) trace->last_ensemble = ad::value_of(particles);
  return total;
}

// ELBO = Σ_t log p(y_t | u, y_{1:t-1}) - KL(q(x0)||p(x0)) - KL(q(u)||p(u)),
// averaging the likelihood term over the u samples in `noise`.
template <class T>
ElboT<T> envi_elbo(const ModelViewT<T>& view, const Matrix& y, const NoiseBundle& noise,
                   const ModelConfig& config) {
  if (noise.samples.empty()) throw InputError("envi_elbo: empty noise bundle");
  ElboT<T> out;
  const auto q_u = inducing_posterior(view, config);
  for (std::size_t s = 0; s < noise.samples.size(); ++s) {
    const T u = gp::sample_variational_u(q_u, noise.samples[s].u);
    RolloutTrace trace;
    const T ll = rollout_loglik(view, u, y, noise.samples[s], config, s == 0 ? &trace : nullptr);
    if (s == 0) {
      out.filtered_mean = std::move(trace.mean);
      out.filtered_var = std::move(trace.var);
    }
    out.loglik = s == 0 ? ll : ad::add(out.loglik, ll);
  }
  if (noise.samples.size() > 1) {
    out.loglik = ad::scale(out.loglik, 1.0 / static_cast<double>(noise.samples.size()));
  }
  out.kl_x0 = gp::kl_initial_state(view.x0, config.prior_mean_vector(), config.prior_covariance());
  out.kl_u = inducing_kl(view, config);
  out.elbo = ad::sub(ad::sub(out.loglik, out.kl_x0), out.kl_u);
  return out;
}

// ---- training ---------------------------------------------------------------

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamMap first;
  ParamMap second;
  long long steps = 0;
};

// One ascent step on `params` along `grads` (gradients of the objective to
// maximise). Frozen or gradient-less parameters are left untouched.
void adam_ascent(ParamMap& params, const ad::Gradients& grads, AdamState& adam, const AdamConfig& config);

struct TrainerState {
  ParamMap params;
  std::set<std::string> frozen;
  AdamState adam;
  long long iteration = 0;
  std::uint64_t seed = 0;
};

struct HistoryRow {
  long long iteration = 0;
  double elbo = 0;
  double loglik = 0;
  double kl_x0 = 0;
  double kl_u = 0;
  double grad_norm = 0;
  double seconds = 0;
};

struct TrainConfig {
  int iterations = 1000;
  AdamConfig adam;
  std::function<void(const HistoryRow&)> on_iteration;
};

struct TrainResult {
  TrainerState state;
  std::vector<HistoryRow> history;
};

// Data-anchored initial parameters (see README for the scheme).
TrainerState initialize(const ModelConfig& config, const Matrix& y, std::uint64_t seed);

// Noise stream used by training iteration `iteration`.
std::uint64_t training_stream(long long iteration);

// Evaluates the ELBO and its gradient at the current parameters.
struct ElboGradient {
  ElboBreakdown breakdown;
  ad::Gradients grads;
  double grad_norm = 0;
};
ElboGradient elbo_gradient(const ModelConfig& config, const TrainerState& state, const Matrix& y,
                           const NoiseBundle& noise);

TrainResult train_envi(const ModelConfig& config, TrainerState state, const Matrix& y,
                       const TrainConfig& train);

// ---- inference with fixed parameters ---------------------------------------

struct FilterOutput {
  Matrix mean;  // T×dx
  Matrix var;   // T×dx
  double loglik = 0;
  Matrix last_ensemble;  // N×dx
};

// EnKF pass with the posterior mean of u (no Monte Carlo over u).
FilterOutput filter_states(const ModelConfig& config, const ParamMap& params, const Matrix& y,
                           const CounterRng& rng, std::uint64_t stream);

struct Forecast {
  Matrix mean;  // H×dy
  Matrix var;   // H×dy, includes R
};

// Rolls `ensemble` forward without updates, using the posterior mean of u.
Forecast predict_forward(const ModelConfig& config, const ParamMap& params, const Matrix& ensemble,
                         int horizon, const CounterRng& rng, std::uint64_t stream);

// ---- online learning -------------------------------------------------------

struct OnlineConfig {
  int inner_iterations = 1;
  AdamConfig adam;
};

struct OnlineState {
  TrainerState trainer;
  Matrix ensemble;  // filtered particles at time t
  long long t = 0;
};

struct OnlineStepResult {
  std::vector<double> objectives;  // log p(y_t | u, y_{1:t-1}) - KL(q(u)||p(u)) per inner iteration
  std::vector<double> logliks;
  std::vector<double> kl_u;
  std::vector<double> grad_norms;
  Matrix filtered_mean;            // 1×dx
  Matrix filtered_var;             // 1×dx
};

OnlineState start_online(const ModelConfig& config, TrainerState trainer);

OnlineStepResult oenvi_step(const ModelConfig& config, OnlineState& state, const Matrix& y_t,
                            const OnlineConfig& online);

// ---- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  TrainerState state;
  std::map<std::string, std::string> config_echo;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace envi::models

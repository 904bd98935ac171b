#include "envi/models/gpssm.hpp"

#include <chrono>
#include <cmath>
#include <deque>

namespace envi::models {
namespace {

constexpr std::size_t kGuardWindow = 50;

// Sequential offsets inside one noise stream.
class NoiseCursor {
 public:
  NoiseCursor(const CounterRng& rng, std::uint64_t stream) : rng_(rng), stream_(stream) {}

  Matrix next(Index rows, Index cols) {
    Matrix out = rng_.normal_matrix(stream_, rows, cols, offset_);
    offset_ += static_cast<std::uint64_t>(rows * cols);
    return out;
  }

 private:
  const CounterRng& rng_;
  std::uint64_t stream_;
  std::uint64_t offset_ = 0;
};

double grad_norm(const ad::Gradients& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

std::string strip_pivot(const std::string& what) {
  const auto at = what.rfind(" (failing pivot");
  return at == std::string::npos ? what : what.substr(0, at);
}

}  // namespace

namespace detail {

void rethrow_with_step(int step) {
  const std::string prefix = "step " + std::to_string(step) + ": ";
  try {
    throw;
  } catch (const FactorizationError& e) {
    throw FactorizationError(prefix + strip_pivot(e.what()), e.pivot());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const TapeError& e) {
    throw TapeError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

Matrix row_variance(const Matrix& particles) {
  const Index n = particles.rows();
  const Matrix centered = particles.rowwise() - particles.colwise().mean();
  return centered.colwise().squaredNorm() / static_cast<double>(std::max<Index>(n - 1, 1));
}

}  // namespace detail

Matrix ModelConfig::emission_matrix() const {
  if (emission.size() > 0) return emission;
  return Matrix::Identity(obs_dim, state_dim);
}

Matrix ModelConfig::prior_mean_vector() const {
  return prior_mean.size() > 0 ? prior_mean : Matrix::Zero(state_dim, 1);
}

Matrix ModelConfig::prior_covariance() const {
  return prior_cov.size() > 0 ? prior_cov : Matrix::Identity(state_dim, state_dim);
}

void ModelConfig::validate() const {
  if (state_dim < 1 || obs_dim < 1) throw InputError("model dimensions must be positive");
  if (inducing < 1) throw InputError("need at least one inducing point");
  if (particles < 2) throw InputError("ensemble needs at least 2 particles");
  if (u_samples < 1) throw InputError("need at least one u sample");
  const Matrix c = emission_matrix();
  if (c.rows() != obs_dim || c.cols() != state_dim) throw ShapeError("emission matrix must be dy×dx");
  if (prior_mean_vector().rows() != state_dim || prior_covariance().rows() != state_dim) {
    throw ShapeError("p(x0) dimensions do not match the state");
  }
}

NoiseBundle draw_noise(const ModelConfig& config, Index steps, const CounterRng& rng,
                       std::uint64_t stream) {
  NoiseCursor cursor(rng, stream);
  NoiseBundle out;
  for (int s = 0; s < config.u_samples; ++s) {
    NoiseBundle::Sample sample;
    sample.u = cursor.next(config.inducing, config.state_dim);
    sample.x0 = cursor.next(config.particles, config.state_dim);
    for (Index t = 0; t < steps; ++t) {
      sample.transition.push_back(cursor.next(config.particles, config.state_dim));
      sample.observation.push_back(cursor.next(config.particles, config.obs_dim));
    }
    out.samples.push_back(std::move(sample));
  }
  return out;
}

void adam_ascent(ParamMap& params, const ad::Gradients& grads, AdamState& adam, const AdamConfig& config) {
  ++adam.steps;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.steps));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.steps));
  for (const auto& [name, g] : grads) {
    auto p = params.find(name);
    if (p == params.end()) continue;
    Matrix& m = adam.first[name];
    Matrix& v = adam.second[name];
    if (m.size() == 0) m = Matrix::Zero(g.rows(), g.cols());
    if (v.size() == 0) v = Matrix::Zero(g.rows(), g.cols());
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    p->second.array() += config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

TrainerState initialize(const ModelConfig& config, const Matrix& y, std::uint64_t seed) {
  config.validate();
  if (y.rows() < 1 || y.cols() != config.obs_dim) throw ShapeError("initialize: y must be T×dy");
  const Index dx = config.state_dim;
  const Index m = config.inducing;
  const Matrix c = config.emission_matrix();
  const Matrix pinv = c.completeOrthogonalDecomposition().pseudoInverse();
  const Matrix pseudo = y * pinv.transpose();  // T×dx
  const Eigen::RowVectorXd lo = pseudo.colwise().minCoeff();
  const Eigen::RowVectorXd hi = pseudo.colwise().maxCoeff();

  const CounterRng rng(seed);
  const Matrix unit = rng.uniform_matrix(streams::kInit, m, dx);

  TrainerState state;
  state.seed = seed;
  ParamMap& p = state.params;
  p[names::kLogVariance] = Matrix::Zero(1, dx);
  p[names::kLogLengthscale] = Matrix::Zero(dx, dx);
  p[names::kLogQ] = Matrix::Constant(1, dx, std::log(config.init_noise));
  p[names::kLogR] = Matrix::Constant(1, config.obs_dim,
                                     std::log(config.fixed_obs_var.value_or(config.init_noise)));
  Matrix z(m, dx);
  for (Index k = 0; k < dx; ++k) z.col(k) = (lo[k] + (hi[k] - lo[k]) * unit.col(k).array()).matrix();
  p[names::kZ] = z;
  p[names::kInducingMean] = Matrix::Zero(m, dx);
  for (Index d = 0; d < dx; ++d) {
    p[names::inducing_chol(d)] = Matrix::Identity(m, m) * std::log(0.1);
  }
  p[names::kX0Mean] = pseudo.row(0).transpose();
  p[names::kX0Chol] = Matrix::Identity(dx, dx) * std::log(0.1);
  if (config.fixed_obs_var) state.frozen.insert(names::kLogR);
  if (!config.train_initial_state) {
    state.frozen.insert(names::kX0Mean);
    state.frozen.insert(names::kX0Chol);
  }
  return state;
}

std::uint64_t training_stream(long long iteration) {
  return streams::kTraining + static_cast<std::uint64_t>(iteration);
}

ElboGradient elbo_gradient(const ModelConfig& config, const TrainerState& state, const Matrix& y,
                           const NoiseBundle& noise) {
  ad::Tape tape;
  const auto view = record_view(tape, state.params, state.frozen, config.emission_matrix());
  const auto elbo = envi_elbo(view, y, noise, config);
  ElboGradient out;
  out.breakdown = to_breakdown(elbo);
  if (!std::isfinite(out.breakdown.elbo)) return out;
  out.grads = tape.backward(elbo.elbo);
  out.grad_norm = grad_norm(out.grads);
  return out;
}

TrainResult train_envi(const ModelConfig& config, TrainerState state, const Matrix& y,
                       const TrainConfig& train) {
  config.validate();
  validate_params(state.params, config.state_dim, config.obs_dim, config.inducing);
  const CounterRng rng(state.seed);
  TrainResult result;
  double initial = 0.0;
  // Guard runs on a trailing mean: a single draw can spike by orders of
  // magnitude when two inducing inputs pass through each other.
  std::deque<double> recent;
  double recent_sum = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < train.iterations; ++i) {
    const NoiseBundle noise = draw_noise(config, y.rows(), rng, training_stream(state.iteration));
    ElboGradient eval;
    try {
      eval = elbo_gradient(config, state, y, noise);
    } catch (const Error& e) {
      throw NumericalError("iteration " + std::to_string(state.iteration) + ": " + e.what());
    }
    const double elbo = eval.breakdown.elbo;
    if (!std::isfinite(elbo) || !std::isfinite(eval.grad_norm)) {
      throw NumericalError("non-finite ELBO at iteration " + std::to_string(state.iteration));
    }
    if (i == 0) initial = elbo;
    recent.push_back(elbo);
    recent_sum += elbo;
    if (recent.size() > kGuardWindow) {
      recent_sum -= recent.front();
      recent.pop_front();
    }
    const double smoothed = recent_sum / static_cast<double>(recent.size());
    if (smoothed < initial - 10.0 * std::abs(initial)) {
      throw NumericalError("ELBO diverged at iteration " + std::to_string(state.iteration) + ": " +
                           std::to_string(smoothed) + " (" + std::to_string(kGuardWindow) +
                           "-iteration mean) from initial " + std::to_string(initial));
    }
    HistoryRow row;
    row.iteration = state.iteration;
    row.elbo = elbo;
    row.loglik = eval.breakdown.loglik;
    row.kl_x0 = eval.breakdown.kl_x0;
    row.kl_u = eval.breakdown.kl_u;
    row.grad_norm = eval.grad_norm;
    adam_ascent(state.params, eval.grads, state.adam, train.adam);
    ++state.iteration;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (train.on_iteration) train.on_iteration(row);
    result.history.push_back(row);
  }
  result.state = std::move(state);
  return result;
}

gp::Moments transition_posterior(const ModelConfig& config, const ParamMap& params, const Matrix& x) {
  const auto view = plain_view(params, config.emission_matrix());
  return gp::function_posterior(x, inducing_posterior(view, config), view.kernel, view.log_q, config.gp);
}

FilterOutput filter_states(const ModelConfig& config, const ParamMap& params, const Matrix& y,
                           const CounterRng& rng, std::uint64_t stream) {
  config.validate();
  ModelConfig single = config;
  single.u_samples = 1;
  const auto view = plain_view(params, config.emission_matrix());
  const NoiseBundle noise = draw_noise(single, y.rows(), rng, stream);
  RolloutTrace trace;
  FilterOutput out;
  const Matrix u = inducing_posterior(view, config).mean;
  out.loglik = rollout_loglik(view, u, y, noise.samples[0], config, &trace)(0, 0);
  out.mean = std::move(trace.mean);
  out.var = std::move(trace.var);
  out.last_ensemble = std::move(trace.last_ensemble);
  return out;
}

Forecast predict_forward(const ModelConfig& config, const ParamMap& params, const Matrix& ensemble,
                         int horizon, const CounterRng& rng, std::uint64_t stream) {
  if (horizon < 0) throw InputError("predict_forward: negative horizon");
  const auto view = plain_view(params, config.emission_matrix());
  const Index dy = view.emission.c.rows();
  if (ensemble.cols() != view.inducing.z.cols()) throw ShapeError("predict_forward: ensemble has wrong width");
  Forecast out{Matrix(horizon, dy), Matrix(horizon, dy)};
  if (horizon == 0) return out;
  const Matrix u = inducing_posterior(view, config).mean;
  const auto cache = gp::prepare_transition(view.inducing, view.kernel, view.log_q, u, config.gp);
  const Eigen::RowVectorXd r = view.emission.log_r.array().exp();
  NoiseCursor cursor(rng, stream);
  Matrix particles = ensemble;
  for (int h = 0; h < horizon; ++h) {
    const auto moments = gp::transition_moments(particles, cache, view.inducing, view.kernel);
    particles = enkf::propagate_ensemble(moments, cursor.next(particles.rows(), particles.cols()));
    const Matrix obs = particles * view.emission.c.transpose();
    out.mean.row(h) = obs.colwise().mean();
    out.var.row(h) = (particles.rows() > 1 ? detail::row_variance(obs) : Matrix::Zero(1, dy)) + Matrix(r);
  }
  return out;
}

OnlineState start_online(const ModelConfig& config, TrainerState trainer) {
  config.validate();
  validate_params(trainer.params, config.state_dim, config.obs_dim, config.inducing);
  const CounterRng rng(trainer.seed);
  const auto view = plain_view(trainer.params, config.emission_matrix());
  OnlineState state;
  state.ensemble = sample_initial_ensemble(
      view.x0, rng.normal_matrix(streams::kOnline, config.particles, config.state_dim));
  state.trainer = std::move(trainer);
  return state;
}

OnlineStepResult oenvi_step(const ModelConfig& config, OnlineState& state, const Matrix& y_t,
                            const OnlineConfig& online) {
  const Matrix y_row = y_t.rows() == 1 ? y_t : Matrix(y_t.transpose());
  if (y_row.rows() != 1 || y_row.cols() != config.obs_dim) throw ShapeError("oenvi_step: y_t must have dy entries");
  const long long t = state.t + 1;
  const CounterRng rng(state.trainer.seed);
  NoiseCursor cursor(rng, streams::kOnline + static_cast<std::uint64_t>(t));
  const Matrix emission = config.emission_matrix();

  struct StepNoise {
    Matrix u, transition, observation;
  };
  const auto draw = [&] {
    StepNoise n;
    n.u = cursor.next(config.inducing, config.state_dim);
    n.transition = cursor.next(config.particles, config.state_dim);
    n.observation = cursor.next(config.particles, config.obs_dim);
    return n;
  };

  OnlineStepResult out;
  StepNoise noise = draw();
  try {
    for (int k = 0; k < online.inner_iterations; ++k) {
      if (k > 0) noise = draw();
      ad::Tape tape;
      const auto view = record_view(tape, state.trainer.params, state.trainer.frozen, emission);
      const ad::Var u = gp::sample_variational_u(inducing_posterior(view, config), noise.u);
      const auto cache = gp::prepare_transition(view.inducing, view.kernel, view.log_q, u, config.gp);
      const ad::Var prev = tape.constant(state.ensemble);
      const auto moments = gp::transition_moments(prev, cache, view.inducing, view.kernel);
      const ad::Var propagated = enkf::propagate_ensemble(moments, noise.transition);
      const auto step = enkf::analysis_step(propagated, view.emission, y_row, noise.observation, config.filter);
      const ad::Var kl = inducing_kl(view, config);
      const ad::Var objective = ad::sub(step.log_likelihood, kl);
      const double value = objective.scalar();
      if (!std::isfinite(value)) throw NumericalError("non-finite online objective");
      const auto grads = tape.backward(objective);
      out.objectives.push_back(value);
      out.logliks.push_back(step.log_likelihood.scalar());
      out.kl_u.push_back(kl.scalar());
      out.grad_norms.push_back(grad_norm(grads));
      adam_ascent(state.trainer.params, grads, state.trainer.adam, online.adam);
      ++state.trainer.iteration;
    }
    // Advance the stored ensemble with the final parameters.
    const auto view = plain_view(state.trainer.params, emission);
    const Matrix u = gp::sample_variational_u(inducing_posterior(view, config), noise.u);
    const auto cache = gp::prepare_transition(view.inducing, view.kernel, view.log_q, u, config.gp);
    const auto moments = gp::transition_moments(state.ensemble, cache, view.inducing, view.kernel);
    const Matrix propagated = enkf::propagate_ensemble(moments, noise.transition);
    state.ensemble = enkf::analysis_step(propagated, view.emission, y_row, noise.observation, config.filter).filtered;
  } catch (const Error&) {
    detail::rethrow_with_step(static_cast<int>(t));
  }
  state.t = t;
  out.filtered_mean = state.ensemble.colwise().mean();
  out.filtered_var = detail::row_variance(state.ensemble);
  return out;
}

}  // namespace envi::models

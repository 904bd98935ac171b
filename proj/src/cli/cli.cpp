#include "envi/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <Eigen/Core>

#include "envi/baselines/kalman.hpp"
#include "envi/cli/config.hpp"
#include "envi/data/dataset.hpp"
#include "envi/error.hpp"
#include "envi/models/gpssm.hpp"

namespace envi::cli {
namespace {

using json = nlohmann::json;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

constexpr Index kOnlineWindow = 120;

// Data in original units plus its model-space view.
struct Prepared {
  data::Dataset raw;
  Matrix y;  // all rows, model units
  std::optional<data::Standardization> stats;
  Index train_rows = 0;
};

struct Run {
  std::string command;
  RunConfig config;
  std::filesystem::path out;
  std::optional<models::Checkpoint> checkpoint;
};

// Malformed input files surface as IoError so they share an exit code with
// missing ones.
template <class F>
auto reading(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const IoError&) {
    throw;
  } catch (const InputError& e) {
    throw IoError(e.what());
  }
}

std::string join(const Eigen::RowVectorXd& v) {
  std::ostringstream s;
  s << std::setprecision(17);
  for (Index i = 0; i < v.size(); ++i) s << (i ? " " : "") << v(i);
  return s.str();
}

Eigen::RowVectorXd split_numbers(const std::string& text, const std::string& what) {
  std::istringstream in(text);
  std::vector<double> values;
  double v = 0;
  while (in >> v) values.push_back(v);
  if (!in.eof()) throw IoError("checkpoint: malformed " + what);
  return Eigen::Map<Eigen::RowVectorXd>(values.data(), static_cast<Index>(values.size()));
}

json to_json(const Matrix& m) {
  if (m.rows() == 1 || m.cols() == 1) return std::vector<double>(m.data(), m.data() + m.size());
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Eigen::RowVectorXd row = m.row(r);
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

models::ModelConfig model_config(const RunConfig& c, Index obs_dim) {
  models::ModelConfig m;
  m.state_dim = c.integer("dx");
  m.obs_dim = obs_dim;
  m.inducing = c.integer("M");
  m.particles = c.integer("N");
  m.gp.inducing_noise = c.str("inducing_noise") == "none" ? gp::InducingNoise::kNone : gp::InducingNoise::kProcess;
  m.gp.whiten = c.flag("whiten");
  m.gp.prior_mean = c.str("prior_mean") == "identity" ? gp::PriorMean::kIdentity : gp::PriorMean::kZero;
  m.filter.ensemble_jitter = c.num("lambda_ens");
  m.filter.likelihood = c.str("step_likelihood") == "literal" ? enkf::LikelihoodVariant::kLiteral : enkf::LikelihoodVariant::kWithR;
  m.u_samples = static_cast<int>(c.integer("u_samples"));
  m.init_noise = c.num("init_noise");
  m.train_initial_state = c.flag("train_x0");
  if (c.flag("fix_r")) m.fixed_obs_var = c.num("sigmaR2");
  m.validate();
  return m;
}

// Loads or simulates the dataset named by the (resolved) config.
data::Dataset generate(const RunConfig& c) {
  const std::string& name = c.str("dataset");
  const int steps = static_cast<int>(c.integer("T"));
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  if (steps < 1) throw InputError("T must be at least 1");
  if (name == "kink") return data::simulate_kink(steps, c.num("sigmaQ2"), c.num("sigmaR2"), seed);
  baselines::CarTrackSettings settings;
  settings.obs_std = std::sqrt(c.num("sigmaR2"));
  return data::simulate_cartrack(steps, seed, settings);
}

Prepared prepare(const RunConfig& c, data::Dataset raw, Index train_rows,
                 const std::optional<data::Standardization>& fixed_stats = std::nullopt) {
  Prepared p;
  p.train_rows = train_rows;
  if (p.train_rows < 2 || p.train_rows > raw.steps()) {
    throw InputError("training span of " + std::to_string(p.train_rows) + " rows is outside the dataset");
  }
  if (fixed_stats) {
    p.stats = fixed_stats;
    p.y = (raw.y.rowwise() - fixed_stats->mean).array().rowwise() / fixed_stats->scale.array();
  } else if (c.flag("standardize")) {
    const auto z = data::standardize(raw, static_cast<double>(p.train_rows) / static_cast<double>(raw.steps()));
    p.stats = z.stats;
    p.y = z.y;
  } else {
    p.y = raw.y;
  }
  p.raw = std::move(raw);
  return p;
}

Index training_rows(const RunConfig& c, Index total) {
  return std::max<Index>(2, static_cast<Index>(std::llround(c.num("split") * static_cast<double>(total))));
}

// States live in observation units only when C is the identity.
bool states_in_obs_units(const models::ModelConfig& m) { return m.state_dim == m.obs_dim; }

Matrix to_original(const Matrix& model_units, const std::optional<data::Standardization>& stats) {
  if (!stats) return model_units;
  return data::unstandardize(model_units, *stats);
}

Matrix var_to_original(const Matrix& var, const std::optional<data::Standardization>& stats) {
  if (!stats) return var;
  return var.array().rowwise() * stats->scale.array().square();
}

void write_states(const std::filesystem::path& path, const Matrix& mean, const Matrix& var) {
  std::ostringstream s;
  s << std::setprecision(17) << "t";
  const Index d = mean.cols();
  for (const char* part : {"mean", "lower", "upper"}) {
    for (Index j = 0; j < d; ++j) s << ',' << part << j + 1;
  }
  s << '\n';
  for (Index t = 0; t < mean.rows(); ++t) {
    s << t + 1;
    for (Index j = 0; j < d; ++j) s << ',' << mean(t, j);
    for (Index j = 0; j < d; ++j) s << ',' << mean(t, j) - 2.0 * std::sqrt(var(t, j));
    for (Index j = 0; j < d; ++j) s << ',' << mean(t, j) + 2.0 * std::sqrt(var(t, j));
    s << '\n';
  }
  write_text(path, s.str());
}

void write_history(const std::filesystem::path& path, const std::vector<models::HistoryRow>& rows) {
  std::ostringstream s;
  s << std::setprecision(17) << "iteration,elbo,loglik,kl_x0,kl_u,grad_norm,seconds\n";
  for (const auto& r : rows) {
    s << r.iteration << ',' << r.elbo << ',' << r.loglik << ',' << r.kl_x0 << ',' << r.kl_u << ','
      << r.grad_norm << ',' << r.seconds << '\n';
  }
  write_text(path, s.str());
}

void write_forecast(const std::filesystem::path& path, const models::Forecast& f, Index first_step) {
  std::ostringstream s;
  s << std::setprecision(17) << "t";
  for (Index j = 0; j < f.mean.cols(); ++j) s << ",mean" << j + 1;
  for (Index j = 0; j < f.mean.cols(); ++j) s << ",var" << j + 1;
  s << '\n';
  for (Index h = 0; h < f.mean.rows(); ++h) {
    s << first_step + h + 1;
    for (Index j = 0; j < f.mean.cols(); ++j) s << ',' << f.mean(h, j);
    for (Index j = 0; j < f.var.cols(); ++j) s << ',' << f.var(h, j);
    s << '\n';
  }
  write_text(path, s.str());
}

void write_metrics(const Run& run, const json& metrics) {
  write_text(run.out / "metrics.json", metrics.dump(2) + "\n");
}

std::map<std::string, std::string> checkpoint_echo(const RunConfig& c, const Prepared& p) {
  auto echo = c.values();
  if (p.stats) {
    echo["stats.mean"] = join(p.stats->mean);
    echo["stats.scale"] = join(p.stats->scale);
  }
  echo["stats.train_rows"] = std::to_string(p.train_rows);
  echo["obs_dim"] = std::to_string(p.y.cols());
  return echo;
}

std::optional<data::Standardization> stats_from(const models::Checkpoint& ck) {
  const auto& e = ck.config_echo;
  if (!e.count("stats.mean")) return std::nullopt;
  data::Standardization s;
  s.mean = split_numbers(e.at("stats.mean"), "stats.mean");
  s.scale = split_numbers(e.at("stats.scale"), "stats.scale");
  s.train_rows = e.count("stats.train_rows") ? std::stoll(e.at("stats.train_rows")) : 0;
  if (s.mean.size() != s.scale.size()) throw IoError("checkpoint: statistics sizes differ");
  return s;
}

// Filtering, transition and forecast metrics for a fitted parameter set.
json evaluate(const Run& run, const models::ModelConfig& mc, const models::ParamMap& params,
              const Prepared& p) {
  const RunConfig& c = run.config;
  const CounterRng rng(static_cast<std::uint64_t>(c.integer("seed")));
  json m;
  const Matrix y_train = p.y.topRows(p.train_rows);
  const auto filtered = models::filter_states(mc, params, y_train, rng, streams::kFilter);
  m["filter_loglik"] = filtered.loglik;

  const bool obs_units = states_in_obs_units(mc);
  const Matrix mean = obs_units ? to_original(filtered.mean, p.stats) : filtered.mean;
  const Matrix var = obs_units ? var_to_original(filtered.var, p.stats) : filtered.var;
  write_states(run.out / "states.csv", mean, var);

  const auto& raw = p.raw;
  if (raw.has_truth() && raw.x_true.cols() == mean.cols() && obs_units) {
    const Matrix truth = raw.x_true.topRows(p.train_rows);
    m["state_rmse"] = data::state_rmse(mean, truth);
    m["observation_rmse"] = data::state_rmse(raw.y.topRows(p.train_rows), truth);
  }
  if (c.str("dataset") == "cartrack") {
    baselines::CarTrackSettings settings;
    settings.obs_std = std::sqrt(c.num("sigmaR2"));
    const auto kf = baselines::kalman_filter(baselines::cartrack_model(settings), raw.y.topRows(p.train_rows));
    m["kf_state_rmse"] = data::state_rmse(kf.filtered_means(), raw.x_true.topRows(p.train_rows));
  }
  if (c.str("dataset") == "kink" && !p.stats) {
    const Eigen::VectorXd xs = raw.x_true.topRows(p.train_rows).col(0);
    const auto post = models::transition_posterior(mc, params, xs);
    const Eigen::VectorXd truth = xs.unaryExpr(&data::kink_true);
    m["transition_mse"] = data::transition_mse(post.mean.col(0), truth);
    m["transition_log_density"] = data::transition_log_density(post.mean.col(0), post.var.col(0), truth);
    const Eigen::VectorXd grid = data::uniform_grid(xs.minCoeff(), xs.maxCoeff());
    const auto gpost = models::transition_posterior(mc, params, grid);
    const Eigen::VectorXd gtruth = grid.unaryExpr(&data::kink_true);
    m["grid_transition_mse"] = data::transition_mse(gpost.mean.col(0), gtruth);
    m["grid_transition_log_density"] = data::transition_log_density(gpost.mean.col(0), gpost.var.col(0), gtruth);
  }
  m["learned_q"] = to_json(params.at(models::names::kLogQ).array().exp().matrix());
  m["learned_r"] = to_json(params.at(models::names::kLogR).array().exp().matrix());

  const Index remaining = p.y.rows() - p.train_rows;
  const Index horizon = std::min<Index>(c.integer("horizon"), remaining);
  if (horizon > 0) {
    const auto f = models::predict_forward(mc, params, filtered.last_ensemble, static_cast<int>(horizon), rng,
                                           streams::kForecast);
    models::Forecast orig{to_original(f.mean, p.stats), var_to_original(f.var, p.stats)};
    write_forecast(run.out / "forecast.csv", orig, p.train_rows);
    m["forecast_horizon"] = horizon;
    m["forecast_rmse"] = data::forecast_rmse(orig.mean, raw.y.middleRows(p.train_rows, horizon));
  }
  return m;
}

data::Dataset load_dataset(RunConfig& c, const std::string& command) {
  const std::string& name = c.str("dataset");
  if (name.rfind("csv:", 0) == 0) {
    data::Dataset ds = reading([&] { return data::load_csv(name.substr(4)); });
    if (c.is_auto("T")) c.set("T", std::to_string(ds.steps()));
    const Index steps = c.integer("T");
    if (steps < 2 || steps > ds.steps()) {
      throw InputError("T=" + std::to_string(steps) + " outside the " + std::to_string(ds.steps()) + " rows of " +
                       name.substr(4));
    }
    ds.y = ds.y.topRows(steps).eval();
    if (ds.has_truth()) ds.x_true = ds.x_true.topRows(steps).eval();
    c.resolve(command, ds.y.cols());
    return ds;
  }
  return generate(c);
}

void echo_config(const Run& run) { write_text(run.out / "config.txt", run.config.echo()); }

int cmd_simulate(Run& run, std::ostream& out) {
  if (run.config.str("dataset").rfind("csv:", 0) == 0) throw InputError("simulate needs a builtin dataset");
  const auto ds = generate(run.config);
  data::write_csv((run.out / "data.csv").string(), ds);
  echo_config(run);
  out << "wrote " << (run.out / "data.csv").string() << " (" << ds.steps() << " rows)\n";
  return kOk;
}

// train and eval: fit (or resume/load) then evaluate.
int cmd_fit(Run& run, std::ostream& out, bool train) {
  RunConfig& c = run.config;
  data::Dataset raw = load_dataset(c, run.command);
  const Prepared p = prepare(c, std::move(raw), training_rows(c, c.integer("T")),
                             run.checkpoint ? stats_from(*run.checkpoint) : std::nullopt);
  const auto mc = model_config(c, p.y.cols());
  echo_config(run);

  models::TrainerState state = run.checkpoint
                                   ? run.checkpoint->state
                                   : models::initialize(mc, p.y.topRows(p.train_rows),
                                                        static_cast<std::uint64_t>(c.integer("seed")));
  json metrics;
  if (train || !run.checkpoint) {
    models::TrainConfig tc;
    tc.iterations = static_cast<int>(c.integer("iters"));
    tc.adam.lr = c.num("lr");
    const auto result = models::train_envi(mc, std::move(state), p.y.topRows(p.train_rows), tc);
    state = result.state;
    write_history(run.out / "history.csv", result.history);
    if (!result.history.empty()) metrics["final_elbo"] = result.history.back().elbo;
  }
  models::save_checkpoint((run.out / "checkpoint.json").string(), {state, checkpoint_echo(c, p)});
  metrics.update(evaluate(run, mc, state.params, p));
  metrics["iterations"] = state.iteration;
  metrics["train_rows"] = p.train_rows;
  write_metrics(run, metrics);
  out << "wrote " << run.out.string() << "/{metrics.json,states.csv,checkpoint.json}\n";
  return kOk;
}

int cmd_online(Run& run, std::ostream& out) {
  RunConfig& c = run.config;
  data::Dataset raw = load_dataset(c, run.command);
  const Index warmup = std::min<Index>(c.integer("warmup"), raw.steps());
  const Prepared p = prepare(c, std::move(raw), std::max<Index>(warmup, 2));
  const auto mc = model_config(c, p.y.cols());
  echo_config(run);

  models::TrainerState trainer = run.checkpoint ? run.checkpoint->state
                                                : models::initialize(mc, p.y.topRows(p.train_rows),
                                                                     static_cast<std::uint64_t>(c.integer("seed")));
  auto state = models::start_online(mc, std::move(trainer));
  models::OnlineConfig oc;
  oc.inner_iterations = static_cast<int>(c.integer("inner"));
  oc.adam.lr = c.num("lr");

  const Index steps = p.y.rows();
  Matrix mean(steps, mc.state_dim), var(steps, mc.state_dim);
  std::vector<models::HistoryRow> history;
  for (Index t = 0; t < steps; ++t) {
    const auto r = models::oenvi_step(mc, state, Matrix(p.y.row(t)), oc);
    mean.row(t) = r.filtered_mean;
    var.row(t) = r.filtered_var;
    for (std::size_t k = 0; k < r.objectives.size(); ++k) {
      models::HistoryRow row;
      row.iteration = t + 1;
      row.elbo = r.objectives[k];
      row.loglik = r.logliks[k];
      row.kl_u = r.kl_u[k];
      row.grad_norm = r.grad_norms[k];
      history.push_back(row);
    }
  }
  write_history(run.out / "history.csv", history);
  models::save_checkpoint((run.out / "checkpoint.json").string(), {state.trainer, checkpoint_echo(c, p)});

  const bool obs_units = states_in_obs_units(mc);
  if (obs_units) {
    mean = to_original(mean, p.stats);
    var = var_to_original(var, p.stats);
  }
  write_states(run.out / "states.csv", mean, var);
  json m;
  m["steps"] = steps;
  m["warmup_rows"] = p.train_rows;
  if (p.raw.has_truth() && obs_units && p.raw.x_true.cols() == mean.cols()) {
    m["state_rmse"] = data::state_rmse(mean, p.raw.x_true);
    m["observation_rmse"] = data::state_rmse(p.raw.y, p.raw.x_true);
    json windows = json::object();
    for (Index start = 0; start < steps; start += kOnlineWindow) {
      const Index len = std::min(kOnlineWindow, steps - start);
      windows[std::to_string(start) + "-" + std::to_string(start + len)] =
          data::state_rmse(mean.middleRows(start, len), p.raw.x_true.middleRows(start, len));
    }
    m["state_rmse_windows"] = windows;
  }
  m["learned_q"] = to_json(state.trainer.params.at(models::names::kLogQ).array().exp().matrix());
  m["learned_r"] = to_json(state.trainer.params.at(models::names::kLogR).array().exp().matrix());
  write_metrics(run, m);
  out << "wrote " << run.out.string() << "/{metrics.json,states.csv,history.csv}\n";
  return kOk;
}

int cmd_filter(Run& run, std::ostream& out) {
  RunConfig& c = run.config;
  if (c.flag("oracle_kf")) {
    if (c.str("dataset") != "cartrack") throw InputError("--oracle-kf needs the cartrack dataset");
    echo_config(run);
    const auto ds = generate(c);
    baselines::CarTrackSettings settings;
    settings.obs_std = std::sqrt(c.num("sigmaR2"));
    const auto kf = baselines::kalman_filter(baselines::cartrack_model(settings), ds.y);
    Matrix var(ds.steps(), 4);
    for (Index t = 0; t < ds.steps(); ++t) var.row(t) = kf.filtered[static_cast<std::size_t>(t)].cov.diagonal().transpose();
    write_states(run.out / "states.csv", kf.filtered_means(), var);
    json m;
    m["state_rmse"] = data::state_rmse(kf.filtered_means(), ds.x_true);
    m["observation_rmse"] = data::state_rmse(ds.y, ds.x_true);
    m["log_evidence"] = kf.log_evidence;
    write_metrics(run, m);
    out << "wrote " << run.out.string() << "/{metrics.json,states.csv}\n";
    return kOk;
  }
  if (!run.checkpoint) throw InputError("filter needs --checkpoint or --oracle-kf");
  data::Dataset raw = load_dataset(c, run.command);
  const Index steps = raw.steps();
  const Prepared p = prepare(c, std::move(raw), steps, stats_from(*run.checkpoint));
  const auto mc = model_config(c, p.y.cols());
  echo_config(run);
  auto m = evaluate(run, mc, run.checkpoint->state.params, p);
  write_metrics(run, m);
  out << "wrote " << run.out.string() << "/{metrics.json,states.csv}\n";
  return kOk;
}

int cmd_predict(Run& run, std::ostream& out) {
  RunConfig& c = run.config;
  if (!run.checkpoint) throw InputError("predict needs --checkpoint");
  data::Dataset raw = load_dataset(c, run.command);
  const Prepared p = prepare(c, std::move(raw), training_rows(c, c.integer("T")), stats_from(*run.checkpoint));
  const auto mc = model_config(c, p.y.cols());
  echo_config(run);
  const CounterRng rng(static_cast<std::uint64_t>(c.integer("seed")));
  const auto filtered = models::filter_states(mc, run.checkpoint->state.params, p.y.topRows(p.train_rows), rng,
                                              streams::kFilter);
  const auto f = models::predict_forward(mc, run.checkpoint->state.params, filtered.last_ensemble,
                                         static_cast<int>(c.integer("horizon")), rng, streams::kForecast);
  models::Forecast orig{to_original(f.mean, p.stats), var_to_original(f.var, p.stats)};
  write_forecast(run.out / "forecast.csv", orig, p.train_rows);
  json m;
  m["forecast_horizon"] = f.mean.rows();
  const Index known = std::min<Index>(f.mean.rows(), p.y.rows() - p.train_rows);
  if (known > 0) {
    m["forecast_rmse"] = data::forecast_rmse(orig.mean.topRows(known), p.raw.y.middleRows(p.train_rows, known));
    m["forecast_rmse_steps"] = known;
  }
  write_metrics(run, m);
  out << "wrote " << run.out.string() << "/{forecast.csv,metrics.json}\n";
  return kOk;
}

struct FlagSpec {
  const char* name;
  const char* key;
  const char* help;
};

const std::vector<FlagSpec>& flag_specs() {
  static const std::vector<FlagSpec> specs{
      {"--seed", "seed", "random seed"},
      {"--out", "out", "output directory"},
      {"--dataset", "dataset", "cartrack | kink | csv:PATH"},
      {"--T", "T", "number of time steps"},
      {"--dx", "dx", "latent state dimension"},
      {"--M", "M", "inducing points"},
      {"--N", "N", "ensemble size"},
      {"--iters", "iters", "training iterations"},
      {"--lr", "lr", "Adam learning rate"},
      {"--sigmaR2", "sigmaR2", "observation noise variance (simulators, fixed R)"},
      {"--sigmaQ2", "sigmaQ2", "kink process noise variance"},
      {"--step-likelihood,--eq27", "step_likelihood", "with-r | literal (innovation covariance without R)"},
      {"--inducing-noise", "inducing_noise", "process | none"},
      {"--lambda-ens", "lambda_ens", "ensemble covariance jitter"},
      {"--checkpoint", "checkpoint", "checkpoint to resume from or evaluate"},
      {"--horizon", "horizon", "forecast steps"},
      {"--inner", "inner", "online parameter updates per step"},
      {"--warmup", "warmup", "online rows used for statistics and initialization"},
      {"--split", "split", "training fraction of the sequence"},
  };
  return specs;
}

json error_json(const std::string& kind, const std::string& message, int code) {
  return {{"error", kind}, {"message", message}, {"exit_code", code}};
}

int execute(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"GP state-space models learned with ensemble Kalman filtering"};
  app.require_subcommand(1);
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> options;
  for (const auto& f : flag_specs()) options[f.key] = app.add_option(f.name, raw[f.key], f.help);
  std::string config_path;
  app.add_option("--config", config_path, "key=value config file");
  bool oracle = false;
  app.add_flag("--oracle-kf", oracle, "filter with the exact Kalman filter");
  std::vector<std::string> sets;
  app.add_option("--set", sets, "extra key=value override (repeatable)");
  for (const char* name : {"simulate", "train", "online", "filter", "predict", "eval"}) {
    app.add_subcommand(name)->fallthrough();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  }

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  // Layers: defaults < checkpoint echo < config file < flags.
  std::string checkpoint = options["checkpoint"]->count() ? raw["checkpoint"] : "";
  std::map<std::string, std::string> file_layer;
  if (!config_path.empty()) file_layer = reading([&] { return read_config_file(config_path); });
  if (checkpoint.empty() && file_layer.count("checkpoint")) checkpoint = file_layer["checkpoint"];
  if (!checkpoint.empty()) {
    run.checkpoint = reading([&] { return models::load_checkpoint(checkpoint); });
    for (const auto& [key, value] : run.checkpoint->config_echo) {
      if (RunConfig::known(key) && key != "out" && key != "checkpoint" && key != "oracle_kf") {
        run.config.set(key, value, checkpoint);
      }
    }
  }
  run.config.merge(file_layer, config_path);
  for (const auto& f : flag_specs()) {
    if (options[f.key]->count()) run.config.set(f.key, raw[f.key], f.name);
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + s + "'");
    run.config.set(s.substr(0, eq), s.substr(eq + 1), "--set");
  }
  if (oracle) run.config.set("oracle_kf", "true");
  if (!checkpoint.empty()) run.config.set("checkpoint", checkpoint);
  if (const char* threads = std::getenv("ENVI_THREADS")) run.config.set("threads", threads, "ENVI_THREADS");
  if (run.config.integer("threads") < 1) throw InputError("threads must be at least 1");
  Eigen::setNbThreads(static_cast<int>(run.config.integer("threads")));

  if (run.config.str("dataset").rfind("csv:", 0) != 0) run.config.resolve(run.command, 0);
  run.out = run.config.str("out");
  std::error_code ec;
  std::filesystem::create_directories(run.out, ec);
  if (ec) throw IoError("cannot create output directory " + run.out.string() + ": " + ec.message());

  if (run.command == "simulate") return cmd_simulate(run, out);
  if (run.command == "train") return cmd_fit(run, out, true);
  if (run.command == "eval") return cmd_fit(run, out, false);
  if (run.command == "online") return cmd_online(run, out);
  if (run.command == "filter") return cmd_filter(run, out);
  return cmd_predict(run, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto fail = [&](const std::string& kind, const std::string& message, int code) {
    err << error_json(kind, message, code).dump() << '\n';
    return code;
  };
  try {
    return execute(args, out);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  } catch (const IoError& e) {
    return fail("unreadable", e.what(), kUnreadable);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), kNonFinite);
  } catch (const FactorizationError& e) {
    return fail("numerical", e.what(), kNonFinite);
  } catch (const InputError& e) {
    return fail("usage", e.what(), kUsage);
  } catch (const std::exception& e) {
    return fail("failure", e.what(), kFailure);
  }
}

}  // namespace envi::cli

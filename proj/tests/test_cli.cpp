#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "envi/cli/cli.hpp"
#include "envi/cli/config.hpp"
#include "envi/error.hpp"

namespace cli = envi::cli;
namespace fs = std::filesystem;

namespace {

fs::path run_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "envi_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json metrics_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "metrics.json")); }

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Small cartrack fit used by several tests.
std::vector<std::string> tiny_train(const fs::path& out) {
  return {"train", "--dataset", "cartrack", "--T", "20", "--N", "8", "--M", "5", "--iters", "4", "--out", out.string()};
}

}  // namespace

TEST(RunConfig, AutoValuesResolvePerDataset) {
  cli::RunConfig kink;
  kink.set("dataset", "kink");
  kink.resolve("train", 0);
  EXPECT_EQ(kink.str("T"), "600");
  EXPECT_EQ(kink.str("dx"), "1");
  EXPECT_EQ(kink.str("sigmaR2"), "0.008");
  EXPECT_TRUE(kink.flag("fix_r"));
  EXPECT_FALSE(kink.flag("standardize"));

  cli::RunConfig car;
  car.resolve("online", 0);
  EXPECT_EQ(car.str("T"), "360");
  EXPECT_EQ(car.str("dx"), "4");
  EXPECT_EQ(car.echo().find("auto"), std::string::npos);
}

TEST(RunConfig, EchoIsSortedKeyValueLines) {
  cli::RunConfig c;
  c.resolve("train", 0);
  std::istringstream in(c.echo());
  std::string prev, line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ASSERT_NE(line.find('='), std::string::npos);
    EXPECT_LT(prev, line);
    prev = line;
    ++n;
  }
  EXPECT_EQ(n, cli::RunConfig::keys().size());
}

TEST(RunConfig, ConfigTextCommentsAndErrors) {
  const auto layer = cli::parse_config_text("# header\nM = 7  # trailing\n\nlr=0.5\n", "a.cfg");
  EXPECT_EQ(layer.at("M"), "7");
  EXPECT_EQ(layer.at("lr"), "0.5");
  try {
    cli::parse_config_text("M=3\nbogus=1\n", "a.cfg");
    FAIL();
  } catch (const envi::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("a.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(cli::parse_config_text("no equals sign\n", "a.cfg"), envi::InputError);
}

TEST(RunConfig, RejectsBadValues) {
  const auto rejects = [](const std::string& key, const std::string& value) {
    cli::RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.resolve("train", 0), envi::InputError) << key << "=" << value;
  };
  rejects("step_likelihood", "maybe");
  rejects("inducing_noise", "full");
  rejects("N", "1");
  rejects("split", "0");
  rejects("lambda_ens", "-1");
  rejects("lr", "abc");
  rejects("dataset", "mnist");
  cli::RunConfig c;
  c.set("dataset", "kink");
  c.set("standardize", "true");
  EXPECT_THROW(c.resolve("train", 0), envi::InputError);
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = invoke({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, cli::kUsage);
  const auto err = nlohmann::json::parse(r.err);
  EXPECT_EQ(err.at("exit_code"), 2);
  EXPECT_EQ(err.at("error"), "usage");
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(invoke({}).code, cli::kUsage); }

TEST(Cli, BadValueIsUsageError) {
  const auto dir = run_dir("bad_value");
  EXPECT_EQ(invoke({"train", "--eq27", "sometimes", "--out", dir.string()}).code, cli::kUsage);
}

TEST(Cli, UnreadableFilesExitThree) {
  const auto dir = run_dir("unreadable");
  EXPECT_EQ(invoke({"train", "--dataset", "csv:" + (dir / "absent.csv").string(), "--out", dir.string()}).code,
            cli::kUnreadable);
  EXPECT_EQ(invoke({"train", "--config", (dir / "absent.cfg").string(), "--out", dir.string()}).code,
            cli::kUnreadable);
  std::ofstream(dir / "bad.csv") << "t,y1,y2\n1,1,2\n2,3,oops\n";
  const auto r = invoke({"train", "--dataset", "csv:" + (dir / "bad.csv").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, cli::kUnreadable);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos) << r.err;
  std::ofstream(dir / "ck.json") << "{ not json";
  EXPECT_EQ(invoke({"filter", "--checkpoint", (dir / "ck.json").string(), "--out", dir.string()}).code,
            cli::kUnreadable);
}

TEST(Cli, NonFiniteObjectiveExitsFour) {
  const auto dir = run_dir("nonfinite");
  auto args = tiny_train(dir);
  args.insert(args.end(), {"--lr", "1000"});
  const auto r = invoke(args);
  EXPECT_EQ(r.code, cli::kNonFinite) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "numerical");
}

TEST(Cli, SimulateWritesRequestedRows) {
  const auto dir = run_dir("simulate");
  const auto r = invoke({"simulate", "--dataset", "cartrack", "--T", "120", "--seed", "0", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "data.csv"), 121u);
  const std::string header = slurp(dir / "data.csv").substr(0, slurp(dir / "data.csv").find('\n'));
  EXPECT_EQ(header, "t,y1,y2,y3,y4,x1,x2,x3,x4");
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
}

TEST(Cli, OracleFilterMatchesKalmanBand) {
  const auto dir = run_dir("oracle");
  const auto r = invoke({"filter", "--oracle-kf", "--dataset", "cartrack", "--T", "120", "--seed", "0", "--out",
                         dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const double rmse = metrics_of(dir).at("state_rmse");
  EXPECT_GE(rmse, 0.45);
  EXPECT_LE(rmse, 0.60);
  EXPECT_EQ(line_count(dir / "states.csv"), 121u);
}

TEST(Cli, TrainWritesArtifacts) {
  const auto dir = run_dir("train");
  const auto r = invoke(tiny_train(dir));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.txt", "history.csv", "metrics.json", "states.csv", "checkpoint.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(line_count(dir / "history.csv"), 5u);
  EXPECT_EQ(slurp(dir / "history.csv").rfind("iteration,elbo,loglik,kl_x0,kl_u,grad_norm,seconds\n0,", 0), 0u);
  const auto m = metrics_of(dir);
  EXPECT_EQ(m.at("iterations"), 4);
  EXPECT_TRUE(m.contains("state_rmse"));
  EXPECT_TRUE(m.contains("kf_state_rmse"));
  EXPECT_EQ(m.find("seconds"), m.end());
}

TEST(Cli, SameSeedGivesByteIdenticalMetrics) {
  const auto a = run_dir("det_a"), b = run_dir("det_b");
  ASSERT_EQ(invoke(tiny_train(a)).code, 0);
  ASSERT_EQ(invoke(tiny_train(b)).code, 0);
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  EXPECT_EQ(slurp(a / "states.csv"), slurp(b / "states.csv"));
}

TEST(Cli, EchoedConfigReproducesRun) {
  const auto a = run_dir("echo_a"), b = run_dir("echo_b");
  ASSERT_EQ(invoke(tiny_train(a)).code, 0);
  std::ofstream(b / "run.cfg") << slurp(a / "config.txt");
  ASSERT_EQ(invoke({"train", "--config", (b / "run.cfg").string(), "--out", b.string()}).code, 0);
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
}

TEST(Cli, FlagsOverrideConfigFile) {
  const auto dir = run_dir("layers");
  std::ofstream(dir / "run.cfg") << "M=6\nN=9\n";
  std::vector<std::string> args = tiny_train(dir);
  args.insert(args.end(), {"--config", (dir / "run.cfg").string()});
  ASSERT_EQ(invoke(args).code, 0);
  const std::string echo = slurp(dir / "config.txt");
  EXPECT_NE(echo.find("\nN=8\n"), std::string::npos);
  EXPECT_EQ(echo.rfind("M=5\n", 0), 0u);
}

TEST(Cli, ThreadsEnvironmentIsEchoed) {
  const auto dir = run_dir("threads");
  ::setenv("ENVI_THREADS", "1", 1);
  ASSERT_EQ(invoke(tiny_train(dir)).code, 0);
  ::unsetenv("ENVI_THREADS");
  EXPECT_NE(slurp(dir / "config.txt").find("threads=1"), std::string::npos);
}

TEST(Cli, CheckpointDrivesFilterAndPredict) {
  const auto fit = run_dir("ck_fit");
  auto args = tiny_train(fit);
  args.insert(args.end(), {"--split", "0.5", "--horizon", "5"});
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_EQ(line_count(fit / "forecast.csv"), 6u);

  const auto ck = (fit / "checkpoint.json").string();
  const auto filt = run_dir("ck_filter");
  const auto f = invoke({"filter", "--checkpoint", ck, "--out", filt.string()});
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_EQ(line_count(filt / "states.csv"), 21u);  // whole sequence

  const auto pred = run_dir("ck_predict");
  const auto p = invoke({"predict", "--checkpoint", ck, "--out", pred.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(line_count(pred / "forecast.csv"), 6u);
  EXPECT_EQ(metrics_of(pred).at("forecast_rmse"), metrics_of(fit).at("forecast_rmse"));
}

TEST(Cli, EvalFromCheckpointSkipsTraining) {
  const auto fit = run_dir("eval_fit");
  ASSERT_EQ(invoke(tiny_train(fit)).code, 0);
  const auto dir = run_dir("eval");
  ASSERT_EQ(invoke({"eval", "--checkpoint", (fit / "checkpoint.json").string(), "--out", dir.string()}).code, 0);
  EXPECT_FALSE(fs::exists(dir / "history.csv"));
  const auto a = metrics_of(fit), b = metrics_of(dir);
  EXPECT_EQ(a.at("state_rmse"), b.at("state_rmse"));
  EXPECT_EQ(b.at("iterations"), 4);
}

TEST(Cli, OnlineReportsWindows) {
  const auto dir = run_dir("online");
  const auto r = invoke({"online", "--dataset", "cartrack", "--T", "130", "--N", "8", "--M", "5", "--warmup", "20",
                         "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = metrics_of(dir);
  EXPECT_TRUE(m.at("state_rmse_windows").contains("0-120"));
  EXPECT_TRUE(m.at("state_rmse_windows").contains("120-130"));
  EXPECT_EQ(line_count(dir / "history.csv"), 131u);
  EXPECT_EQ(line_count(dir / "states.csv"), 131u);
}

TEST(Cli, CsvDatasetTrains) {
  const auto dir = run_dir("csv");
  ASSERT_EQ(invoke({"simulate", "--dataset", "cartrack", "--T", "30", "--out", dir.string()}).code, 0);
  const auto out = run_dir("csv_fit");
  const auto r = invoke({"train", "--dataset", "csv:" + (dir / "data.csv").string(), "--N", "8", "--M", "5",
                         "--iters", "3", "--horizon", "10", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = metrics_of(out);
  EXPECT_EQ(m.at("train_rows"), 15);
  EXPECT_EQ(m.at("forecast_horizon"), 10);
  EXPECT_NE(slurp(out / "config.txt").find("dx=4"), std::string::npos);
}

TEST(Cli, StepLikelihoodFlagAndAlias) {
  for (const char* flag : {"--step-likelihood", "--eq27"}) {
    const auto dir = run_dir(std::string("likelihood") + flag);
    auto args = tiny_train(dir);
    args.insert(args.end(), {flag, "literal"});
    ASSERT_EQ(invoke(args).code, 0) << flag;
    EXPECT_NE(slurp(dir / "config.txt").find("step_likelihood=literal"), std::string::npos) << flag;
  }
}

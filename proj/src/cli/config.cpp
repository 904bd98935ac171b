#include "envi/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "envi/error.hpp"

namespace envi::cli {
namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table{
      {"dataset", "cartrack"},
      {"T", "auto"},          // cartrack 120 (online 360), kink 600, csv: all rows
      {"seed", "0"},
      {"out", "run"},
      {"dx", "auto"},         // cartrack 4, kink 1, csv: obs dim
      {"M", "15"},
      {"N", "50"},
      {"iters", "auto"},      // kink 2000, otherwise 1000
      {"lr", "0.01"},
      {"sigmaR2", "auto"},    // kink 0.008, cartrack 0.25
      {"sigmaQ2", "0.05"},    // kink process noise
      {"step_likelihood", "with-r"},
      {"inducing_noise", "process"},
      {"prior_mean", "auto"},   // kink zero, otherwise identity
      {"lambda_ens", "1e-6"},
      {"whiten", "true"},
      {"standardize", "auto"},  // kink and online false, otherwise true
      {"split", "auto"},        // training fraction: csv 0.5, otherwise 1
      {"fix_r", "auto"},        // kink true: R pinned at sigmaR2
      {"init_noise", "auto"},   // online 1 (raw units), otherwise 0.1
      {"u_samples", "1"},
      {"train_x0", "true"},
      {"horizon", "50"},
      {"inner", "1"},
      {"warmup", "auto"},       // online: rows used to place Z and x0
      {"checkpoint", ""},
      {"oracle_kf", "false"},
      {"threads", "1"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : defaults()) k.push_back(key);
    return k;
  }();
  return out;
}

bool RunConfig::known(const std::string& key) { return defaults().count(key) > 0; }

void RunConfig::merge(const std::map<std::string, std::string>& layer, const std::string& source) {
  for (const auto& [key, value] : layer) set(key, value, source);
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
  if (!known(key)) throw InputError(source + ": unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InputError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::num(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InputError("config key '" + key + "' expects a number, got '" + s + "'");
}

long long RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("config key '" + key + "' expects an integer, got '" + s + "'");
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError("config key '" + key + "' expects true/false, got '" + s + "'");
}

void RunConfig::resolve(const std::string& command, long long obs_dim) {
  const std::string& ds = str("dataset");
  const bool kink = ds == "kink";
  const bool csv = ds.rfind("csv:", 0) == 0;
  if (!kink && !csv && ds != "cartrack") {
    throw InputError("dataset must be cartrack, kink or csv:PATH, got '" + ds + "'");
  }
  const auto fill = [&](const std::string& key, const std::string& value) {
    if (is_auto(key)) values_[key] = value;
  };
  if (!csv) fill("T", kink ? "600" : (command == "online" ? "360" : "120"));
  fill("dx", kink ? "1" : (csv ? std::to_string(obs_dim) : "4"));
  fill("iters", kink ? "2000" : "1000");
  fill("sigmaR2", kink ? "0.008" : "0.25");
  const bool online = command == "online";
  fill("standardize", kink || online ? "false" : "true");
  fill("prior_mean", kink ? "zero" : "identity");
  fill("init_noise", online ? "1" : "0.1");
  fill("split", csv ? "0.5" : "1");
  fill("fix_r", kink ? "true" : "false");
  fill("warmup", "10");

  if (str("step_likelihood") != "with-r" && str("step_likelihood") != "literal") {
    throw InputError("step_likelihood must be with-r or literal, got '" + str("step_likelihood") + "'");
  }
  if (str("prior_mean") != "zero" && str("prior_mean") != "identity") {
    throw InputError("prior_mean must be zero or identity, got '" + str("prior_mean") + "'");
  }
  if (str("inducing_noise") != "process" && str("inducing_noise") != "none") {
    throw InputError("inducing_noise must be process or none, got '" + str("inducing_noise") + "'");
  }
  for (const char* key : {"dx", "M", "N", "iters", "u_samples", "horizon", "inner", "warmup", "threads", "seed"}) {
    if (integer(key) < 0) throw InputError(std::string("config key '") + key + "' must be non-negative");
  }
  if (integer("N") < 2) throw InputError("N must be at least 2");
  if (num("split") <= 0.0 || num("split") > 1.0) throw InputError("split must lie in (0, 1]");
  if (flag("fix_r") && flag("standardize")) {
    throw InputError("fix_r pins R in data units and cannot be combined with standardize");
  }
  for (const char* key : {"lr", "sigmaR2", "sigmaQ2", "init_noise"}) {
    if (!(num(key) > 0.0)) throw InputError(std::string("config key '") + key + "' must be positive");
  }
  if (num("lambda_ens") < 0.0) throw InputError("lambda_ens must be non-negative");
  for (const char* key : {"whiten", "train_x0", "oracle_kf"}) flag(key);
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << '=' << value << '\n';
  return out.str();
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(source + ":" + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!RunConfig::known(key)) {
      throw InputError(source + ":" + std::to_string(number) + ": unknown config key '" + key + "'");
    }
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

}  // namespace envi::cli

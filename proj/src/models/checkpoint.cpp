#include <fstream>

#include <json.hpp>

#include "envi/models/gpssm.hpp"

namespace envi::models {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "envi-checkpoint";
constexpr int kVersion = 1;

json encode(const Matrix& m) {
  json data = json::array();
  for (Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix decode(const json& j, const std::string& name) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw InputError("checkpoint: array " + name + " has inconsistent size");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

json encode_map(const ParamMap& params) {
  json out = json::object();
  for (const auto& [name, value] : params) out[name] = encode(value);
  return out;
}

ParamMap decode_map(const json& j) {
  ParamMap out;
  for (const auto& [name, value] : j.items()) out[name] = decode(value, name);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const TrainerState& s = checkpoint.state;
  for (const auto& [name, value] : s.params) {
    if (!value.allFinite()) throw NumericalError("checkpoint: parameter " + name + " is not finite");
  }
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config"] = checkpoint.config_echo;
  j["iteration"] = s.iteration;
  j["rng"] = {{"seed", s.seed}, {"next_stream", training_stream(s.iteration)}};
  j["frozen"] = s.frozen;
  j["params"] = encode_map(s.params);
  j["adam"] = {{"steps", s.adam.steps}, {"first", encode_map(s.adam.first)}, {"second", encode_map(s.adam.second)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) throw InputError(path + ": not a checkpoint file");
    if (j.at("version").get<int>() != kVersion) throw InputError(path + ": unsupported checkpoint version");
    Checkpoint out;
    out.config_echo = j.at("config").get<std::map<std::string, std::string>>();
    out.state.iteration = j.at("iteration").get<long long>();
    out.state.seed = j.at("rng").at("seed").get<std::uint64_t>();
    out.state.frozen = j.at("frozen").get<std::set<std::string>>();
    out.state.params = decode_map(j.at("params"));
    out.state.adam.steps = j.at("adam").at("steps").get<long long>();
    out.state.adam.first = decode_map(j.at("adam").at("first"));
    out.state.adam.second = decode_map(j.at("adam").at("second"));
    return out;
  } catch (const json::exception& e) {
    throw InputError(path + ": malformed checkpoint (" + e.what() + ")");
  }
}

}  // namespace envi::models

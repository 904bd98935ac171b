#pragma once

#include <map>
#include <string>
#include <vector>

namespace envi::cli {

// Flat key=value run configuration. Every key has a default; some defaults
// are "auto" and get resolved against the command and dataset before the
// run starts, so the echoed file holds only concrete values.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::string>& keys();
  static bool known(const std::string& key);

  // Later layers win. Unknown keys raise InputError naming the source.
  void merge(const std::map<std::string, std::string>& layer, const std::string& source);
  void set(const std::string& key, const std::string& value, const std::string& source = "override");

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  bool is_auto(const std::string& key) const { return str(key) == "auto"; }

  // Fills "auto" entries for `command` on the named dataset.
  void resolve(const std::string& command, long long obs_dim);

  // Sorted key=value lines.
  std::string echo() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Parses key=value text (# comments, blank lines allowed).
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source);
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace envi::cli

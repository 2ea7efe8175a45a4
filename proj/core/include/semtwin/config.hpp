#pragma once

// Flat dotted-key configuration with declared keys, typed getters, file
// loading and override strings. Unknown keys are rejected everywhere.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "semtwin/common.hpp"

namespace semtwin {

class Config {
 public:
  Config();  // declares every known key with its default

  void load_file(const std::string& path);
  // "key = value" or "key=value"
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& raw(const std::string& key) const;
  int geti(const std::string& key) const;
  double getd(const std::string& key) const;
  bool getb(const std::string& key) const;
  std::string gets(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  // resolved key = value lines, sorted; every run echoes this next to its
  // outputs so the run is self-describing
  void echo(std::ostream& os) const;

 private:
  void declare(const std::string& key, const std::string& default_value);
  std::map<std::string, std::string> values_;
};

}  // namespace semtwin

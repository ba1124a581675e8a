#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace partswap {

// Flat key=value run configuration. Every key is registered with a default
// and a doc line; unknown keys are rejected on sight so typos fail loudly.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::string& path);
  void load_string(const std::string& text);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  int64_t geti(const std::string& key) const;
  double getd(const std::string& key) const;
  bool getb(const std::string& key) const;
  const std::string& gets(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Full key set with current values and doc comments, parseable by
  // load_string. Used by the dump-config subcommand.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace partswap

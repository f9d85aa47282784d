#ifndef IMAC_CORE_CONFIG_HPP
#define IMAC_CORE_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace imac {

// Flat UTF-8 key=value configuration with '#' comments and dotted section
// keys (env.n_agents=3). Unknown keys are rejected to catch typos early.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  // Applies a "key=value" override string (CLI flags funnel through these).
  void apply_override(const std::string& kv);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_str(const std::string& key) const;  // throws when missing
  std::string get_str(const std::string& key, const std::string& fallback) const;
  long get_long(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<long> get_long_list(const std::string& key) const;
  std::vector<std::string> get_str_list(const std::string& key) const;

  // Throws ConfigError naming any key that is not in the known registry.
  void reject_unknown_keys() const;

  // Config echo as a JSON object string (sorted keys).
  std::string to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace imac

#endif

#include "core/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace imac {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.seed", "run.deterministic", "run.workers",
      "io.out_dir", "io.run_name", "io.dump_trajectories", "io.checkpoint_every",
      "env.task", "env.n_agents", "env.n_predators", "env.n_preys", "env.n_landmarks",
      "env.episode_len", "env.dt", "env.damping", "env.max_speed", "env.max_speed_predator",
      "env.max_speed_prey", "env.agent_radius", "env.landmark_radius",
      "env.collision_penalty", "env.catch_bonus", "env.group_dist_coef", "env.nearest_k",
      "env.world_bound",
      "agents.message_dim", "agents.hidden", "agents.query_dim", "agents.scheduler_kl",
      "agents.scheduler_kl_beta",
      "train.algo", "train.episodes", "train.gamma", "train.tau", "train.lr_actor",
      "train.lr_critic", "train.beta", "train.prior_mean", "train.prior_var",
      "train.batch_size", "train.buffer_capacity", "train.steps_per_update",
      "train.warmup_steps", "train.explore_noise", "train.explore_anneal_frac",
      "train.grad_clip",
      "channel.max_amp", "channel.bandwidth_hz", "channel.signal_levels",
      "channel.msgs_per_sec", "channel.quant_interval", "channel.message_dim",
      "sweep.checkpoint", "sweep.target_vars", "sweep.budgets", "sweep.episodes",
      "sweep.seeds",
      "crossplay.checkpoints", "crossplay.episodes",
      "report.checkpoint",
  };
  return keys;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

void Config::apply_override(const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long Config::get_long(const std::string& key) const {
  const std::string v = get_str(key);
  char* end = nullptr;
  const long out = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
  return out;
}

long Config::get_long(const std::string& key, long fallback) const {
  return has(key) ? get_long(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_str(key);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key " + key + ": expected number, got '" + v + "'");
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_str(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected boolean 0/1, got '" + v + "'");
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_str(key);
  char* end = nullptr;
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key " + key + ": expected unsigned integer, got '" + v + "'");
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& tok : split(get_str(key), ',')) {
    if (tok.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw ConfigError("config key " + key + ": bad number '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<long> Config::get_long_list(const std::string& key) const {
  std::vector<long> out;
  for (const std::string& tok : split(get_str(key), ',')) {
    if (tok.empty()) continue;
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0')
      throw ConfigError("config key " + key + ": bad integer '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> Config::get_str_list(const std::string& key) const {
  std::vector<std::string> out;
  for (const std::string& tok : split(get_str(key), ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

void Config::reject_unknown_keys() const {
  for (const auto& [key, value] : values_) {
    if (!known_keys().count(key))
      throw ConfigError("unknown config key: " + key);
  }
}

std::string Config::to_json() const {
  std::string out = "{";
  bool first = true;
  for (const auto& [key, value] : values_) {
    if (!first) out += ",";
    first = false;
    out += "\"" + key + "\":\"";
    for (char c : value) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    out += "\"";
  }
  out += "}";
  return out;
}

}  // namespace imac

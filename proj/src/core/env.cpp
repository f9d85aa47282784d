#include "core/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace imac {

Task task_from_string(const std::string& s) {
  if (s == "coop_nav") return Task::coop_nav;
  if (s == "predator_prey") return Task::predator_prey;
  throw ConfigError("unknown task: " + s + " (expected coop_nav or predator_prey)");
}

const char* task_name(Task t) {
  return t == Task::coop_nav ? "coop_nav" : "predator_prey";
}

void EnvConfig::validate() const {
  if (task == Task::coop_nav) {
    if (n_agents < 1) throw ConfigError("env.n_agents must be >= 1");
    if (n_landmarks < 1) throw ConfigError("env.n_landmarks must be >= 1 for coop_nav");
  } else {
    if (n_predators < 1) throw ConfigError("env.n_predators must be >= 1");
    if (n_preys < 1) throw ConfigError("env.n_preys must be >= 1");
    if (n_landmarks < 0) throw ConfigError("env.n_landmarks must be >= 0");
  }
  if (episode_len < 1) throw ConfigError("env.episode_len must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("env.dt must be > 0");
  if (damping < 0.0 || damping >= 1.0) throw ConfigError("env.damping must be in [0,1)");
  if (!(agent_radius > 0.0)) throw ConfigError("env.agent_radius must be > 0");
  if (!(landmark_radius > 0.0)) throw ConfigError("env.landmark_radius must be > 0");
  if (!(world_bound > 0.0)) throw ConfigError("env.world_bound must be > 0");
  if (nearest_k < 0) throw ConfigError("env.nearest_k must be >= 0 (0 = all)");
  if (!(max_speed > 0.0) || !(max_speed_predator > 0.0) || !(max_speed_prey > 0.0))
    throw ConfigError("env max speeds must be > 0");
}

namespace {

double dist(const Vec2& a, const Vec2& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Indices of the k nearest candidates to `from`, distance then index order.
std::vector<int> nearest(const std::vector<Vec2>& points, const std::vector<int>& candidates,
                         const Vec2& from, int k) {
  std::vector<int> idx = candidates;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double da = dist(points[a], from), db = dist(points[b], from);
    if (da != db) return da < db;
    return a < b;
  });
  if (k > 0 && static_cast<int>(idx.size()) > k) idx.resize(k);
  return idx;
}

}  // namespace

double boundary_penalty(double coord, double world_bound) {
  const double u = std::fabs(coord) / world_bound;
  if (u < 0.9) return 0.0;
  if (u < 1.0) return (u - 0.9) * 10.0;
  return std::min(std::exp(2.0 * u - 2.0), 10.0);
}

Env::Env(EnvConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n = cfg_.total_agents();
  state_.pos.resize(n);
  state_.vel.resize(n);
  state_.landmarks.resize(cfg_.n_landmarks);
}

double Env::role_max_speed(int agent) const {
  if (cfg_.task == Task::coop_nav) return cfg_.max_speed;
  return cfg_.is_predator(agent) ? cfg_.max_speed_predator : cfg_.max_speed_prey;
}

std::size_t Env::obs_dim(int agent) const {
  const int n = cfg_.total_agents();
  auto group = [&](int count) {
    return cfg_.nearest_k == 0 ? count : std::min(count, cfg_.nearest_k);
  };
  std::size_t d = 4;  // own vel + own pos
  if (cfg_.task == Task::coop_nav) {
    d += 2 * static_cast<std::size_t>(group(n - 1));
  } else {
    const int same = cfg_.is_predator(agent) ? cfg_.n_predators - 1 : cfg_.n_preys - 1;
    const int other = cfg_.is_predator(agent) ? cfg_.n_preys : cfg_.n_predators;
    d += 2 * static_cast<std::size_t>(group(same));
    d += 2 * static_cast<std::size_t>(group(other));
  }
  d += 2 * static_cast<std::size_t>(group(cfg_.n_landmarks));
  return d;
}

std::vector<std::vector<double>> Env::reset(Rng& rng) {
  const int n = cfg_.total_agents();
  for (int i = 0; i < n; ++i) {
    state_.pos[i].x = rng.uniform(-cfg_.world_bound, cfg_.world_bound);
    state_.pos[i].y = rng.uniform(-cfg_.world_bound, cfg_.world_bound);
    state_.vel[i] = {0.0, 0.0};
  }
  for (int l = 0; l < cfg_.n_landmarks; ++l) {
    state_.landmarks[l].x = rng.uniform(-cfg_.world_bound, cfg_.world_bound);
    state_.landmarks[l].y = rng.uniform(-cfg_.world_bound, cfg_.world_bound);
  }
  state_.step = 0;
  std::vector<std::vector<double>> obs(n);
  for (int i = 0; i < n; ++i) obs[i] = observe(i);
  return obs;
}

std::vector<double> Env::observe(int agent) const {
  std::vector<double> o;
  o.reserve(obs_dim(agent));
  const Vec2 p = state_.pos[agent];
  o.push_back(state_.vel[agent].x);
  o.push_back(state_.vel[agent].y);
  o.push_back(p.x);
  o.push_back(p.y);

  const int n = cfg_.total_agents();
  const int k = cfg_.nearest_k;
  auto push_group = [&](const std::vector<int>& members) {
    for (int j : nearest(state_.pos, members, p, k)) {
      o.push_back(state_.pos[j].x - p.x);
      o.push_back(state_.pos[j].y - p.y);
    }
  };

  if (cfg_.task == Task::coop_nav) {
    std::vector<int> others;
    for (int j = 0; j < n; ++j)
      if (j != agent) others.push_back(j);
    push_group(others);
  } else {
    std::vector<int> same, other;
    for (int j = 0; j < n; ++j) {
      if (j == agent) continue;
      (cfg_.is_predator(j) == cfg_.is_predator(agent) ? same : other).push_back(j);
    }
    push_group(same);
    push_group(other);
  }

  std::vector<int> lm(state_.landmarks.size());
  for (std::size_t l = 0; l < lm.size(); ++l) lm[l] = static_cast<int>(l);
  for (int l : nearest(state_.landmarks, lm, p, k)) {
    o.push_back(state_.landmarks[l].x - p.x);
    o.push_back(state_.landmarks[l].y - p.y);
  }
  return o;
}

StepResult Env::step(const std::vector<std::array<double, 2>>& actions) {
  const int n = cfg_.total_agents();
  if (static_cast<int>(actions.size()) != n)
    throw ConfigError("env.step: need one action per agent");
  for (const auto& a : actions)
    if (!std::isfinite(a[0]) || !std::isfinite(a[1]))
      throw RuntimeError("env.step: non-finite action, aborting episode");

  for (int i = 0; i < n; ++i) {
    const double fx = std::clamp(actions[i][0], -1.0, 1.0);
    const double fy = std::clamp(actions[i][1], -1.0, 1.0);
    Vec2& v = state_.vel[i];
    v.x = (1.0 - cfg_.damping) * v.x + fx * cfg_.dt;
    v.y = (1.0 - cfg_.damping) * v.y + fy * cfg_.dt;
    const double speed = std::sqrt(v.x * v.x + v.y * v.y);
    const double vmax = role_max_speed(i);
    if (speed > vmax) {
      v.x *= vmax / speed;
      v.y *= vmax / speed;
    }
    state_.pos[i].x += v.x * cfg_.dt;
    state_.pos[i].y += v.y * cfg_.dt;
  }
  ++state_.step;

  StepResult r;
  r.done = state_.step >= cfg_.episode_len;
  r.rewards.assign(n, 0.0);
  if (cfg_.task == Task::coop_nav) {
    const double shared = reward_coop_nav();
    std::fill(r.rewards.begin(), r.rewards.end(), shared);
  } else {
    auto [pred, prey] = reward_predator_prey();
    for (int i = 0; i < n; ++i) r.rewards[i] = cfg_.is_predator(i) ? pred : prey;
  }
  r.obs.resize(n);
  for (int i = 0; i < n; ++i) r.obs[i] = observe(i);
  return r;
}

double Env::reward_coop_nav() const {
  double r = 0.0;
  for (const Vec2& lm : state_.landmarks) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& p : state_.pos) best = std::min(best, dist(p, lm));
    r -= best;
  }
  const int n = cfg_.total_agents();
  int collisions = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dist(state_.pos[i], state_.pos[j]) < 2.0 * cfg_.agent_radius) ++collisions;
  r += cfg_.collision_penalty * collisions;
  return r;
}

std::pair<double, double> Env::reward_predator_prey() const {
  int catches = 0;
  double min_group_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg_.n_predators; ++i) {
    for (int j = cfg_.n_predators; j < cfg_.total_agents(); ++j) {
      const double d = dist(state_.pos[i], state_.pos[j]);
      min_group_dist = std::min(min_group_dist, d);
      if (d < 2.0 * cfg_.agent_radius) ++catches;
    }
  }
  const double collision_term = cfg_.catch_bonus * catches;
  double pred = collision_term - cfg_.group_dist_coef * min_group_dist;
  double prey = -collision_term;
  for (int j = cfg_.n_predators; j < cfg_.total_agents(); ++j) {
    prey -= boundary_penalty(state_.pos[j].x, cfg_.world_bound);
    prey -= boundary_penalty(state_.pos[j].y, cfg_.world_bound);
  }
  return {pred, prey};
}

}  // namespace imac

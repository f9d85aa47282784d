#ifndef IMAC_CORE_ENV_HPP
#define IMAC_CORE_ENV_HPP

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace imac {

enum class Task { coop_nav, predator_prey };

Task task_from_string(const std::string& s);
const char* task_name(Task t);

struct EnvConfig {
  Task task = Task::coop_nav;
  int n_agents = 3;      // coop_nav
  int n_predators = 4;   // predator_prey
  int n_preys = 2;
  int n_landmarks = 3;
  int episode_len = 25;
  double dt = 0.1;
  double damping = 0.25;
  double max_speed = 1.0;
  double max_speed_predator = 0.75;  // slower predators chase faster preys
  double max_speed_prey = 1.0;
  double agent_radius = 0.1;
  double landmark_radius = 0.05;
  double collision_penalty = -1.0;
  double catch_bonus = 10.0;
  double group_dist_coef = 0.1;
  int nearest_k = 0;  // 0 = observe all
  double world_bound = 1.0;

  void validate() const;
  int total_agents() const {
    return task == Task::coop_nav ? n_agents : n_predators + n_preys;
  }
  bool is_predator(int agent) const {
    return task == Task::predator_prey && agent < n_predators;
  }
};

struct Vec2 {
  double x = 0.0, y = 0.0;
};

struct WorldState {
  std::vector<Vec2> pos;
  std::vector<Vec2> vel;
  std::vector<Vec2> landmarks;
  int step = 0;
};

struct StepResult {
  std::vector<std::vector<double>> obs;  // per agent
  std::vector<double> rewards;           // per agent
  bool done = false;      // episode over (step counter hit episode_len)
  // True environmental termination, as opposed to a time-limit slice. These
  // tasks never terminate on their own, so value bootstrapping continues
  // through episode boundaries (the MADDPG-family convention).
  bool terminal = false;
};

// Deterministic 2-D point-mass world. Agents pass through each other;
// collisions only shape the reward.
class Env {
 public:
  explicit Env(EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  const WorldState& state() const { return state_; }

  // Observation layout, fixed per config (all entries are relative except the
  // leading own velocity/position):
  //   [own_vel, own_pos,
  //    nearest other same-role agents..., nearest opposite-role agents...,
  //    nearest landmarks...]
  // coop_nav has a single role group. Each group is truncated to nearest_k
  // entries (all when nearest_k = 0) and sorted by distance.
  std::size_t obs_dim(int agent) const;

  std::vector<std::vector<double>> reset(Rng& rng);
  // actions: one [fx, fy] pair per agent, components clamped into [-1, 1].
  StepResult step(const std::vector<std::array<double, 2>>& actions);

  double reward_coop_nav() const;
  // first = predator shared reward, second = prey shared reward
  std::pair<double, double> reward_predator_prey() const;

 private:
  std::vector<double> observe(int agent) const;
  double role_max_speed(int agent) const;

  EnvConfig cfg_;
  WorldState state_;
};

// Per-coordinate soft boundary penalty used for preys: zero inside
// 0.9*world_bound, linear to the bound, exponential beyond (capped at 10).
double boundary_penalty(double coord, double world_bound);

}  // namespace imac

#endif

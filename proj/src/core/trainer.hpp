#ifndef IMAC_CORE_TRAINER_HPP
#define IMAC_CORE_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/agents.hpp"
#include "core/channel.hpp"
#include "core/env.hpp"
#include "core/replay.hpp"

namespace imac {

// comm keeps beta as configured; the comm baseline is the identical code path
// with beta forced to zero; nocomm removes the channel entirely.
enum class Algo { imac, comm, nocomm };

Algo algo_from_string(const std::string& s);
const char* algo_name(Algo a);

struct TrainConfig {
  Algo algo = Algo::imac;
  long episodes = 0;
  double gamma = 0.95;
  double tau = 0.01;
  double lr_actor = 1e-4;
  double lr_critic = 1e-3;
  double beta = 0.01;
  double prior_mean = 0.0;
  double prior_var = 1.0;
  std::size_t batch_size = 256;
  std::size_t buffer_capacity = 100000;
  long steps_per_update = 100;
  long warmup_steps = 1000;
  double explore_noise = 0.3;
  double explore_anneal_frac = 0.5;
  std::uint64_t seed = 0;
  std::size_t msg_dim = 4;
  std::size_t query_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  bool sched_kl = false;
  double sched_kl_beta = 0.01;
  // Channel amplitude for protocol means (channel.max_amp), and the standard
  // MADDPG global-norm gradient clip (0 disables).
  double msg_amplitude = 10.0;
  double grad_clip = 0.5;
  bool deterministic = false;  // zeroes the wall-clock CSV column

  void validate() const;
  bool comm() const { return algo != Algo::nocomm; }
  double effective_beta() const { return algo == Algo::comm ? 0.0 : beta; }
  GaussianPrior prior() const { return {prior_mean, prior_var}; }
};

// All agents of one run plus the communication-group structure. In
// predator_prey messages flow within a role group only, which keeps the two
// sides separable for cross-play.
class MultiAgentSystem {
 public:
  MultiAgentSystem(const EnvConfig& env_cfg, const TrainConfig& cfg);

  int n() const { return static_cast<int>(agents.size()); }

  std::vector<AgentNets> agents;
  std::vector<std::vector<int>> groups;
  std::vector<int> group_of;
  std::vector<int> local_index;  // position within own group
  std::vector<std::size_t> obs_dims;
  std::size_t critic_in = 0;
  std::size_t msg_dim = 0;
  bool comm = true;
  bool sched_kl = false;
};

struct EpisodeRow {
  long episode = 0;
  double reward_mean = 0.0;
  std::vector<double> reward_per_agent;
  double kl_mean_nats = 0.0;
  double entropy_bound_bits = 0.0;  // NaN until enough stats
  double wall_clock_s = 0.0;
};

class Trainer {
 public:
  Trainer(EnvConfig env_cfg, TrainConfig cfg);
  ~Trainer();

  // Runs the full training loop; per-episode rows go to metrics (CSV body,
  // header included) and optionally full trajectories to traj. When
  // checkpoint_every > 0, on_checkpoint fires after every such episode count.
  void train(std::ostream* metrics, std::ostream* traj,
             std::function<void(long)> on_checkpoint = {}, long checkpoint_every = 0);

  MultiAgentSystem& system() { return sys_; }
  const MultiAgentSystem& system() const { return sys_; }
  const ReplayBuffer& buffer() const { return *buffer_; }
  ReplayBuffer& buffer() { return *buffer_; }
  const RunningStats& message_stats() const { return stats_; }
  const TrainConfig& config() const { return cfg_; }
  const EnvConfig& env_config() const { return env_cfg_; }
  long skipped_updates() const { return skipped_updates_; }

  static const char* metrics_header_prefix();

  // Oracle hooks. They evaluate the exact losses/gradients the update path
  // uses, without touching any parameter, so finite differences can audit the
  // backward pass end to end (cross-agent flow through the scheduler
  // included).
  void fill_buffer_episodes(long episodes);
  std::vector<std::size_t> sample_batch_indices(std::size_t batch);
  double actor_loss(const std::vector<std::size_t>& idx);
  double critic_loss(int agent, const std::vector<std::size_t>& idx);
  struct GradBlock {
    std::string name;
    Tensor* param;
    Tensor grad;
  };
  std::vector<GradBlock> actor_grad_blocks(const std::vector<std::size_t>& idx);
  std::vector<GradBlock> critic_grad_blocks(int agent, const std::vector<std::size_t>& idx);

 private:
  void rollout_episode(long episode, double explore_scale, EpisodeRow& row, std::ostream* traj);
  void push_slot(std::size_t slot, const std::vector<std::vector<double>>& c_next);
  void update_step();
  void gather_batch(const std::vector<std::size_t>& idx);
  void compute_targets();
  double critic_forward_loss(int agent, bool with_trace);
  void critic_update();
  double actor_forward_loss();
  void actor_backward();
  void actor_update();

  bool updates_enabled_ = true;

  EnvConfig env_cfg_;
  TrainConfig cfg_;
  Env env_;
  MultiAgentSystem sys_;
  std::unique_ptr<ReplayBuffer> buffer_;
  RunningStats stats_;

  Rng rng_env_;
  Rng rng_explore_;
  Rng rng_msg_;
  Rng rng_sched_;
  Rng rng_sample_;

  std::vector<Adam> adam_actor_;
  std::vector<Adam> adam_critic_;

  long global_step_ = 0;
  long skipped_updates_ = 0;

  struct Scratch;
  std::unique_ptr<Scratch> ws_;
};

// Deterministic evaluation with frozen parameters: sampled messages, mean
// actions, optional execution-stage limiter on messages and scheduled
// messages.
struct ExecOptions {
  long episodes = 1;
  std::uint64_t seed = 0;
  bool use_limiter = false;
  double target_var = 1.0;
};

struct ExecResult {
  // [episode][agent] summed per-episode rewards
  std::vector<std::vector<double>> episode_agent_returns;
};

// record_stats, when given, accumulates the messages as actually delivered
// (post-limiter), so callers can report the realized entropy bound.
ExecResult exec_rollouts(const EnvConfig& env_cfg, const MultiAgentSystem& sys,
                         const RunningStats* stats, const ExecOptions& opt,
                         RunningStats* record_stats = nullptr);

}  // namespace imac

#endif

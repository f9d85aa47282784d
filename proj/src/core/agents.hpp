#ifndef IMAC_CORE_AGENTS_HPP
#define IMAC_CORE_AGENTS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "core/net.hpp"

namespace imac {

// Isotropic Gaussian approximation of the message marginal; the information
// bottleneck regularizer pulls every protocol toward it.
struct GaussianPrior {
  double mean = 0.0;
  double var = 1.0;
};

// Closed-form KL(N(mean, diag exp(log_var)) || N(prior.mean, prior.var I)) in
// nats, summed over dimensions, one value per batch row.
std::vector<double> kl_to_prior(const Tensor& mean, const Tensor& log_var,
                                const GaussianPrior& prior);

// Accumulates coef * dKL/dmean and coef * dKL/dlog_var.
void kl_to_prior_backward(const Tensor& mean, const Tensor& log_var, const GaussianPrior& prior,
                          double coef, Tensor& d_mean, Tensor& d_log_var);

// Dot-product scheduler state for one recipient over one batch.
struct SchedTrace {
  Tensor query;                 // [B, q]
  std::vector<Tensor> keys;     // per sender, [B, q]
  Tensor weights;               // [B, n], self column forced to 0
  Tensor scheduled;             // [B, d]
  // scratch used by the backward pass
  Tensor d_query;
  std::vector<Tensor> d_keys;
};

struct SchedGrads {
  LayerGrads query;
  LayerGrads key;
};

// Weight-based scheduler: scores are dot products between a query from the
// recipient's observation and a key from each message; the self message is
// excluded before the softmax. With a single agent the scheduled message is
// all zeros.
void schedule_forward(const Layer& query_net, const Layer& key_net, const Tensor& obs,
                      const std::vector<const Tensor*>& messages, int recipient, SchedTrace& t);

// d_scheduled is the upstream gradient on t.scheduled; message gradients are
// accumulated into d_messages (one tensor per sender).
void schedule_backward(const Layer& query_net, const Layer& key_net, const Tensor& obs,
                       const std::vector<const Tensor*>& messages, int recipient,
                       const SchedTrace& t, const Tensor& d_scheduled, SchedGrads& g,
                       const std::vector<Tensor*>& d_messages);

struct AgentArch {
  std::size_t obs_dim = 0;
  std::size_t msg_dim = 4;
  std::size_t action_dim = 2;
  std::size_t query_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t critic_in = 0;  // sum_j (obs_j + msg_dim) + n * action_dim
  bool comm = true;
  // Optional bottleneck on the scheduled message: a Gaussian head over c_i
  // regularized toward the same prior. Off by default.
  bool sched_kl = false;
  // Channel amplitude: protocol means are squashed into this range so that
  // messages stay inside the quantizer's representable interval.
  double msg_amplitude = 10.0;
};

// One agent's function approximators plus target copies. Policies are
// deterministic tanh heads; the protocol is a Gaussian head over messages.
struct AgentNets {
  AgentArch arch;

  DenseNet policy;        // [obs (+ d)] -> action, tanh output
  GaussianHead protocol;  // [obs + d] -> (mean, log_var)
  Layer sched_query;      // obs -> query_dim
  Layer sched_key;        // d -> query_dim
  GaussianHead sched_head;  // c_raw -> (mean, log_var), only when sched_kl
  DenseNet critic;        // joint h,a -> scalar

  DenseNet target_policy;
  GaussianHead target_protocol;
  Layer target_sched_query;
  Layer target_sched_key;
  GaussianHead target_sched_head;
  DenseNet target_critic;

  void build(const AgentArch& a, Rng& rng);
  void sync_targets_hard();
  // theta_target <- tau * theta + (1 - tau) * theta_target
  void soft_update(double tau);

  // Named online parameter tensors (policy/protocol/scheduler/critic), used
  // for checkpointing and optimizer binding. Deterministic order.
  std::vector<std::pair<std::string, Tensor*>> named_params(bool targets = false);
};

// Flat list of actor-side parameter tensors (policy, protocol, scheduler) in
// the same order as AgentNets::named_params filters them.
bool is_actor_param(const std::string& name);
bool is_critic_param(const std::string& name);

// Copies the execution-side nets (policy, protocol, scheduler) between two
// structurally identical agents; used to compose cross-play line-ups.
void copy_exec_params(const AgentNets& src, AgentNets& dst);

}  // namespace imac

#endif

#include "core/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <ostream>

namespace imac {

Algo algo_from_string(const std::string& s) {
  if (s == "imac") return Algo::imac;
  if (s == "comm") return Algo::comm;
  if (s == "nocomm") return Algo::nocomm;
  throw ConfigError("unknown algo: " + s + " (expected imac, comm or nocomm)");
}

const char* algo_name(Algo a) {
  switch (a) {
    case Algo::imac: return "imac";
    case Algo::comm: return "comm";
    case Algo::nocomm: return "nocomm";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (episodes < 0) throw ConfigError("train.episodes must be >= 0");
  if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("train.gamma must be in [0,1)");
  if (!(tau > 0.0) || tau > 1.0) throw ConfigError("train.tau must be in (0,1]");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw ConfigError("learning rates must be > 0");
  if (beta < 0.0) throw ConfigError("train.beta must be >= 0");
  if (!(prior_var > 0.0)) throw ConfigError("train.prior_var must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (buffer_capacity < batch_size)
    throw ConfigError("train.buffer_capacity must be >= train.batch_size");
  if (steps_per_update < 1) throw ConfigError("train.steps_per_update must be >= 1");
  if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be >= 0");
  if (explore_noise < 0.0) throw ConfigError("train.explore_noise must be >= 0");
  if (explore_anneal_frac < 0.0 || explore_anneal_frac > 1.0)
    throw ConfigError("train.explore_anneal_frac must be in [0,1]");
  if (comm() && msg_dim < 1) throw ConfigError("agents.message_dim must be >= 1");
  if (comm() && query_dim < 1) throw ConfigError("agents.query_dim must be >= 1");
  if (hidden.empty()) throw ConfigError("agents.hidden must name at least one layer width");
  if (sched_kl_beta < 0.0) throw ConfigError("agents.scheduler_kl_beta must be >= 0");
  if (!(msg_amplitude > 0.0)) throw ConfigError("channel.max_amp must be > 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
}

MultiAgentSystem::MultiAgentSystem(const EnvConfig& env_cfg, const TrainConfig& cfg) {
  env_cfg.validate();
  cfg.validate();
  Env probe(env_cfg);
  const int n = env_cfg.total_agents();
  comm = cfg.comm();
  msg_dim = comm ? cfg.msg_dim : 0;
  sched_kl = comm && cfg.sched_kl;

  obs_dims.resize(n);
  for (int i = 0; i < n; ++i) obs_dims[i] = probe.obs_dim(i);

  if (env_cfg.task == Task::coop_nav) {
    groups.emplace_back();
    for (int i = 0; i < n; ++i) groups[0].push_back(i);
  } else {
    groups.resize(2);
    for (int i = 0; i < n; ++i) groups[env_cfg.is_predator(i) ? 0 : 1].push_back(i);
  }
  group_of.assign(n, 0);
  local_index.assign(n, 0);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t k = 0; k < groups[g].size(); ++k) {
      group_of[groups[g][k]] = static_cast<int>(g);
      local_index[groups[g][k]] = static_cast<int>(k);
    }

  critic_in = 0;
  for (int i = 0; i < n; ++i) critic_in += obs_dims[i] + msg_dim;
  critic_in += static_cast<std::size_t>(n) * 2;

  agents.resize(n);
  for (int i = 0; i < n; ++i) {
    AgentArch arch;
    arch.obs_dim = obs_dims[i];
    arch.msg_dim = cfg.msg_dim;
    arch.query_dim = cfg.query_dim;
    arch.hidden = cfg.hidden;
    arch.critic_in = critic_in;
    arch.comm = comm;
    arch.sched_kl = sched_kl;
    arch.msg_amplitude = cfg.msg_amplitude;
    Rng init = make_stream(cfg.seed, "init_agent" + std::to_string(i));
    agents[i].build(arch, init);
  }
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void concat_cols(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  out.resize(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.row(r);
    const double* pa = a.row(r);
    for (std::size_t u = 0; u < ca; ++u) dst[u] = pa[u];
    const double* pb = b.row(r);
    for (std::size_t u = 0; u < cb; ++u) dst[ca + u] = pb[u];
  }
}

void copy_block(Tensor& dst, std::size_t col_off, const Tensor& src) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    double* out = dst.row(r) + col_off;
    const double* in = src.row(r);
    for (std::size_t u = 0; u < src.cols(); ++u) out[u] = in[u];
  }
}

void slice_block(const Tensor& src, std::size_t col_off, std::size_t width, Tensor& dst,
                 bool accumulate) {
  dst.shape.assign({src.rows(), width});
  if (dst.data.size() != src.rows() * width) dst.data.assign(src.rows() * width, 0.0);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const double* in = src.row(r) + col_off;
    double* out = dst.row(r);
    for (std::size_t u = 0; u < width; ++u)
      out[u] = accumulate ? out[u] + in[u] : in[u];
  }
}

// reparam: m = mean + exp(0.5 lv) .* eps
void reparam(const Tensor& mean, const Tensor& lv, const Tensor& eps, Tensor& out) {
  out.resize(mean.rows(), mean.cols());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = mean.data[i] + std::exp(0.5 * lv.data[i]) * eps.data[i];
}

// d_lv += d_m .* 0.5 exp(0.5 lv) .* eps ; d_mean += d_m
void reparam_backward(const Tensor& lv, const Tensor& eps, const Tensor& d_m, Tensor& d_mean,
                      Tensor& d_lv) {
  for (std::size_t i = 0; i < d_m.numel(); ++i) {
    d_mean.data[i] += d_m.data[i];
    d_lv.data[i] += d_m.data[i] * 0.5 * std::exp(0.5 * lv.data[i]) * eps.data[i];
  }
}

struct AgentGrads {
  std::vector<LayerGrads> policy;
  GaussianHead::GradsG protocol;
  SchedGrads sched;
  GaussianHead::GradsG sched_head;
  std::vector<LayerGrads> critic;
};

// Single source of truth for the actor-parameter ordering shared by the
// optimizer binding and the gradient list.
void walk_actor(AgentNets& a, AgentGrads* g, std::vector<Tensor*>* params,
                std::vector<const Tensor*>* grads) {
  auto add = [&](Tensor* p, const Tensor* gr) {
    if (params) params->push_back(p);
    if (grads) grads->push_back(gr);
  };
  for (std::size_t l = 0; l < a.policy.layers.size(); ++l) {
    add(&a.policy.layers[l].w, g ? &g->policy[l].dw : nullptr);
    add(&a.policy.layers[l].b, g ? &g->policy[l].db : nullptr);
  }
  if (a.arch.comm) {
    for (std::size_t l = 0; l < a.protocol.trunk.layers.size(); ++l) {
      add(&a.protocol.trunk.layers[l].w, g ? &g->protocol.trunk[l].dw : nullptr);
      add(&a.protocol.trunk.layers[l].b, g ? &g->protocol.trunk[l].db : nullptr);
    }
    add(&a.protocol.mean.w, g ? &g->protocol.mean.dw : nullptr);
    add(&a.protocol.mean.b, g ? &g->protocol.mean.db : nullptr);
    add(&a.protocol.log_var.w, g ? &g->protocol.log_var.dw : nullptr);
    add(&a.protocol.log_var.b, g ? &g->protocol.log_var.db : nullptr);
    add(&a.sched_query.w, g ? &g->sched.query.dw : nullptr);
    add(&a.sched_query.b, g ? &g->sched.query.db : nullptr);
    add(&a.sched_key.w, g ? &g->sched.key.dw : nullptr);
    add(&a.sched_key.b, g ? &g->sched.key.db : nullptr);
    if (a.arch.sched_kl) {
      for (std::size_t l = 0; l < a.sched_head.trunk.layers.size(); ++l) {
        add(&a.sched_head.trunk.layers[l].w, g ? &g->sched_head.trunk[l].dw : nullptr);
        add(&a.sched_head.trunk.layers[l].b, g ? &g->sched_head.trunk[l].db : nullptr);
      }
      add(&a.sched_head.mean.w, g ? &g->sched_head.mean.dw : nullptr);
      add(&a.sched_head.mean.b, g ? &g->sched_head.mean.db : nullptr);
      add(&a.sched_head.log_var.w, g ? &g->sched_head.log_var.dw : nullptr);
      add(&a.sched_head.log_var.b, g ? &g->sched_head.log_var.db : nullptr);
    }
  }
}

void walk_critic(AgentNets& a, AgentGrads* g, std::vector<Tensor*>* params,
                 std::vector<const Tensor*>* grads) {
  for (std::size_t l = 0; l < a.critic.layers.size(); ++l) {
    if (params) params->push_back(&a.critic.layers[l].w);
    if (params) params->push_back(&a.critic.layers[l].b);
    if (grads) grads->push_back(&g->critic[l].dw);
    if (grads) grads->push_back(&g->critic[l].db);
  }
}

std::string fmt_g(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Global-norm gradient clip across one optimizer's blocks (scratch tensors,
// scaled in place).
void clip_grads(const std::vector<const Tensor*>& gl, double clip) {
  if (clip <= 0.0) return;
  double sq = 0.0;
  for (const Tensor* g : gl)
    for (double v : g->data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > clip)) return;
  const double s = clip / norm;
  for (const Tensor* g : gl)
    for (double& v : const_cast<Tensor*>(g)->data) v *= s;
}

}  // namespace

struct Trainer::Scratch {
  std::vector<AgentGrads> grads;

  // pending transition during rollout
  bool pending = false;
  std::vector<std::vector<double>> p_obs, p_cprev, p_c, p_mean, p_lv, p_eps, p_seps, p_obs_next;
  std::vector<std::array<double, 2>> p_act;
  std::vector<double> p_r;
  bool p_done = false;

  // gathered batch
  std::vector<std::size_t> idx;
  Tensor done_col;  // [B,1]
  std::vector<Tensor> b_obs, b_obs_next, b_cprev, b_c, b_act, b_r, b_eps, b_seps;

  // critic phase scratch
  std::vector<Tensor> t_in, t_mean, t_lv, t_msg, t_c, t_polin, t_act, y;
  std::vector<SchedTrace> t_sched;
  Tensor joint_next, joint_now, qt, upstream;
  Trace critic_tr;

  // actor phase scratch
  std::vector<GaussianHead::TraceG> proto_tr;
  std::vector<Tensor> msg, c_raw, c_now, d_c, d_m, d_mean, d_lv, polin, a_new, q_actor;
  std::vector<SchedTrace> sched_tr;
  std::vector<GaussianHead::TraceG> head_tr;
  std::vector<Tensor> d_hm, d_hlv, d_craw;
  std::vector<Trace> pol_tr;
  std::vector<std::size_t> c_off, act_off;
  Tensor joint_actor, d_joint, d_a, d_polin, saved_action;
};

Trainer::Trainer(EnvConfig env_cfg, TrainConfig cfg)
    : env_cfg_(env_cfg),
      cfg_(cfg),
      env_(env_cfg),
      sys_(env_cfg, cfg),
      stats_(cfg.comm() ? cfg.msg_dim : 1),
      rng_env_(make_stream(cfg.seed, "env")),
      rng_explore_(make_stream(cfg.seed, "exploration")),
      rng_msg_(make_stream(cfg.seed, "protocol_noise")),
      rng_sched_(make_stream(cfg.seed, "sched_head_noise")),
      rng_sample_(make_stream(cfg.seed, "buffer_sample")) {
  const int n = sys_.n();
  ReplayBuffer::Layout layout;
  layout.obs_dims = sys_.obs_dims;
  layout.msg_dim = sys_.msg_dim;
  layout.sched_noise = sys_.sched_kl;
  buffer_ = std::make_unique<ReplayBuffer>(cfg_.buffer_capacity, layout);

  ws_ = std::make_unique<Scratch>();
  ws_->grads.resize(n);
  adam_actor_.reserve(n);
  adam_critic_.reserve(n);
  for (int i = 0; i < n; ++i) {
    AgentNets& a = sys_.agents[i];
    AgentGrads& g = ws_->grads[i];
    g.policy = a.policy.make_grads();
    g.critic = a.critic.make_grads();
    if (sys_.comm) {
      g.protocol = a.protocol.make_grads();
      g.sched.query.dw.resize(a.sched_query.w.rows(), a.sched_query.w.cols());
      g.sched.query.db.resize(1, a.sched_query.b.cols());
      g.sched.key.dw.resize(a.sched_key.w.rows(), a.sched_key.w.cols());
      g.sched.key.db.resize(1, a.sched_key.b.cols());
      if (sys_.sched_kl) g.sched_head = a.sched_head.make_grads();
    }
    Adam actor_opt(cfg_.lr_actor);
    std::vector<Tensor*> aparams;
    walk_actor(a, nullptr, &aparams, nullptr);
    for (Tensor* p : aparams) actor_opt.bind(p);
    adam_actor_.push_back(std::move(actor_opt));

    Adam critic_opt(cfg_.lr_critic);
    std::vector<Tensor*> cparams;
    walk_critic(a, nullptr, &cparams, nullptr);
    for (Tensor* p : cparams) critic_opt.bind(p);
    adam_critic_.push_back(std::move(critic_opt));
  }
}

Trainer::~Trainer() = default;

const char* Trainer::metrics_header_prefix() { return "episode,reward_mean"; }

void Trainer::train(std::ostream* metrics, std::ostream* traj,
                    std::function<void(long)> on_checkpoint, long checkpoint_every) {
  const int n = sys_.n();
  const auto t0 = std::chrono::steady_clock::now();
  if (metrics) {
    *metrics << metrics_header_prefix();
    for (int i = 0; i < n; ++i) *metrics << ",reward_agent" << i;
    *metrics << ",kl_mean_nats,entropy_bound_bits,wall_clock_s\n";
  }
  if (traj) *traj << "episode,step,entity_id,x,y,vx,vy,reward\n";

  for (long e = 0; e < cfg_.episodes; ++e) {
    double frac_done = 0.0;
    const double horizon = cfg_.explore_anneal_frac * static_cast<double>(cfg_.episodes);
    if (horizon > 0.0) frac_done = static_cast<double>(e) / horizon;
    const double explore = cfg_.explore_noise * std::max(0.0, 1.0 - frac_done);

    EpisodeRow row;
    row.episode = e;
    rollout_episode(e, explore, row, traj);
    if (cfg_.deterministic) {
      row.wall_clock_s = 0.0;
    } else {
      row.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    if (metrics) {
      *metrics << row.episode << ',' << fmt_g(row.reward_mean);
      for (double r : row.reward_per_agent) *metrics << ',' << fmt_g(r);
      *metrics << ',' << fmt_g(row.kl_mean_nats) << ',' << fmt_g(row.entropy_bound_bits) << ','
               << fmt_g(row.wall_clock_s) << '\n';
    }
    if (on_checkpoint && checkpoint_every > 0 && (e + 1) % checkpoint_every == 0)
      on_checkpoint(e);
  }
}

void Trainer::rollout_episode(long episode, double explore, EpisodeRow& row, std::ostream* traj) {
  const int n = sys_.n();
  const std::size_t d = sys_.msg_dim;
  auto obs = env_.reset(rng_env_);
  std::vector<std::vector<double>> c_prev(n, std::vector<double>(d, 0.0));
  row.reward_per_agent.assign(n, 0.0);
  double kl_sum = 0.0;
  long kl_count = 0;
  ws_->pending = false;

  Tensor in_row, mean_row, lv_row, msg_row, pol_row, act_row, craw_row, hm_row, hlv_row;
  std::vector<Tensor> msg_tensors(n);
  SchedTrace sched_row;
  GaussianPrior prior = cfg_.prior();

  for (int t = 0; t < env_cfg_.episode_len; ++t) {
    std::vector<std::vector<double>> means(n), lvs(n), eps(n), seps(n), c_now(n), msgs(n);
    if (sys_.comm) {
      for (int i = 0; i < n; ++i) {
        in_row.resize(1, sys_.obs_dims[i] + d);
        for (std::size_t u = 0; u < sys_.obs_dims[i]; ++u) in_row.data[u] = obs[i][u];
        for (std::size_t u = 0; u < d; ++u) in_row.data[sys_.obs_dims[i] + u] = c_prev[i][u];
        sys_.agents[i].protocol.forward(in_row, mean_row, lv_row);
        eps[i].resize(d);
        msgs[i].resize(d);
        means[i].assign(mean_row.data.begin(), mean_row.data.end());
        lvs[i].assign(lv_row.data.begin(), lv_row.data.end());
        double kl = 0.0;
        for (std::size_t u = 0; u < d; ++u) {
          eps[i][u] = rng_msg_.normal();
          msgs[i][u] = means[i][u] + std::exp(0.5 * lvs[i][u]) * eps[i][u];
          const double var = std::exp(lvs[i][u]);
          const double dm = means[i][u] - prior.mean;
          kl += 0.5 * ((var + dm * dm) / prior.var - 1.0 -
                       (lvs[i][u] - std::log(prior.var)));
        }
        kl_sum += kl;
        ++kl_count;
        stats_.update(msgs[i]);
        msg_tensors[i].resize(1, d);
        msg_tensors[i].data = msgs[i];
      }
      for (int i = 0; i < n; ++i) {
        const auto& group = sys_.groups[sys_.group_of[i]];
        std::vector<const Tensor*> group_msgs;
        group_msgs.reserve(group.size());
        for (int j : group) group_msgs.push_back(&msg_tensors[j]);
        Tensor obs_row(1, sys_.obs_dims[i]);
        obs_row.data = obs[i];
        schedule_forward(sys_.agents[i].sched_query, sys_.agents[i].sched_key, obs_row,
                         group_msgs, sys_.local_index[i], sched_row);
        if (sys_.sched_kl) {
          sys_.agents[i].sched_head.forward(sched_row.scheduled, hm_row, hlv_row);
          seps[i].resize(d);
          c_now[i].resize(d);
          for (std::size_t u = 0; u < d; ++u) {
            seps[i][u] = rng_sched_.normal();
            c_now[i][u] = hm_row.data[u] + std::exp(0.5 * hlv_row.data[u]) * seps[i][u];
          }
        } else {
          c_now[i].assign(sched_row.scheduled.data.begin(), sched_row.scheduled.data.end());
        }
      }
    }

    std::vector<std::array<double, 2>> actions(n);
    for (int i = 0; i < n; ++i) {
      pol_row.resize(1, sys_.obs_dims[i] + (sys_.comm ? d : 0));
      for (std::size_t u = 0; u < sys_.obs_dims[i]; ++u) pol_row.data[u] = obs[i][u];
      if (sys_.comm)
        for (std::size_t u = 0; u < d; ++u) pol_row.data[sys_.obs_dims[i] + u] = c_now[i][u];
      sys_.agents[i].policy.forward(pol_row, act_row);
      for (int u = 0; u < 2; ++u) {
        double a = act_row.data[u];
        if (explore > 0.0) a += explore * rng_explore_.normal();
        actions[i][u] = std::clamp(a, -1.0, 1.0);
      }
    }

    // The scheduled messages of this step complete the previous transition.
    if (ws_->pending) {
      const std::size_t slot = buffer_->begin_push();
      push_slot(slot, c_now);
    }
    ws_->p_obs = obs;
    ws_->p_cprev = c_prev;
    ws_->p_c = c_now;
    ws_->p_mean = means;
    ws_->p_lv = lvs;
    ws_->p_eps = eps;
    ws_->p_seps = seps;
    ws_->p_act = actions;

    auto res = env_.step(actions);
    ws_->p_r = res.rewards;
    ws_->p_obs_next = res.obs;
    ws_->p_done = res.terminal;  // time-limit slices keep bootstrapping
    ws_->pending = true;

    for (int i = 0; i < n; ++i) row.reward_per_agent[i] += res.rewards[i];

    if (traj) {
      for (int i = 0; i < n; ++i) {
        const auto& st = env_.state();
        *traj << episode << ',' << t << ',' << i << ',' << fmt_g(st.pos[i].x) << ','
              << fmt_g(st.pos[i].y) << ',' << fmt_g(st.vel[i].x) << ',' << fmt_g(st.vel[i].y)
              << ',' << fmt_g(res.rewards[i]) << '\n';
      }
      for (int l = 0; l < env_cfg_.n_landmarks; ++l) {
        const auto& lm = env_.state().landmarks[l];
        *traj << episode << ',' << t << ',' << (n + l) << ',' << fmt_g(lm.x) << ','
              << fmt_g(lm.y) << ",0,0,0\n";
      }
    }

    obs = res.obs;
    c_prev = c_now;
    ++global_step_;
    if (updates_enabled_ && global_step_ >= cfg_.warmup_steps &&
        buffer_->size() >= cfg_.batch_size && global_step_ % cfg_.steps_per_update == 0) {
      update_step();
    }
  }

  if (ws_->pending) {
    std::vector<std::vector<double>> zero_c(n, std::vector<double>(d, 0.0));
    const std::size_t slot = buffer_->begin_push();
    push_slot(slot, zero_c);
    ws_->pending = false;
  }

  double sum = 0.0;
  for (double r : row.reward_per_agent) sum += r;
  row.reward_mean = sum / static_cast<double>(n);
  row.kl_mean_nats = kl_count > 0 ? kl_sum / static_cast<double>(kl_count) : 0.0;
  row.entropy_bound_bits =
      (sys_.comm && stats_.count() >= 2) ? gaussian_entropy_bound(stats_) : kNaN;
}

void Trainer::push_slot(std::size_t slot, const std::vector<std::vector<double>>& c_next) {
  const int n = sys_.n();
  const std::size_t d = sys_.msg_dim;
  for (int i = 0; i < n; ++i) {
    auto& col = buffer_->agent(i);
    const std::size_t od = sys_.obs_dims[i];
    std::copy(ws_->p_obs[i].begin(), ws_->p_obs[i].end(), col.obs.begin() + slot * od);
    std::copy(ws_->p_obs_next[i].begin(), ws_->p_obs_next[i].end(),
              col.obs_next.begin() + slot * od);
    col.action[slot * 2] = ws_->p_act[i][0];
    col.action[slot * 2 + 1] = ws_->p_act[i][1];
    col.reward[slot] = ws_->p_r[i];
    if (d > 0) {
      std::copy(ws_->p_cprev[i].begin(), ws_->p_cprev[i].end(), col.c_prev.begin() + slot * d);
      std::copy(ws_->p_c[i].begin(), ws_->p_c[i].end(), col.c.begin() + slot * d);
      std::copy(c_next[i].begin(), c_next[i].end(), col.c_next.begin() + slot * d);
      std::copy(ws_->p_mean[i].begin(), ws_->p_mean[i].end(), col.m_mean.begin() + slot * d);
      std::copy(ws_->p_lv[i].begin(), ws_->p_lv[i].end(), col.m_log_var.begin() + slot * d);
      std::copy(ws_->p_eps[i].begin(), ws_->p_eps[i].end(), col.noise.begin() + slot * d);
      if (sys_.sched_kl)
        std::copy(ws_->p_seps[i].begin(), ws_->p_seps[i].end(),
                  col.sched_noise.begin() + slot * d);
    }
  }
  buffer_->done()[slot] = ws_->p_done ? 1 : 0;
}

void Trainer::update_step() {
  gather_batch(buffer_->sample_indices(cfg_.batch_size, rng_sample_));
  critic_update();
  actor_update();
  for (int i = 0; i < sys_.n(); ++i) sys_.agents[i].soft_update(cfg_.tau);
}

void Trainer::gather_batch(const std::vector<std::size_t>& idx) {
  auto& w = *ws_;
  w.idx = idx;
  const int n = sys_.n();
  const std::size_t B = idx.size();
  const std::size_t d = sys_.msg_dim;

  w.b_obs.resize(n);
  w.b_obs_next.resize(n);
  w.b_cprev.resize(n);
  w.b_c.resize(n);
  w.b_act.resize(n);
  w.b_r.resize(n);
  w.b_eps.resize(n);
  w.b_seps.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& col = buffer_->agent(i);
    ReplayBuffer::gather(col.obs, sys_.obs_dims[i], w.idx, w.b_obs[i]);
    ReplayBuffer::gather(col.obs_next, sys_.obs_dims[i], w.idx, w.b_obs_next[i]);
    ReplayBuffer::gather(col.action, 2, w.idx, w.b_act[i]);
    ReplayBuffer::gather(col.reward, 1, w.idx, w.b_r[i]);
    if (d > 0) {
      ReplayBuffer::gather(col.c_prev, d, w.idx, w.b_cprev[i]);
      ReplayBuffer::gather(col.c, d, w.idx, w.b_c[i]);
      ReplayBuffer::gather(col.noise, d, w.idx, w.b_eps[i]);
      if (sys_.sched_kl) ReplayBuffer::gather(col.sched_noise, d, w.idx, w.b_seps[i]);
    }
  }
  w.done_col.resize(B, 1);
  for (std::size_t r = 0; r < B; ++r)
    w.done_col.data[r] = buffer_->done()[w.idx[r]] ? 1.0 : 0.0;
}

// TD targets: next-step messages and scheduled messages are rebuilt with the
// target-side protocol/scheduler, actions with the target policies, values
// with the target critics.
void Trainer::compute_targets() {
  auto& w = *ws_;
  const int n = sys_.n();
  const std::size_t B = w.done_col.rows();
  const std::size_t d = sys_.msg_dim;

  w.t_in.resize(n);
  w.t_mean.resize(n);
  w.t_lv.resize(n);
  w.t_msg.resize(n);
  w.t_c.resize(n);
  w.t_sched.resize(n);
  w.t_polin.resize(n);
  w.t_act.resize(n);
  w.y.resize(n);
  if (sys_.comm) {
    for (int i = 0; i < n; ++i) {
      concat_cols(w.b_obs_next[i], w.b_c[i], w.t_in[i]);
      sys_.agents[i].target_protocol.forward(w.t_in[i], w.t_mean[i], w.t_lv[i]);
      w.t_msg[i] = w.t_mean[i];  // deterministic target message
    }
    for (int i = 0; i < n; ++i) {
      const auto& group = sys_.groups[sys_.group_of[i]];
      std::vector<const Tensor*> gm;
      gm.reserve(group.size());
      for (int j : group) gm.push_back(&w.t_msg[j]);
      schedule_forward(sys_.agents[i].target_sched_query, sys_.agents[i].target_sched_key,
                       w.b_obs_next[i], gm, sys_.local_index[i], w.t_sched[i]);
      if (sys_.sched_kl) {
        Tensor hm, hlv;
        sys_.agents[i].target_sched_head.forward(w.t_sched[i].scheduled, hm, hlv);
        w.t_c[i] = hm;
      } else {
        w.t_c[i] = w.t_sched[i].scheduled;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (sys_.comm) {
      concat_cols(w.b_obs_next[i], w.t_c[i], w.t_polin[i]);
    } else {
      w.t_polin[i] = w.b_obs_next[i];
    }
    sys_.agents[i].target_policy.forward(w.t_polin[i], w.t_act[i]);
  }

  w.joint_next.resize(B, sys_.critic_in);
  w.joint_now.resize(B, sys_.critic_in);
  std::size_t off = 0;
  for (int j = 0; j < n; ++j) {
    copy_block(w.joint_next, off, w.b_obs_next[j]);
    copy_block(w.joint_now, off, w.b_obs[j]);
    off += sys_.obs_dims[j];
    if (sys_.comm) {
      copy_block(w.joint_next, off, w.t_c[j]);
      copy_block(w.joint_now, off, w.b_c[j]);
      off += d;
    }
  }
  for (int j = 0; j < n; ++j) {
    copy_block(w.joint_next, off, w.t_act[j]);
    copy_block(w.joint_now, off, w.b_act[j]);
    off += 2;
  }

  for (int i = 0; i < n; ++i) {
    sys_.agents[i].target_critic.forward(w.joint_next, w.qt);
    w.y[i].resize(B, 1);
    for (std::size_t r = 0; r < B; ++r)
      w.y[i].data[r] =
          w.b_r[i].data[r] + cfg_.gamma * (1.0 - w.done_col.data[r]) * w.qt.data[r];
  }
}

double Trainer::critic_forward_loss(int agent, bool with_trace) {
  auto& w = *ws_;
  const std::size_t B = w.done_col.rows();
  const Tensor* q = nullptr;
  if (with_trace) {
    q = &sys_.agents[agent].critic.forward(w.joint_now, w.critic_tr);
  } else {
    sys_.agents[agent].critic.forward(w.joint_now, w.qt);
    q = &w.qt;
  }
  w.upstream.resize(B, 1);
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const double diff = q->data[r] - w.y[agent].data[r];
    loss += diff * diff;
    w.upstream.data[r] = 2.0 * diff / static_cast<double>(B);
  }
  return loss / static_cast<double>(B);
}

void Trainer::critic_update() {
  auto& w = *ws_;
  compute_targets();
  for (int i = 0; i < sys_.n(); ++i) {
    const double loss = critic_forward_loss(i, true);
    if (!std::isfinite(loss)) {
      ++skipped_updates_;
      std::cerr << "[train] skipping critic update for agent " << i << ": non-finite loss\n";
      continue;
    }
    DenseNet::zero_grads(w.grads[i].critic);
    sys_.agents[i].critic.backward(w.critic_tr, w.upstream, &w.grads[i].critic, nullptr);
    std::vector<const Tensor*> gl;
    walk_critic(sys_.agents[i], &w.grads[i], nullptr, &gl);
    clip_grads(gl, cfg_.grad_clip);
    if (!adam_critic_[i].step(gl)) {
      ++skipped_updates_;
      std::cerr << "[train] skipping critic update for agent " << i
                << ": non-finite gradient\n";
    }
  }
}

// Joint actor objective: sum_i [ -mean(Q_i) + beta * mean(KL_i) ], with this
// agent's action replayed through its policy and all messages re-sampled
// through the stored reparameterization noise.
double Trainer::actor_forward_loss() {
  auto& w = *ws_;
  const int n = sys_.n();
  const std::size_t B = w.done_col.rows();
  const std::size_t d = sys_.msg_dim;
  const GaussianPrior prior = cfg_.prior();
  const double beta = cfg_.effective_beta();

  w.proto_tr.resize(n);
  w.msg.resize(n);
  w.c_raw.resize(n);
  w.c_now.resize(n);
  w.d_c.resize(n);
  w.d_m.resize(n);
  w.d_mean.resize(n);
  w.d_lv.resize(n);
  w.polin.resize(n);
  w.a_new.resize(n);
  w.sched_tr.resize(n);
  w.head_tr.resize(n);
  w.d_hm.resize(n);
  w.d_hlv.resize(n);
  w.d_craw.resize(n);
  w.pol_tr.resize(n);
  w.q_actor.resize(n);

  double loss = 0.0;
  if (sys_.comm) {
    Tensor proto_in;
    for (int i = 0; i < n; ++i) {
      concat_cols(w.b_obs[i], w.b_cprev[i], proto_in);
      sys_.agents[i].protocol.forward(proto_in, w.proto_tr[i]);
      reparam(w.proto_tr[i].mean, w.proto_tr[i].log_var, w.b_eps[i], w.msg[i]);
      const auto kl = kl_to_prior(w.proto_tr[i].mean, w.proto_tr[i].log_var, prior);
      double kl_mean = 0.0;
      for (double v : kl) kl_mean += v;
      loss += beta * kl_mean / static_cast<double>(B);
    }
    for (int i = 0; i < n; ++i) {
      const auto& group = sys_.groups[sys_.group_of[i]];
      std::vector<const Tensor*> gm;
      gm.reserve(group.size());
      for (int j : group) gm.push_back(&w.msg[j]);
      schedule_forward(sys_.agents[i].sched_query, sys_.agents[i].sched_key, w.b_obs[i], gm,
                       sys_.local_index[i], w.sched_tr[i]);
      w.c_raw[i] = w.sched_tr[i].scheduled;
      if (sys_.sched_kl) {
        sys_.agents[i].sched_head.forward(w.c_raw[i], w.head_tr[i]);
        reparam(w.head_tr[i].mean, w.head_tr[i].log_var, w.b_seps[i], w.c_now[i]);
        if (cfg_.sched_kl_beta > 0.0) {
          const auto kl = kl_to_prior(w.head_tr[i].mean, w.head_tr[i].log_var, prior);
          double kl_mean = 0.0;
          for (double v : kl) kl_mean += v;
          loss += cfg_.sched_kl_beta * kl_mean / static_cast<double>(B);
        }
      } else {
        w.c_now[i] = w.c_raw[i];
      }
      w.d_c[i].resize(B, d);
      w.d_m[i].resize(B, d);
    }
  }

  for (int i = 0; i < n; ++i) {
    if (sys_.comm) {
      concat_cols(w.b_obs[i], w.c_now[i], w.polin[i]);
    } else {
      w.polin[i] = w.b_obs[i];
    }
    w.a_new[i] = sys_.agents[i].policy.forward(w.polin[i], w.pol_tr[i]);
  }

  // Shared joint input; per agent only its own action block changes.
  w.joint_actor.resize(B, sys_.critic_in);
  w.c_off.assign(n, 0);
  w.act_off.assign(n, 0);
  std::size_t off = 0;
  for (int j = 0; j < n; ++j) {
    copy_block(w.joint_actor, off, w.b_obs[j]);
    off += sys_.obs_dims[j];
    w.c_off[j] = off;
    if (sys_.comm) {
      copy_block(w.joint_actor, off, w.c_now[j]);
      off += d;
    }
  }
  for (int j = 0; j < n; ++j) {
    w.act_off[j] = off;
    copy_block(w.joint_actor, off, w.b_act[j]);
    off += 2;
  }

  const double inv_b = 1.0 / static_cast<double>(B);
  for (int i = 0; i < n; ++i) {
    slice_block(w.joint_actor, w.act_off[i], 2, w.saved_action, false);
    copy_block(w.joint_actor, w.act_off[i], w.a_new[i]);
    sys_.agents[i].critic.forward(w.joint_actor, w.q_actor[i]);
    copy_block(w.joint_actor, w.act_off[i], w.saved_action);
    for (std::size_t r = 0; r < B; ++r) loss -= w.q_actor[i].data[r] * inv_b;
  }
  return loss;
}

void Trainer::actor_backward() {
  auto& w = *ws_;
  const int n = sys_.n();
  const std::size_t B = w.done_col.rows();
  const std::size_t d = sys_.msg_dim;
  const GaussianPrior prior = cfg_.prior();
  const double beta = cfg_.effective_beta();
  const double inv_b = 1.0 / static_cast<double>(B);

  for (int i = 0; i < n; ++i) {
    AgentGrads& g = w.grads[i];
    DenseNet::zero_grads(g.policy);
    if (sys_.comm) {
      sys_.agents[i].protocol.zero_grads(g.protocol);
      g.sched.query.dw.zero();
      g.sched.query.db.zero();
      g.sched.key.dw.zero();
      g.sched.key.db.zero();
      if (sys_.sched_kl) sys_.agents[i].sched_head.zero_grads(g.sched_head);
      w.d_c[i].zero();
      w.d_m[i].zero();
    }
  }

  for (int i = 0; i < n; ++i) {
    // Re-run the critic forward with this agent's fresh action to hold the
    // trace, then pull gradients back to messages and the policy.
    slice_block(w.joint_actor, w.act_off[i], 2, w.saved_action, false);
    copy_block(w.joint_actor, w.act_off[i], w.a_new[i]);
    sys_.agents[i].critic.forward(w.joint_actor, w.critic_tr);
    w.upstream.resize(B, 1);
    for (std::size_t r = 0; r < B; ++r) w.upstream.data[r] = -inv_b;
    sys_.agents[i].critic.backward(w.critic_tr, w.upstream, nullptr, &w.d_joint);
    copy_block(w.joint_actor, w.act_off[i], w.saved_action);

    if (sys_.comm) {
      for (int j = 0; j < n; ++j) slice_block(w.d_joint, w.c_off[j], d, w.d_c[j], true);
    }
    slice_block(w.d_joint, w.act_off[i], 2, w.d_a, false);
    sys_.agents[i].policy.backward(w.pol_tr[i], w.d_a, &w.grads[i].policy, &w.d_polin);
    if (sys_.comm) slice_block(w.d_polin, sys_.obs_dims[i], d, w.d_c[i], true);
  }

  if (!sys_.comm) return;

  // Scheduler backward per recipient, accumulating message gradients across
  // recipients so every sender's protocol sees the full cross-agent flow.
  for (int i = 0; i < n; ++i) {
    const Tensor* d_c_in = &w.d_c[i];
    if (sys_.sched_kl) {
      w.d_hm[i].resize(B, d);
      w.d_hlv[i].resize(B, d);
      reparam_backward(w.head_tr[i].log_var, w.b_seps[i], w.d_c[i], w.d_hm[i], w.d_hlv[i]);
      if (cfg_.sched_kl_beta > 0.0)
        kl_to_prior_backward(w.head_tr[i].mean, w.head_tr[i].log_var, prior,
                             cfg_.sched_kl_beta * inv_b, w.d_hm[i], w.d_hlv[i]);
      sys_.agents[i].sched_head.backward(w.head_tr[i], w.d_hm[i], w.d_hlv[i],
                                         w.grads[i].sched_head, &w.d_craw[i]);
      d_c_in = &w.d_craw[i];
    }
    const auto& group = sys_.groups[sys_.group_of[i]];
    std::vector<const Tensor*> gm;
    std::vector<Tensor*> dgm;
    gm.reserve(group.size());
    dgm.reserve(group.size());
    for (int j : group) {
      gm.push_back(&w.msg[j]);
      dgm.push_back(&w.d_m[j]);
    }
    schedule_backward(sys_.agents[i].sched_query, sys_.agents[i].sched_key, w.b_obs[i], gm,
                      sys_.local_index[i], w.sched_tr[i], *d_c_in, w.grads[i].sched, dgm);
  }

  for (int i = 0; i < n; ++i) {
    w.d_mean[i].resize(B, d);
    w.d_lv[i].resize(B, d);
    reparam_backward(w.proto_tr[i].log_var, w.b_eps[i], w.d_m[i], w.d_mean[i], w.d_lv[i]);
    if (beta > 0.0)
      kl_to_prior_backward(w.proto_tr[i].mean, w.proto_tr[i].log_var, prior, beta * inv_b,
                           w.d_mean[i], w.d_lv[i]);
    sys_.agents[i].protocol.backward(w.proto_tr[i], w.d_mean[i], w.d_lv[i],
                                     w.grads[i].protocol, nullptr);
  }
}

void Trainer::actor_update() {
  auto& w = *ws_;
  const double loss = actor_forward_loss();
  if (!std::isfinite(loss)) {
    ++skipped_updates_;
    std::cerr << "[train] skipping actor update: non-finite loss\n";
    return;
  }
  actor_backward();
  for (int i = 0; i < sys_.n(); ++i) {
    std::vector<const Tensor*> gl;
    walk_actor(sys_.agents[i], &w.grads[i], nullptr, &gl);
    clip_grads(gl, cfg_.grad_clip);
    if (!adam_actor_[i].step(gl)) {
      ++skipped_updates_;
      std::cerr << "[train] skipping actor update for agent " << i
                << ": non-finite gradient\n";
    }
  }
}

void Trainer::fill_buffer_episodes(long episodes) {
  updates_enabled_ = false;
  for (long e = 0; e < episodes; ++e) {
    EpisodeRow row;
    rollout_episode(e, cfg_.explore_noise, row, nullptr);
  }
  updates_enabled_ = true;
}

std::vector<std::size_t> Trainer::sample_batch_indices(std::size_t batch) {
  return buffer_->sample_indices(batch, rng_sample_);
}

double Trainer::actor_loss(const std::vector<std::size_t>& idx) {
  gather_batch(idx);
  return actor_forward_loss();
}

double Trainer::critic_loss(int agent, const std::vector<std::size_t>& idx) {
  gather_batch(idx);
  compute_targets();
  return critic_forward_loss(agent, false);
}

std::vector<Trainer::GradBlock> Trainer::actor_grad_blocks(const std::vector<std::size_t>& idx) {
  gather_batch(idx);
  actor_forward_loss();
  actor_backward();
  std::vector<GradBlock> out;
  for (int i = 0; i < sys_.n(); ++i) {
    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    walk_actor(sys_.agents[i], &ws_->grads[i], &params, &grads);
    auto named = sys_.agents[i].named_params(false);
    std::size_t p = 0;
    for (auto& [name, tensor] : named) {
      if (is_critic_param(name)) continue;
      out.push_back({"agent" + std::to_string(i) + "/" + name, params[p], *grads[p]});
      ++p;
    }
  }
  return out;
}

std::vector<Trainer::GradBlock> Trainer::critic_grad_blocks(int agent,
                                                            const std::vector<std::size_t>& idx) {
  gather_batch(idx);
  compute_targets();
  critic_forward_loss(agent, true);
  DenseNet::zero_grads(ws_->grads[agent].critic);
  sys_.agents[agent].critic.backward(ws_->critic_tr, ws_->upstream, &ws_->grads[agent].critic,
                                     nullptr);
  std::vector<GradBlock> out;
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  walk_critic(sys_.agents[agent], &ws_->grads[agent], &params, &grads);
  auto named = sys_.agents[agent].named_params(false);
  std::size_t p = 0;
  for (auto& [name, tensor] : named) {
    if (!is_critic_param(name)) continue;
    out.push_back({"agent" + std::to_string(agent) + "/" + name, params[p], *grads[p]});
    ++p;
  }
  return out;
}

ExecResult exec_rollouts(const EnvConfig& env_cfg, const MultiAgentSystem& sys,
                         const RunningStats* stats, const ExecOptions& opt,
                         RunningStats* record_stats) {
  if (opt.episodes < 1) throw ConfigError("exec: episodes must be >= 1");
  if (opt.use_limiter) {
    if (stats == nullptr || stats->count() < 2)
      throw DomainError(
          "execution limiter needs recorded message stats; retrain to produce them");
    if (!(opt.target_var > 0.0)) throw DomainError("exec: target variance must be > 0");
  }
  Env env(env_cfg);
  Rng rng_env = make_stream(opt.seed, "exec_env");
  Rng rng_msg = make_stream(opt.seed, "exec_protocol_noise");
  Rng rng_sched = make_stream(opt.seed, "exec_sched_head_noise");

  const int n = sys.n();
  const std::size_t d = sys.msg_dim;
  ExecResult result;
  result.episode_agent_returns.resize(opt.episodes);

  Tensor in_row, mean_row, lv_row, pol_row, act_row, hm_row, hlv_row;
  std::vector<Tensor> msg_tensors(n);
  SchedTrace sched_row;

  for (long ep = 0; ep < opt.episodes; ++ep) {
    auto obs = env.reset(rng_env);
    std::vector<std::vector<double>> c_prev(n, std::vector<double>(d, 0.0));
    std::vector<double> returns(n, 0.0);
    for (int t = 0; t < env_cfg.episode_len; ++t) {
      std::vector<std::vector<double>> c_now(n);
      if (sys.comm) {
        for (int i = 0; i < n; ++i) {
          in_row.resize(1, sys.obs_dims[i] + d);
          for (std::size_t u = 0; u < sys.obs_dims[i]; ++u) in_row.data[u] = obs[i][u];
          for (std::size_t u = 0; u < d; ++u) in_row.data[sys.obs_dims[i] + u] = c_prev[i][u];
          sys.agents[i].protocol.forward(in_row, mean_row, lv_row);
          std::vector<double> m(d);
          for (std::size_t u = 0; u < d; ++u)
            m[u] = mean_row.data[u] + std::exp(0.5 * lv_row.data[u]) * rng_msg.normal();
          if (opt.use_limiter) m = limit_message(m, *stats, opt.target_var);
          if (record_stats) record_stats->update(m);
          msg_tensors[i].resize(1, d);
          msg_tensors[i].data = m;
        }
        for (int i = 0; i < n; ++i) {
          const auto& group = sys.groups[sys.group_of[i]];
          std::vector<const Tensor*> gm;
          gm.reserve(group.size());
          for (int j : group) gm.push_back(&msg_tensors[j]);
          Tensor obs_row(1, sys.obs_dims[i]);
          obs_row.data = obs[i];
          schedule_forward(sys.agents[i].sched_query, sys.agents[i].sched_key, obs_row, gm,
                           sys.local_index[i], sched_row);
          std::vector<double> c(d);
          if (sys.sched_kl) {
            sys.agents[i].sched_head.forward(sched_row.scheduled, hm_row, hlv_row);
            for (std::size_t u = 0; u < d; ++u)
              c[u] = hm_row.data[u] + std::exp(0.5 * hlv_row.data[u]) * rng_sched.normal();
          } else {
            c.assign(sched_row.scheduled.data.begin(), sched_row.scheduled.data.end());
          }
          if (opt.use_limiter) c = limit_message(c, *stats, opt.target_var);
          c_now[i] = std::move(c);
        }
      }
      std::vector<std::array<double, 2>> actions(n);
      for (int i = 0; i < n; ++i) {
        pol_row.resize(1, sys.obs_dims[i] + (sys.comm ? d : 0));
        for (std::size_t u = 0; u < sys.obs_dims[i]; ++u) pol_row.data[u] = obs[i][u];
        if (sys.comm)
          for (std::size_t u = 0; u < d; ++u) pol_row.data[sys.obs_dims[i] + u] = c_now[i][u];
        sys.agents[i].policy.forward(pol_row, act_row);
        actions[i] = {std::clamp(act_row.data[0], -1.0, 1.0),
                      std::clamp(act_row.data[1], -1.0, 1.0)};
      }
      auto res = env.step(actions);
      for (int i = 0; i < n; ++i) returns[i] += res.rewards[i];
      obs = res.obs;
      if (sys.comm) c_prev = std::move(c_now);
    }
    result.episode_agent_returns[ep] = std::move(returns);
  }
  return result;
}

}  // namespace imac

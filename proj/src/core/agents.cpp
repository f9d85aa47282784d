#include "core/agents.hpp"

#include <cmath>

namespace imac {

std::vector<double> kl_to_prior(const Tensor& mean, const Tensor& log_var,
                                const GaussianPrior& prior) {
  check_same_shape(mean, log_var, "kl_to_prior");
  if (!(prior.var > 0.0)) throw DomainError("kl_to_prior: prior variance must be > 0");
  const std::size_t b = mean.rows(), d = mean.cols();
  const double log_prior_var = std::log(prior.var);
  std::vector<double> out(b, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    const double* mu = mean.row(r);
    const double* lv = log_var.row(r);
    double kl = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double var = std::exp(lv[j]);
      const double dm = mu[j] - prior.mean;
      kl += 0.5 * ((var + dm * dm) / prior.var - 1.0 - (lv[j] - log_prior_var));
    }
    out[r] = kl;
  }
  return out;
}

void kl_to_prior_backward(const Tensor& mean, const Tensor& log_var, const GaussianPrior& prior,
                          double coef, Tensor& d_mean, Tensor& d_log_var) {
  check_same_shape(mean, log_var, "kl_to_prior_backward");
  check_same_shape(mean, d_mean, "kl_to_prior_backward");
  check_same_shape(mean, d_log_var, "kl_to_prior_backward");
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    const double var = std::exp(log_var.data[i]);
    d_mean.data[i] += coef * (mean.data[i] - prior.mean) / prior.var;
    d_log_var.data[i] += coef * 0.5 * (var / prior.var - 1.0);
  }
}

namespace {

void layer_forward(const Layer& l, const Tensor& x, Tensor& y) {
  gemm_nt(x, l.w, y);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double* row = y.row(r);
    for (std::size_t j = 0; j < y.cols(); ++j) row[j] += l.b.data[j];
  }
}

void layer_backward(const Layer& l, const Tensor& x, const Tensor& dy, LayerGrads* g,
                    Tensor* dx) {
  if (g) {
    gemm_tn(dy, x, g->dw, /*acc=*/true);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const double* row = dy.row(r);
      for (std::size_t j = 0; j < dy.cols(); ++j) g->db.data[j] += row[j];
    }
  }
  if (dx) gemm(dy, l.w, *dx);
}

}  // namespace

void schedule_forward(const Layer& query_net, const Layer& key_net, const Tensor& obs,
                      const std::vector<const Tensor*>& messages, int recipient, SchedTrace& t) {
  const std::size_t n = messages.size();
  if (n == 0) throw ConfigError("schedule: need at least one message");
  const std::size_t b = messages[0]->rows(), d = messages[0]->cols();
  t.scheduled.resize(b, d);
  t.weights.resize(b, n);
  if (n == 1) {
    // No other agents: nothing to aggregate.
    return;
  }
  layer_forward(query_net, obs, t.query);
  t.keys.resize(n);
  const std::size_t qd = t.query.cols();
  for (std::size_t j = 0; j < n; ++j) {
    if (static_cast<int>(j) == recipient) continue;
    layer_forward(key_net, *messages[j], t.keys[j]);
  }
  std::vector<double> scores(n, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    // softmax over the senders' scores, self excluded
    double max_s = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) == recipient) continue;
      const double* q = t.query.row(r);
      const double* k = t.keys[j].row(r);
      double s = 0.0;
      for (std::size_t u = 0; u < qd; ++u) s += q[u] * k[u];
      scores[j] = s;
      max_s = std::max(max_s, s);
    }
    double z = 0.0;
    double* w = t.weights.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) == recipient) {
        w[j] = 0.0;
        continue;
      }
      w[j] = std::exp(scores[j] - max_s);
      z += w[j];
    }
    double* c = t.scheduled.row(r);
    for (std::size_t u = 0; u < d; ++u) c[u] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) == recipient) continue;
      w[j] /= z;
      const double* m = messages[j]->row(r);
      for (std::size_t u = 0; u < d; ++u) c[u] += w[j] * m[u];
    }
  }
}

void schedule_backward(const Layer& query_net, const Layer& key_net, const Tensor& obs,
                       const std::vector<const Tensor*>& messages, int recipient,
                       const SchedTrace& t, const Tensor& d_scheduled, SchedGrads& g,
                       const std::vector<Tensor*>& d_messages) {
  const std::size_t n = messages.size();
  if (n <= 1) return;  // zero scheduled message, no gradient flows
  const std::size_t b = messages[0]->rows(), d = messages[0]->cols();
  const std::size_t qd = t.query.cols();
  auto& scratch = const_cast<SchedTrace&>(t);
  scratch.d_query.resize(b, qd);
  scratch.d_keys.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (static_cast<int>(j) == recipient) continue;
    scratch.d_keys[j].resize(b, qd);
  }

  for (std::size_t r = 0; r < b; ++r) {
    const double* dc = d_scheduled.row(r);
    const double* w = t.weights.row(r);
    const double* c = t.scheduled.row(r);
    // ds_j = w_j * (m_j - c) . dc
    double cd = 0.0;
    for (std::size_t u = 0; u < d; ++u) cd += c[u] * dc[u];
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) == recipient || w[j] == 0.0) continue;
      const double* m = messages[j]->row(r);
      double md = 0.0;
      for (std::size_t u = 0; u < d; ++u) md += m[u] * dc[u];
      const double ds = w[j] * (md - cd);
      // direct convex-combination path
      double* dm = d_messages[j]->row(r);
      for (std::size_t u = 0; u < d; ++u) dm[u] += w[j] * dc[u];
      // score paths: s_j = q . k_j
      const double* q = t.query.row(r);
      const double* k = t.keys[j].row(r);
      double* dq = scratch.d_query.row(r);
      double* dk = scratch.d_keys[j].row(r);
      for (std::size_t u = 0; u < qd; ++u) {
        dq[u] += ds * k[u];
        dk[u] += ds * q[u];
      }
    }
  }

  layer_backward(query_net, obs, scratch.d_query, &g.query, nullptr);
  Tensor dm_from_key;
  for (std::size_t j = 0; j < n; ++j) {
    if (static_cast<int>(j) == recipient) continue;
    layer_backward(key_net, *messages[j], scratch.d_keys[j], &g.key, &dm_from_key);
    for (std::size_t i = 0; i < dm_from_key.numel(); ++i)
      d_messages[j]->data[i] += dm_from_key.data[i];
  }
}

void AgentNets::build(const AgentArch& a, Rng& rng) {
  arch = a;
  const std::size_t policy_in = a.obs_dim + (a.comm ? a.msg_dim : 0);
  std::vector<std::size_t> pdims{policy_in};
  pdims.insert(pdims.end(), a.hidden.begin(), a.hidden.end());
  pdims.push_back(a.action_dim);
  policy = DenseNet(pdims, Act::relu, Act::tanh);
  policy.init(rng);

  if (a.comm) {
    std::vector<std::size_t> tdims{a.obs_dim + a.msg_dim};
    tdims.insert(tdims.end(), a.hidden.begin(), a.hidden.end());
    protocol = GaussianHead(tdims, a.msg_dim, Act::relu);
    protocol.mean_bound = a.msg_amplitude;
    protocol.init(rng, 0.1);

    sched_query.w.resize(a.query_dim, a.obs_dim);
    sched_query.b.resize(1, a.query_dim);
    sched_key.w.resize(a.query_dim, a.msg_dim);
    sched_key.b.resize(1, a.query_dim);
    const double sq = std::sqrt(6.0 / double(a.query_dim + a.obs_dim));
    for (double& v : sched_query.w.data) v = rng.uniform(-sq, sq);
    const double sk = std::sqrt(6.0 / double(a.query_dim + a.msg_dim));
    for (double& v : sched_key.w.data) v = rng.uniform(-sk, sk);

    if (a.sched_kl) {
      sched_head = GaussianHead({a.msg_dim, 32}, a.msg_dim, Act::relu);
      sched_head.mean_bound = a.msg_amplitude;
      sched_head.init(rng, 0.1);
    }
  }

  std::vector<std::size_t> cdims{a.critic_in};
  cdims.insert(cdims.end(), a.hidden.begin(), a.hidden.end());
  cdims.push_back(1);
  critic = DenseNet(cdims, Act::relu, Act::linear);
  critic.init(rng);

  sync_targets_hard();
}

void AgentNets::sync_targets_hard() {
  target_policy = policy;
  target_protocol = protocol;
  target_sched_query = sched_query;
  target_sched_key = sched_key;
  target_sched_head = sched_head;
  target_critic = critic;
}

namespace {
// Incremental form: exactly a no-op when target already equals online.
void blend(Tensor& target, const Tensor& online, double tau) {
  for (std::size_t i = 0; i < target.numel(); ++i)
    target.data[i] += tau * (online.data[i] - target.data[i]);
}
}  // namespace

void AgentNets::soft_update(double tau) {
  if (!(tau > 0.0) || tau > 1.0) throw ConfigError("soft_update: tau must be in (0, 1]");
  auto online = named_params(false);
  auto targets = named_params(true);
  for (std::size_t i = 0; i < online.size(); ++i)
    blend(*targets[i].second, *online[i].second, tau);
}

std::vector<std::pair<std::string, Tensor*>> AgentNets::named_params(bool targets) {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_net = [&out](const std::string& prefix, DenseNet& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      out.emplace_back(prefix + "/l" + std::to_string(l) + "/w", &net.layers[l].w);
      out.emplace_back(prefix + "/l" + std::to_string(l) + "/b", &net.layers[l].b);
    }
  };
  auto add_layer = [&out](const std::string& prefix, Layer& l) {
    out.emplace_back(prefix + "/w", &l.w);
    out.emplace_back(prefix + "/b", &l.b);
  };
  DenseNet& pol = targets ? target_policy : policy;
  GaussianHead& pro = targets ? target_protocol : protocol;
  Layer& sq = targets ? target_sched_query : sched_query;
  Layer& sk = targets ? target_sched_key : sched_key;
  GaussianHead& sh = targets ? target_sched_head : sched_head;
  DenseNet& cri = targets ? target_critic : critic;

  add_net("policy", pol);
  if (arch.comm) {
    add_net("protocol/trunk", pro.trunk);
    add_layer("protocol/mean", pro.mean);
    add_layer("protocol/log_var", pro.log_var);
    add_layer("sched/query", sq);
    add_layer("sched/key", sk);
    if (arch.sched_kl) {
      add_net("sched/head/trunk", sh.trunk);
      add_layer("sched/head/mean", sh.mean);
      add_layer("sched/head/log_var", sh.log_var);
    }
  }
  add_net("critic", cri);
  return out;
}

bool is_actor_param(const std::string& name) {
  return name.rfind("policy", 0) == 0 || name.rfind("protocol", 0) == 0 ||
         name.rfind("sched", 0) == 0;
}

bool is_critic_param(const std::string& name) { return name.rfind("critic", 0) == 0; }

void copy_exec_params(const AgentNets& src, AgentNets& dst) {
  auto& s = const_cast<AgentNets&>(src);
  auto sp = s.named_params(false);
  auto dp = dst.named_params(false);
  if (sp.size() != dp.size()) throw ConfigError("copy_exec_params: parameter sets differ");
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (is_critic_param(sp[i].first)) continue;
    if (sp[i].second->shape != dp[i].second->shape)
      throw ConfigError("copy_exec_params: shape mismatch at " + sp[i].first);
    dp[i].second->data = sp[i].second->data;
  }
}

}  // namespace imac

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "core/replay.hpp"
#include "core/trainer.hpp"

using namespace imac;

namespace {

EnvConfig tiny_env(int n_agents = 2) {
  EnvConfig e;
  e.task = Task::coop_nav;
  e.n_agents = n_agents;
  e.n_landmarks = 2;
  e.episode_len = 25;
  return e;
}

TrainConfig tiny_train(std::uint64_t seed, long episodes) {
  TrainConfig t;
  t.episodes = episodes;
  t.seed = seed;
  t.msg_dim = 2;
  t.query_dim = 4;
  t.hidden = {8, 8};
  t.batch_size = 16;
  t.buffer_capacity = 4096;
  t.steps_per_update = 25;
  t.warmup_steps = 50;
  t.explore_noise = 0.2;
  t.deterministic = true;
  return t;
}

std::string run_csv(const EnvConfig& env, const TrainConfig& tc) {
  Trainer trainer(env, tc);
  std::ostringstream oss;
  trainer.train(&oss, nullptr);
  return oss.str();
}

}  // namespace

TEST_CASE("replay: ring buffer drops the oldest entries after wrap-around") {
  ReplayBuffer::Layout layout;
  layout.obs_dims = {2};
  layout.msg_dim = 0;
  ReplayBuffer buf(8, layout);
  for (int t = 0; t < 11; ++t) {
    const std::size_t slot = buf.begin_push();
    buf.agent(0).reward[slot] = static_cast<double>(t);
  }
  CHECK(buf.size() == 8);
  std::vector<double> seen;
  Rng rng(1);
  for (std::size_t idx : buf.sample_indices(8, rng)) seen.push_back(buf.agent(0).reward[idx]);
  std::sort(seen.begin(), seen.end());
  const std::vector<double> expect{3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(seen == expect);
}

TEST_CASE("replay: batch sampling is uniform without replacement within a batch") {
  ReplayBuffer::Layout layout;
  layout.obs_dims = {1};
  layout.msg_dim = 0;
  ReplayBuffer buf(32, layout);
  for (int t = 0; t < 32; ++t) {
    const std::size_t slot = buf.begin_push();
    buf.agent(0).reward[slot] = t;
  }
  Rng rng(2);
  auto idx = buf.sample_indices(20, rng);
  std::sort(idx.begin(), idx.end());
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());  // no duplicates
  CHECK_THROWS_AS(buf.sample_indices(33, rng), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig t = tiny_train(0, 1);
  t.tau = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(0, 1);
  t.gamma = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(0, 1);
  t.beta = -0.1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK_NOTHROW(tiny_train(0, 1).validate());
}

TEST_CASE("zero-episode run emits a header-only CSV") {
  const std::string csv = run_csv(tiny_env(), tiny_train(5, 0));
  CHECK(csv.rfind("episode,reward_mean,reward_agent0,reward_agent1,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
}

TEST_CASE("training runs are deterministic: same seed, byte-identical CSV") {
  const auto env = tiny_env();
  const auto tc = tiny_train(77, 8);
  CHECK(run_csv(env, tc) == run_csv(env, tc));
}

TEST_CASE("beta=0 run is bit-identical to the comm-baseline code path") {
  const auto env = tiny_env();
  auto imac_cfg = tiny_train(123, 8);
  imac_cfg.algo = Algo::imac;
  imac_cfg.beta = 0.0;
  auto comm_cfg = tiny_train(123, 8);
  comm_cfg.algo = Algo::comm;
  comm_cfg.beta = 0.5;  // ignored: the comm baseline forces beta to zero
  CHECK(run_csv(env, imac_cfg) == run_csv(env, comm_cfg));
}

TEST_CASE("metrics: KL column nonnegative on every row, entropy bound eventually finite") {
  const std::string csv = run_csv(tiny_env(), tiny_train(9, 6));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  double last_entropy = std::nan("");
  while (std::getline(in, line)) {
    ++rows;
    // columns: episode,reward_mean,reward_agent0,reward_agent1,kl,entropy,wall
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) cols.push_back(tok);
    REQUIRE(cols.size() == 7);
    CHECK(std::stod(cols[4]) >= 0.0);
    last_entropy = std::stod(cols[5]);
    CHECK(cols[6] == "0");  // deterministic mode zeroes wall clock
  }
  CHECK(rows == 6);
  CHECK(std::isfinite(last_entropy));
}

TEST_CASE("nocomm: no KL, no entropy column content, trains without a channel") {
  auto tc = tiny_train(11, 4);
  tc.algo = Algo::nocomm;
  const std::string csv = run_csv(tiny_env(), tc);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) cols.push_back(tok);
    CHECK(cols[4] == "0");
    CHECK(cols[5] == "nan");
  }
}

TEST_CASE("critic targets: done kills the bootstrap, gamma=0 reduces y to r") {
  // Zero-weight critics (online and target) make the TD loss mean(r^2) as
  // soon as the bootstrap term vanishes.
  auto zero_critics = [](Trainer& trainer) {
    for (int i = 0; i < trainer.system().n(); ++i) {
      auto& a = trainer.system().agents[i];
      for (auto& l : a.critic.layers) {
        l.w.zero();
        l.b.zero();
      }
      for (auto& l : a.target_critic.layers) {
        l.w.zero();
        l.b.zero();
      }
    }
  };
  auto mean_r2 = [](Trainer& trainer, const std::vector<std::size_t>& idx) {
    double expect = 0.0;
    for (auto s : idx) {
      const double r = trainer.buffer().agent(0).reward[s];
      expect += r * r;
    }
    return expect / static_cast<double>(idx.size());
  };

  // Case 1: done=1 on every sampled transition (environmental termination).
  {
    auto tc = tiny_train(31, 0);
    tc.batch_size = 8;
    Trainer trainer(tiny_env(), tc);
    zero_critics(trainer);
    trainer.fill_buffer_episodes(2);
    std::fill(trainer.buffer().done().begin(), trainer.buffer().done().end(), 1);
    const auto idx = trainer.sample_batch_indices(8);
    CHECK(trainer.critic_loss(0, idx) ==
          doctest::Approx(mean_r2(trainer, idx)).epsilon(1e-12));
  }

  // Case 2: gamma = 0 with non-terminal transitions.
  {
    EnvConfig env = tiny_env();
    auto tc = tiny_train(32, 0);
    tc.batch_size = 8;
    tc.gamma = 0.0;
    Trainer trainer(env, tc);
    zero_critics(trainer);
    trainer.fill_buffer_episodes(2);
    const auto idx = trainer.sample_batch_indices(8);
    CHECK(trainer.critic_loss(0, idx) ==
          doctest::Approx(mean_r2(trainer, idx)).epsilon(1e-12));
  }

  // Time-limit slices are not environmental terminations: the rollout path
  // stores done=0 so values bootstrap through episode boundaries.
  {
    auto tc = tiny_train(33, 0);
    Trainer trainer(tiny_env(), tc);
    trainer.fill_buffer_episodes(2);
    for (std::uint8_t d : trainer.buffer().done()) CHECK(d == 0);
  }
}

TEST_CASE("target fixed point: synced targets stay put under soft update") {
  auto tc = tiny_train(41, 0);
  Trainer trainer(tiny_env(), tc);
  auto& a = trainer.system().agents[0];
  a.sync_targets_hard();
  auto before = a.named_params(true);
  std::vector<std::vector<double>> snapshot;
  for (auto& [name, t] : before) snapshot.push_back(t->data);
  a.soft_update(0.37);
  auto after = a.named_params(true);
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].second->data == snapshot[i]);
}

TEST_CASE("huge beta drives the actor objective down via the KL term in one step") {
  EnvConfig env = tiny_env();
  auto tc = tiny_train(51, 0);
  tc.beta = 1e6;
  tc.batch_size = 8;
  Trainer trainer(env, tc);
  trainer.fill_buffer_episodes(3);
  const auto idx = trainer.sample_batch_indices(8);
  const double before = trainer.actor_loss(idx);

  // One plain gradient-descent step on the analytic gradient.
  auto blocks = trainer.actor_grad_blocks(idx);
  for (auto& b : blocks)
    for (std::size_t i = 0; i < b.param->numel(); ++i)
      b.param->data[i] -= 1e-6 * b.grad.data[i];
  const double after = trainer.actor_loss(idx);
  CHECK(after < before);
}

TEST_CASE("exec rollouts: limiter at or above recorded variance is an identity") {
  EnvConfig env = tiny_env();
  auto tc = tiny_train(61, 12);
  Trainer trainer(env, tc);
  std::ostringstream sink;
  trainer.train(&sink, nullptr);
  REQUIRE(trainer.message_stats().count() >= 2);

  double max_var = 0.0;
  for (double v : trainer.message_stats().variance()) max_var = std::max(max_var, v);

  ExecOptions plain;
  plain.episodes = 4;
  plain.seed = 999;
  ExecOptions limited = plain;
  limited.use_limiter = true;
  limited.target_var = max_var * 1.01;

  const auto a = exec_rollouts(env, trainer.system(), &trainer.message_stats(), plain);
  const auto b = exec_rollouts(env, trainer.system(), &trainer.message_stats(), limited);
  CHECK(a.episode_agent_returns == b.episode_agent_returns);

  // A tight limiter must change something.
  ExecOptions tight = limited;
  tight.target_var = max_var * 1e-4;
  const auto c = exec_rollouts(env, trainer.system(), &trainer.message_stats(), tight);
  CHECK(a.episode_agent_returns != c.episode_agent_returns);
}

TEST_CASE("exec rollouts: limiter without stats is a domain error") {
  EnvConfig env = tiny_env();
  auto tc = tiny_train(71, 0);
  Trainer trainer(env, tc);
  ExecOptions opt;
  opt.use_limiter = true;
  CHECK_THROWS_AS(exec_rollouts(env, trainer.system(), nullptr, opt), DomainError);
}

TEST_CASE("scheduler bottleneck switch: trains and stays finite") {
  EnvConfig env = tiny_env(3);
  auto tc = tiny_train(81, 6);
  tc.sched_kl = true;
  tc.sched_kl_beta = 0.05;
  const std::string csv = run_csv(env, tc);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.find("nan") == std::string::npos);
  CHECK(csv.find("inf") == std::string::npos);
}

TEST_CASE("KL trajectory: the bottleneck keeps message KL lower than beta=0") {
  auto kl_tail = [](double beta) {
    EnvConfig env = tiny_env(2);
    TrainConfig tc = tiny_train(202, 1000);
    tc.batch_size = 64;
    tc.buffer_capacity = 20000;
    tc.warmup_steps = 200;
    tc.steps_per_update = 25;
    tc.lr_critic = 1e-2;
    tc.lr_actor = 1e-3;
    tc.beta = beta;
    Trainer trainer(env, tc);
    std::ostringstream oss;
    trainer.train(&oss, nullptr);
    std::istringstream in(oss.str());
    std::string line;
    std::getline(in, line);
    std::vector<double> kls;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::stringstream ls(line);
      std::string tok;
      while (std::getline(ls, tok, ',')) cols.push_back(tok);
      kls.push_back(std::stod(cols[4]));
    }
    double acc = 0.0;
    for (std::size_t i = kls.size() - 100; i < kls.size(); ++i) acc += kls[i];
    return acc / 100.0;
  };
  const double kl_reg = kl_tail(0.01);
  const double kl_free = kl_tail(0.0);
  CHECK(kl_reg < kl_free);
}

TEST_CASE("skipped updates counter stays at zero for healthy runs") {
  Trainer trainer(tiny_env(), tiny_train(91, 6));
  std::ostringstream sink;
  trainer.train(&sink, nullptr);
  CHECK(trainer.skipped_updates() == 0);
}

TEST_CASE("predator_prey self-play trains both roles with per-role rewards") {
  EnvConfig env;
  env.task = Task::predator_prey;
  env.n_predators = 2;
  env.n_preys = 1;
  env.n_landmarks = 1;
  env.episode_len = 10;
  auto tc = tiny_train(101, 5);
  tc.batch_size = 8;
  tc.warmup_steps = 10;
  tc.steps_per_update = 10;
  Trainer trainer(env, tc);
  std::ostringstream oss;
  trainer.train(&oss, nullptr);
  // Predator and prey rewards differ (different columns), system has 2 groups.
  CHECK(trainer.system().groups.size() == 2);
  CHECK(trainer.system().groups[0].size() == 2);
  CHECK(trainer.system().groups[1].size() == 1);
  const std::string csv = oss.str();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

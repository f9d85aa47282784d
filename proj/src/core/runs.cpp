#include "core/runs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace imac {

const char* kVersion = "imac 0.1.0";

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPiE = 17.079468445347132030599237837301;

std::string fmt_g(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeError("cannot open " + tmp + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw RuntimeError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw RuntimeError("rename failed: " + path);
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

long unix_now() {
  return static_cast<long>(std::chrono::duration_cast<std::chrono::seconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count());
}

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<std::string> artifacts;
  long started_at = 0;
  long finished_at = 0;
  std::string status = "running";

  std::string to_json() const {
    std::ostringstream o;
    o << "{\"command\":\"" << json_escape(command) << "\",";
    o << "\"seed\":" << seed << ",";
    o << "\"code_version\":\"" << json_escape(kVersion) << "\",";
    o << "\"code_hash\":\"" << std::hex << fnv1a64(kVersion) << std::dec << "\",";
    o << "\"status\":\"" << status << "\",";
    o << "\"started_at\":" << started_at << ",";
    o << "\"finished_at\":" << finished_at << ",";
    o << "\"artifacts\":[";
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
      if (i) o << ",";
      o << "\"" << json_escape(artifacts[i]) << "\"";
    }
    o << "],";
    o << "\"config\":" << config_json << "}";
    return o.str();
  }
};

// Run directories are deterministic in (command, config): re-running the same
// inputs overwrites the same files.
std::string make_run_dir(const Config& cfg, const std::string& command) {
  const std::string out_dir = cfg.get_str("io.out_dir", "runs");
  std::string name = cfg.get_str("io.run_name", "");
  if (name.empty()) {
    const std::uint64_t h = fnv1a64(command + "|" + cfg.to_json());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    name = command + "-s" + std::to_string(cfg.get_seed("run.seed", 0)) + "-" +
           std::string(buf).substr(0, 8);
  }
  const fs::path dir = fs::path(out_dir) / name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeError("cannot create run directory: " + dir.string());
  return dir.string();
}

Manifest start_manifest(const std::string& run_dir, const Config& cfg,
                        const std::string& command) {
  Manifest m;
  m.command = command;
  m.seed = cfg.get_seed("run.seed", 0);
  m.config_json = cfg.to_json();
  m.started_at = unix_now();
  write_file_atomic(run_dir + "/manifest.json", m.to_json());
  return m;
}

void finish_manifest(const std::string& run_dir, Manifest& m) {
  m.status = "completed";
  m.finished_at = unix_now();
  write_file_atomic(run_dir + "/manifest.json", m.to_json());
}

}  // namespace

EnvConfig env_config_from(const Config& cfg) {
  EnvConfig e;
  e.task = task_from_string(cfg.get_str("env.task"));
  e.n_agents = static_cast<int>(cfg.get_long("env.n_agents", e.n_agents));
  e.n_predators = static_cast<int>(cfg.get_long("env.n_predators", e.n_predators));
  e.n_preys = static_cast<int>(cfg.get_long("env.n_preys", e.n_preys));
  e.n_landmarks = static_cast<int>(cfg.get_long("env.n_landmarks", e.n_landmarks));
  e.episode_len = static_cast<int>(cfg.get_long("env.episode_len", e.episode_len));
  e.dt = cfg.get_double("env.dt", e.dt);
  e.damping = cfg.get_double("env.damping", e.damping);
  e.max_speed = cfg.get_double("env.max_speed", e.max_speed);
  e.max_speed_predator = cfg.get_double("env.max_speed_predator", e.max_speed_predator);
  e.max_speed_prey = cfg.get_double("env.max_speed_prey", e.max_speed_prey);
  e.agent_radius = cfg.get_double("env.agent_radius", e.agent_radius);
  e.landmark_radius = cfg.get_double("env.landmark_radius", e.landmark_radius);
  e.collision_penalty = cfg.get_double("env.collision_penalty", e.collision_penalty);
  e.catch_bonus = cfg.get_double("env.catch_bonus", e.catch_bonus);
  e.group_dist_coef = cfg.get_double("env.group_dist_coef", e.group_dist_coef);
  const std::string k = cfg.get_str("env.nearest_k", "all");
  e.nearest_k = (k == "all") ? 0 : static_cast<int>(cfg.get_long("env.nearest_k"));
  e.world_bound = cfg.get_double("env.world_bound", e.world_bound);
  e.validate();
  return e;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.algo = algo_from_string(cfg.get_str("train.algo", "imac"));
  t.episodes = cfg.get_long("train.episodes");
  t.gamma = cfg.get_double("train.gamma", t.gamma);
  t.tau = cfg.get_double("train.tau", t.tau);
  t.lr_actor = cfg.get_double("train.lr_actor", t.lr_actor);
  t.lr_critic = cfg.get_double("train.lr_critic", t.lr_critic);
  t.beta = cfg.get_double("train.beta", t.beta);
  t.prior_mean = cfg.get_double("train.prior_mean", t.prior_mean);
  t.prior_var = cfg.get_double("train.prior_var", t.prior_var);
  t.batch_size = static_cast<std::size_t>(cfg.get_long("train.batch_size", 256));
  t.buffer_capacity = static_cast<std::size_t>(cfg.get_long("train.buffer_capacity", 100000));
  t.steps_per_update = cfg.get_long("train.steps_per_update", t.steps_per_update);
  t.warmup_steps = cfg.get_long("train.warmup_steps", t.warmup_steps);
  t.explore_noise = cfg.get_double("train.explore_noise", t.explore_noise);
  t.explore_anneal_frac = cfg.get_double("train.explore_anneal_frac", t.explore_anneal_frac);
  t.seed = cfg.get_seed("run.seed", 0);
  t.msg_dim = static_cast<std::size_t>(cfg.get_long("agents.message_dim", 4));
  t.query_dim = static_cast<std::size_t>(cfg.get_long("agents.query_dim", 16));
  if (cfg.has("agents.hidden")) {
    t.hidden.clear();
    for (long h : cfg.get_long_list("agents.hidden")) {
      if (h < 1) throw ConfigError("agents.hidden: widths must be >= 1");
      t.hidden.push_back(static_cast<std::size_t>(h));
    }
  }
  t.sched_kl = cfg.get_bool("agents.scheduler_kl", false);
  t.sched_kl_beta = cfg.get_double("agents.scheduler_kl_beta", t.sched_kl_beta);
  t.msg_amplitude = cfg.get_double("channel.max_amp", t.msg_amplitude);
  t.grad_clip = cfg.get_double("train.grad_clip", t.grad_clip);
  t.deterministic = cfg.get_bool("run.deterministic", false);
  t.validate();
  return t;
}

bool has_budget_keys(const Config& cfg) {
  return cfg.has("channel.bandwidth_hz") || cfg.has("channel.signal_levels") ||
         cfg.has("channel.msgs_per_sec") || cfg.has("channel.quant_interval");
}

BandwidthBudget budget_from(const Config& cfg, long default_dim) {
  BandwidthBudget b;
  b.bandwidth_hz = cfg.get_double("channel.bandwidth_hz");
  b.signal_levels = cfg.get_long("channel.signal_levels");
  b.msgs_per_sec = cfg.get_double("channel.msgs_per_sec");
  b.quant_interval = cfg.get_double("channel.quant_interval");
  b.message_dim = cfg.get_long("channel.message_dim", default_dim);
  b.validate();
  return b;
}

void save_checkpoint(const std::string& path, const EnvConfig& env_cfg,
                     const TrainConfig& train_cfg, MultiAgentSystem& sys,
                     const RunningStats& stats) {
  BlockFile bf;
  bf.add_scalar("meta/format", 1.0);
  bf.add_scalar("meta/algo", static_cast<double>(static_cast<int>(train_cfg.algo)));
  bf.add_scalar("meta/task", env_cfg.task == Task::coop_nav ? 0.0 : 1.0);
  bf.add_scalar("meta/n_agents", env_cfg.n_agents);
  bf.add_scalar("meta/n_predators", env_cfg.n_predators);
  bf.add_scalar("meta/n_preys", env_cfg.n_preys);
  bf.add_scalar("meta/n_landmarks", env_cfg.n_landmarks);
  bf.add_scalar("meta/episode_len", env_cfg.episode_len);
  bf.add_scalar("meta/dt", env_cfg.dt);
  bf.add_scalar("meta/damping", env_cfg.damping);
  bf.add_scalar("meta/max_speed", env_cfg.max_speed);
  bf.add_scalar("meta/max_speed_predator", env_cfg.max_speed_predator);
  bf.add_scalar("meta/max_speed_prey", env_cfg.max_speed_prey);
  bf.add_scalar("meta/agent_radius", env_cfg.agent_radius);
  bf.add_scalar("meta/landmark_radius", env_cfg.landmark_radius);
  bf.add_scalar("meta/collision_penalty", env_cfg.collision_penalty);
  bf.add_scalar("meta/catch_bonus", env_cfg.catch_bonus);
  bf.add_scalar("meta/group_dist_coef", env_cfg.group_dist_coef);
  bf.add_scalar("meta/nearest_k", env_cfg.nearest_k);
  bf.add_scalar("meta/world_bound", env_cfg.world_bound);
  bf.add_scalar("meta/message_dim", static_cast<double>(train_cfg.msg_dim));
  bf.add_scalar("meta/query_dim", static_cast<double>(train_cfg.query_dim));
  bf.add_scalar("meta/sched_kl", train_cfg.sched_kl ? 1.0 : 0.0);
  bf.add_scalar("meta/msg_amplitude", train_cfg.msg_amplitude);
  bf.add_scalar("meta/prior_mean", train_cfg.prior_mean);
  bf.add_scalar("meta/prior_var", train_cfg.prior_var);
  {
    std::vector<double> hs(train_cfg.hidden.begin(), train_cfg.hidden.end());
    bf.add("meta/hidden", {hs.size()}, hs);
  }

  bf.add_scalar("channel/stats/count", static_cast<double>(stats.count()));
  bf.add("channel/stats/mean", {stats.dim()}, stats.mean());
  bf.add("channel/stats/m2", {stats.dim()}, stats.m2());

  for (int i = 0; i < sys.n(); ++i) {
    const std::string prefix = "agent" + std::to_string(i) + "/";
    for (auto& [name, tensor] : sys.agents[i].named_params(false))
      bf.add_tensor(prefix + name, *tensor);
    for (auto& [name, tensor] : sys.agents[i].named_params(true))
      bf.add_tensor(prefix + "target/" + name, *tensor);
  }
  bf.write(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  BlockFile bf = BlockFile::read(path);
  LoadedCheckpoint out;
  EnvConfig& e = out.env_cfg;
  e.task = bf.get_scalar("meta/task") == 0.0 ? Task::coop_nav : Task::predator_prey;
  e.n_agents = static_cast<int>(bf.get_scalar("meta/n_agents"));
  e.n_predators = static_cast<int>(bf.get_scalar("meta/n_predators"));
  e.n_preys = static_cast<int>(bf.get_scalar("meta/n_preys"));
  e.n_landmarks = static_cast<int>(bf.get_scalar("meta/n_landmarks"));
  e.episode_len = static_cast<int>(bf.get_scalar("meta/episode_len"));
  e.dt = bf.get_scalar("meta/dt");
  e.damping = bf.get_scalar("meta/damping");
  e.max_speed = bf.get_scalar("meta/max_speed");
  e.max_speed_predator = bf.get_scalar("meta/max_speed_predator");
  e.max_speed_prey = bf.get_scalar("meta/max_speed_prey");
  e.agent_radius = bf.get_scalar("meta/agent_radius");
  e.landmark_radius = bf.get_scalar("meta/landmark_radius");
  e.collision_penalty = bf.get_scalar("meta/collision_penalty");
  e.catch_bonus = bf.get_scalar("meta/catch_bonus");
  e.group_dist_coef = bf.get_scalar("meta/group_dist_coef");
  e.nearest_k = static_cast<int>(bf.get_scalar("meta/nearest_k"));
  e.world_bound = bf.get_scalar("meta/world_bound");
  e.validate();

  TrainConfig& t = out.train_cfg;
  t.algo = static_cast<Algo>(static_cast<int>(bf.get_scalar("meta/algo")));
  t.msg_dim = static_cast<std::size_t>(bf.get_scalar("meta/message_dim"));
  t.query_dim = static_cast<std::size_t>(bf.get_scalar("meta/query_dim"));
  t.sched_kl = bf.get_scalar("meta/sched_kl") != 0.0;
  t.msg_amplitude = bf.get_scalar("meta/msg_amplitude");
  t.prior_mean = bf.get_scalar("meta/prior_mean");
  t.prior_var = bf.get_scalar("meta/prior_var");
  t.hidden.clear();
  for (double h : bf.get("meta/hidden").data)
    t.hidden.push_back(static_cast<std::size_t>(h));

  out.sys = std::make_unique<MultiAgentSystem>(out.env_cfg, t);
  for (int i = 0; i < out.sys->n(); ++i) {
    const std::string prefix = "agent" + std::to_string(i) + "/";
    for (auto& [name, tensor] : out.sys->agents[i].named_params(false))
      bf.load_tensor(prefix + name, *tensor);
    for (auto& [name, tensor] : out.sys->agents[i].named_params(true))
      bf.load_tensor(prefix + "target/" + name, *tensor);
  }

  const auto count = static_cast<std::uint64_t>(bf.get_scalar("channel/stats/count"));
  out.stats = RunningStats::restore(count, bf.get("channel/stats/mean").data,
                                    bf.get("channel/stats/m2").data);
  return out;
}

std::string cmd_train(const Config& cfg) {
  cfg.reject_unknown_keys();
  const EnvConfig env_cfg = env_config_from(cfg);
  const TrainConfig train_cfg = train_config_from(cfg);
  const std::string run_dir = make_run_dir(cfg, "train");
  Manifest manifest = start_manifest(run_dir, cfg, "train");
  manifest.artifacts = {"metrics.csv", "checkpoint.bin"};

  Trainer trainer(env_cfg, train_cfg);
  {
    std::ofstream metrics(run_dir + "/metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw RuntimeError("cannot open metrics.csv in " + run_dir);
    std::ofstream traj;
    const bool dump_traj = cfg.get_bool("io.dump_trajectories", false);
    if (dump_traj) {
      traj.open(run_dir + "/trajectories.csv", std::ios::binary | std::ios::trunc);
      if (!traj) throw RuntimeError("cannot open trajectories.csv in " + run_dir);
      manifest.artifacts.push_back("trajectories.csv");
    }
    const long ckpt_every = cfg.get_long("io.checkpoint_every", 0);
    trainer.train(&metrics, dump_traj ? &traj : nullptr, [&](long /*episode*/) {
      save_checkpoint(run_dir + "/checkpoint.bin", env_cfg, train_cfg, trainer.system(),
                      trainer.message_stats());
    }, ckpt_every);
    if (!metrics) throw RuntimeError("metrics.csv write failed in " + run_dir);
  }
  save_checkpoint(run_dir + "/checkpoint.bin", env_cfg, train_cfg, trainer.system(),
                  trainer.message_stats());
  finish_manifest(run_dir, manifest);
  return run_dir;
}

namespace {

struct SweepSetting {
  std::string label;
  double target_var = 0.0;
};

double budget_to_target_var(const BandwidthBudget& b) {
  const double cap_bits = entropy_budget(b);
  const double per_dim = cap_bits / static_cast<double>(b.message_dim);
  return std::pow(2.0, 2.0 * per_dim) / kTwoPiE;
}

struct SweepCell {
  std::size_t setting = 0;
  std::size_t seed_idx = 0;
  double mean = 0.0;
  double stdev = 0.0;
  double entropy_bits = 0.0;
  std::vector<double> per_episode;
};

}  // namespace

std::string cmd_sweep(const Config& cfg) {
  cfg.reject_unknown_keys();
  const std::string ckpt_path = cfg.get_str("sweep.checkpoint");
  const long episodes = cfg.get_long("sweep.episodes");
  if (episodes < 1) throw ConfigError("sweep.episodes must be >= 1");

  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  if (!loaded.sys->comm)
    throw ConfigError("sweep: checkpoint was trained without communication");
  if (loaded.stats.count() < 2)
    throw ConfigError(
        "sweep: checkpoint has no recorded message stats; retrain to produce them");

  std::vector<SweepSetting> settings;
  if (cfg.has("sweep.target_vars")) {
    for (double v : cfg.get_double_list("sweep.target_vars")) {
      if (!(v > 0.0)) throw ConfigError("sweep.target_vars: entries must be > 0");
      settings.push_back({"var=" + fmt_g(v), v});
    }
  }
  if (cfg.has("sweep.budgets")) {
    // Budget tuples "B:K:n:delta" separated by commas.
    for (const std::string& tok : cfg.get_str_list("sweep.budgets")) {
      BandwidthBudget b;
      if (std::sscanf(tok.c_str(), "%lf:%ld:%lf:%lf", &b.bandwidth_hz, &b.signal_levels,
                      &b.msgs_per_sec, &b.quant_interval) != 4)
        throw ConfigError("sweep.budgets: expected B:K:n:delta, got '" + tok + "'");
      b.message_dim = static_cast<long>(loaded.train_cfg.msg_dim);
      b.validate();
      settings.push_back({"budget=" + tok, budget_to_target_var(b)});
    }
  }
  if (settings.empty())
    throw ConfigError("sweep: need sweep.target_vars or sweep.budgets (non-empty)");

  std::vector<std::uint64_t> seeds;
  if (cfg.has("sweep.seeds")) {
    for (long s : cfg.get_long_list("sweep.seeds")) seeds.push_back(static_cast<std::uint64_t>(s));
  } else {
    seeds.push_back(cfg.get_seed("run.seed", 0));
  }
  if (seeds.empty()) throw ConfigError("sweep.seeds: empty list");

  const std::string run_dir = make_run_dir(cfg, "sweep");
  Manifest manifest = start_manifest(run_dir, cfg, "sweep");
  manifest.artifacts = {"sweep.csv", "sweep_episodes.csv"};

  std::vector<SweepCell> cells;
  for (std::size_t s = 0; s < settings.size(); ++s)
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      SweepCell cell;
      cell.setting = s;
      cell.seed_idx = k;
      cells.push_back(std::move(cell));
    }

  const long workers = std::max(1L, cfg.get_long("run.workers", 1));
  auto run_cell = [&](SweepCell& cell) {
    ExecOptions opt;
    opt.episodes = episodes;
    opt.seed = seeds[cell.seed_idx];
    opt.use_limiter = true;
    opt.target_var = settings[cell.setting].target_var;
    RunningStats limited_stats(loaded.train_cfg.msg_dim);
    ExecResult res = exec_rollouts(loaded.env_cfg, *loaded.sys, &loaded.stats, opt,
                                   &limited_stats);
    const int n = loaded.sys->n();
    double sum = 0.0, sum2 = 0.0;
    cell.per_episode.reserve(res.episode_agent_returns.size());
    for (const auto& ep : res.episode_agent_returns) {
      double m = 0.0;
      for (double r : ep) m += r;
      m /= static_cast<double>(n);
      cell.per_episode.push_back(m);
      sum += m;
      sum2 += m * m;
    }
    const double cnt = static_cast<double>(cell.per_episode.size());
    cell.mean = sum / cnt;
    cell.stdev = std::sqrt(std::max(0.0, sum2 / cnt - cell.mean * cell.mean));
    cell.entropy_bits =
        limited_stats.count() >= 2 ? gaussian_entropy_bound(limited_stats) : 0.0;
  };

  if (workers <= 1) {
    for (auto& cell : cells) run_cell(cell);
  } else {
    // Static partition keeps the merge deterministic.
    std::vector<std::thread> pool;
    std::vector<std::string> errors(cells.size());
    for (long t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < cells.size();
             i += static_cast<std::size_t>(workers)) {
          try {
            run_cell(cells[i]);
          } catch (const std::exception& ex) {
            errors[i] = ex.what();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
      if (!err.empty()) throw RuntimeError("sweep cell failed: " + err);
  }

  std::ostringstream summary, episodes_csv;
  summary << "setting,seed,mean_episode_reward,reward_std,entropy_bound_bits\n";
  episodes_csv << "setting,seed,episode,reward\n";
  for (const auto& cell : cells) {
    summary << settings[cell.setting].label << ',' << seeds[cell.seed_idx] << ','
            << fmt_g(cell.mean) << ',' << fmt_g(cell.stdev) << ','
            << fmt_g(cell.entropy_bits) << '\n';
    for (std::size_t e = 0; e < cell.per_episode.size(); ++e)
      episodes_csv << settings[cell.setting].label << ',' << seeds[cell.seed_idx] << ',' << e
                   << ',' << fmt_g(cell.per_episode[e]) << '\n';
  }
  write_file_atomic(run_dir + "/sweep.csv", summary.str());
  write_file_atomic(run_dir + "/sweep_episodes.csv", episodes_csv.str());
  finish_manifest(run_dir, manifest);
  return run_dir;
}

std::string cmd_crossplay(const Config& cfg) {
  cfg.reject_unknown_keys();
  const EnvConfig env_cfg = env_config_from(cfg);
  if (env_cfg.task != Task::predator_prey)
    throw ConfigError("crossplay requires env.task=predator_prey");
  const long episodes = cfg.get_long("crossplay.episodes");
  if (episodes < 1) throw ConfigError("crossplay.episodes must be >= 1");
  const auto ckpts = cfg.get_str_list("crossplay.checkpoints");
  if (ckpts.size() < 2) throw ConfigError("crossplay.checkpoints: need at least 2 paths");

  // Load every checkpoint once and validate dimensions against the env.
  std::vector<LoadedCheckpoint> loaded;
  loaded.reserve(ckpts.size());
  Env probe(env_cfg);
  for (const auto& path : ckpts) {
    LoadedCheckpoint lc = load_checkpoint(path);
    if (lc.env_cfg.task != Task::predator_prey)
      throw ConfigError("crossplay: checkpoint " + path + " is not a predator_prey run");
    if (lc.env_cfg.n_predators != env_cfg.n_predators ||
        lc.env_cfg.n_preys != env_cfg.n_preys)
      throw ConfigError("crossplay: checkpoint " + path + " has mismatched agent counts");
    for (int i = 0; i < lc.sys->n(); ++i)
      if (lc.sys->obs_dims[i] != probe.obs_dim(i))
        throw ConfigError("crossplay: checkpoint " + path +
                          " has mismatched observation dimensions for this env");
    loaded.push_back(std::move(lc));
  }

  const std::string run_dir = make_run_dir(cfg, "crossplay");
  Manifest manifest = start_manifest(run_dir, cfg, "crossplay");
  manifest.artifacts = {"crossplay.csv", "crossplay_matrix.csv"};

  struct Cell {
    double pred = 0.0, prey = 0.0;
  };
  std::vector<Cell> cells(ckpts.size() * ckpts.size());
  const std::uint64_t seed = cfg.get_seed("run.seed", 0);

  auto run_pair = [&](std::size_t a, std::size_t b) {
    // Predator side from checkpoint a, prey side from checkpoint b.
    const TrainConfig& ta = loaded[a].train_cfg;
    const TrainConfig& tb = loaded[b].train_cfg;
    if (loaded[a].sys->comm != loaded[b].sys->comm ||
        (loaded[a].sys->comm && ta.msg_dim != tb.msg_dim) || ta.sched_kl != tb.sched_kl ||
        ta.hidden != tb.hidden || ta.query_dim != tb.query_dim)
      throw ConfigError("crossplay: checkpoints have incompatible communication setups");
    TrainConfig combo = ta;
    combo.episodes = 0;
    MultiAgentSystem sys(env_cfg, combo);
    for (int i = 0; i < env_cfg.n_predators; ++i)
      copy_exec_params(loaded[a].sys->agents[i], sys.agents[i]);
    for (int i = env_cfg.n_predators; i < sys.n(); ++i)
      copy_exec_params(loaded[b].sys->agents[i], sys.agents[i]);
    ExecOptions opt;
    opt.episodes = episodes;
    opt.seed = seed;
    ExecResult res = exec_rollouts(env_cfg, sys, nullptr, opt, nullptr);
    double pred = 0.0, prey = 0.0;
    for (const auto& ep : res.episode_agent_returns) {
      for (int i = 0; i < env_cfg.n_predators; ++i) pred += ep[i];
      for (int i = env_cfg.n_predators; i < sys.n(); ++i) prey += ep[i];
    }
    const double n_ep = static_cast<double>(res.episode_agent_returns.size());
    cells[a * ckpts.size() + b] = {pred / (n_ep * env_cfg.n_predators),
                                   prey / (n_ep * env_cfg.n_preys)};
  };

  const long workers = std::max(1L, cfg.get_long("run.workers", 1));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < ckpts.size(); ++a)
    for (std::size_t b = 0; b < ckpts.size(); ++b) pairs.emplace_back(a, b);
  if (workers <= 1) {
    for (auto [a, b] : pairs) run_pair(a, b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::string> errors(pairs.size());
    for (long t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < pairs.size();
             i += static_cast<std::size_t>(workers)) {
          try {
            run_pair(pairs[i].first, pairs[i].second);
          } catch (const std::exception& ex) {
            errors[i] = ex.what();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
      if (!err.empty()) throw RuntimeError("crossplay pair failed: " + err);
  }

  std::ostringstream long_csv, matrix_csv;
  long_csv << "predator_checkpoint,prey_checkpoint,mean_predator_reward,mean_prey_reward\n";
  for (std::size_t a = 0; a < ckpts.size(); ++a)
    for (std::size_t b = 0; b < ckpts.size(); ++b) {
      const Cell& c = cells[a * ckpts.size() + b];
      long_csv << ckpts[a] << ',' << ckpts[b] << ',' << fmt_g(c.pred) << ',' << fmt_g(c.prey)
               << '\n';
    }
  matrix_csv << "predator\\prey";
  for (const auto& p : ckpts) matrix_csv << ',' << p;
  matrix_csv << '\n';
  for (std::size_t a = 0; a < ckpts.size(); ++a) {
    matrix_csv << ckpts[a];
    for (std::size_t b = 0; b < ckpts.size(); ++b) {
      const Cell& c = cells[a * ckpts.size() + b];
      matrix_csv << ',' << fmt_g(c.pred) << '|' << fmt_g(c.prey);
    }
    matrix_csv << '\n';
  }
  write_file_atomic(run_dir + "/crossplay.csv", long_csv.str());
  write_file_atomic(run_dir + "/crossplay_matrix.csv", matrix_csv.str());
  finish_manifest(run_dir, manifest);
  return run_dir;
}

std::string cmd_entropy_report(const Config& cfg) {
  cfg.reject_unknown_keys();
  const std::string ckpt_path = cfg.get_str("report.checkpoint");
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  if (loaded.stats.count() < 2)
    throw ConfigError(
        "entropy-report: checkpoint has no recorded message stats; retrain to produce them");

  std::ostringstream o;
  const auto var = loaded.stats.variance();
  const double bound = gaussian_entropy_bound(loaded.stats);
  o << "checkpoint: " << ckpt_path << "\n";
  o << "messages recorded: " << loaded.stats.count() << "\n";
  o << "per-dimension variance:";
  for (double v : var) o << ' ' << fmt_g(v);
  o << "\n";
  o << "gaussian entropy bound: " << fmt_g(bound) << " bits\n";
  if (has_budget_keys(cfg)) {
    const BandwidthBudget budget =
        budget_from(cfg, static_cast<long>(loaded.stats.dim()));
    if (static_cast<std::size_t>(budget.message_dim) != loaded.stats.dim())
      throw ConfigError("entropy-report: channel.message_dim does not match checkpoint");
    const BandwidthVerdict v = verify_bandwidth(loaded.stats, budget);
    o << "entropy budget: " << fmt_g(v.cap_bits) << " bits\n";
    o << "verdict: " << (v.ok ? "ok" : "exceeds-budget") << "\n";
  } else {
    o << "entropy budget: (no channel.* keys given)\n";
  }
  return o.str();
}

}  // namespace imac

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/runs.hpp"
#include "core/selftest.hpp"

using namespace imac;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("imac_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str() const { return path.string(); }
};

Config fast_train_config(const std::string& out_dir, std::uint64_t seed, long episodes) {
  Config cfg = Config::from_string(R"(
# fast smoke-training setup
env.task = coop_nav
env.n_agents = 2
env.n_landmarks = 2
env.episode_len = 10
train.algo = imac
train.batch_size = 16
train.buffer_capacity = 2048
train.steps_per_update = 10
train.warmup_steps = 20
agents.hidden = 8,8
agents.message_dim = 2
agents.query_dim = 4
run.deterministic = 1
)");
  cfg.set("io.out_dir", out_dir);
  cfg.set("run.seed", std::to_string(seed));
  cfg.set("train.episodes", std::to_string(episodes));
  return cfg;
}

}  // namespace

TEST_CASE("config: parsing, comments, dotted keys, overrides") {
  Config cfg = Config::from_string(
      "# comment line\n"
      "env.task = coop_nav  # trailing comment\n"
      "train.episodes=5\n"
      "\n"
      "agents.hidden = 16, 32\n");
  CHECK(cfg.get_str("env.task") == "coop_nav");
  CHECK(cfg.get_long("train.episodes") == 5);
  CHECK(cfg.get_long_list("agents.hidden") == std::vector<long>{16, 32});
  cfg.apply_override("train.episodes=9");
  CHECK(cfg.get_long("train.episodes") == 9);
  CHECK_THROWS_AS(cfg.get_str("missing.key"), ConfigError);
  CHECK_THROWS_AS(Config::from_string("no_equals_sign\n"), ConfigError);
}

TEST_CASE("config: unknown keys are named in the error") {
  Config cfg = Config::from_string("env.task=coop_nav\nenv.gravity=9.8\n");
  try {
    cfg.reject_unknown_keys();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("env.gravity") != std::string::npos);
  }
}

TEST_CASE("config: missing required key names the key") {
  TempDir tmp;
  Config cfg = fast_train_config(tmp.str(), 1, 2);
  Config no_task;
  for (const auto& [k, v] : cfg.entries())
    if (k != "env.task") no_task.set(k, v);
  try {
    cmd_train(no_task);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("env.task") != std::string::npos);
  }
}

TEST_CASE("checkpoint block file: round trip preserves shapes and bits") {
  TempDir tmp;
  BlockFile bf;
  bf.add("alpha/w", {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-300, 7.75});
  bf.add_scalar("beta", 42.0);
  const std::string path = tmp.str() + "/test.bin";
  bf.write(path);
  BlockFile rd = BlockFile::read(path);
  CHECK(rd.get("alpha/w").shape == std::vector<std::uint64_t>{2, 3});
  CHECK(rd.get("alpha/w").data == bf.get("alpha/w").data);
  CHECK(rd.get_scalar("beta") == 42.0);
  CHECK_THROWS_AS(rd.get("missing"), RuntimeError);
  CHECK_THROWS_AS(BlockFile::read(tmp.str() + "/nope.bin"), ConfigError);
}

TEST_CASE("cmd_train: writes manifest, metrics, checkpoint; 10 episodes = 10 rows") {
  TempDir tmp;
  const std::string run_dir = cmd_train(fast_train_config(tmp.str(), 3, 10));
  CHECK(fs::exists(fs::path(run_dir) / "manifest.json"));
  CHECK(fs::exists(fs::path(run_dir) / "checkpoint.bin"));
  const std::string csv = slurp(run_dir + "/metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);  // header + 10 rows
  const std::string manifest = slurp(run_dir + "/manifest.json");
  CHECK(manifest.find("\"status\":\"completed\"") != std::string::npos);
  CHECK(manifest.find("\"command\":\"train\"") != std::string::npos);
}

TEST_CASE("cmd_train: same config and seed give byte-identical CSV") {
  TempDir tmp;
  const std::string run1 = cmd_train(fast_train_config(tmp.str(), 4, 6));
  const std::string csv1 = slurp(run1 + "/metrics.csv");
  const std::string run2 = cmd_train(fast_train_config(tmp.str(), 4, 6));
  CHECK(run1 == run2);  // deterministic run directory
  CHECK(csv1 == slurp(run2 + "/metrics.csv"));
}

TEST_CASE("checkpoint: loaded system reproduces the saved system's behavior") {
  TempDir tmp;
  const std::string run_dir = cmd_train(fast_train_config(tmp.str(), 5, 8));
  LoadedCheckpoint lc = load_checkpoint(run_dir + "/checkpoint.bin");
  CHECK(lc.stats.count() >= 2);
  CHECK(lc.env_cfg.n_agents == 2);
  CHECK(lc.train_cfg.msg_dim == 2);

  ExecOptions opt;
  opt.episodes = 3;
  opt.seed = 17;
  const auto r1 = exec_rollouts(lc.env_cfg, *lc.sys, &lc.stats, opt);
  LoadedCheckpoint lc2 = load_checkpoint(run_dir + "/checkpoint.bin");
  const auto r2 = exec_rollouts(lc2.env_cfg, *lc2.sys, &lc2.stats, opt);
  CHECK(r1.episode_agent_returns == r2.episode_agent_returns);
}

TEST_CASE("cmd_sweep: identity setting matches unlimited exec; outputs sorted cells") {
  TempDir tmp;
  const std::string train_dir = cmd_train(fast_train_config(tmp.str(), 6, 8));
  LoadedCheckpoint lc = load_checkpoint(train_dir + "/checkpoint.bin");
  double max_var = 0.0;
  for (double v : lc.stats.variance()) max_var = std::max(max_var, v);

  Config cfg;
  cfg.set("io.out_dir", tmp.str());
  cfg.set("sweep.checkpoint", train_dir + "/checkpoint.bin");
  cfg.set("sweep.episodes", "4");
  cfg.set("sweep.seeds", "11,12");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", max_var * 2.0);
  cfg.set("sweep.target_vars", std::string(buf) + ",0.001");
  const std::string sweep_dir = cmd_sweep(cfg);

  const std::string csv = slurp(sweep_dir + "/sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 2x2 cells
  const std::string eps = slurp(sweep_dir + "/sweep_episodes.csv");
  CHECK(std::count(eps.begin(), eps.end(), '\n') == 17);  // header + 4*4 rows

  // Identity check: the loose setting equals unlimited exec for the same seed.
  ExecOptions plain;
  plain.episodes = 4;
  plain.seed = 11;
  const auto unlimited = exec_rollouts(lc.env_cfg, *lc.sys, &lc.stats, plain);
  double mean_unlimited = 0.0;
  for (const auto& ep : unlimited.episode_agent_returns)
    for (double r : ep) mean_unlimited += r;
  mean_unlimited /= 4.0 * 2.0;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);  // first cell: loose setting, seed 11
  const auto comma1 = line.find(',');
  const auto comma2 = line.find(',', comma1 + 1);
  const auto comma3 = line.find(',', comma2 + 1);
  const double cell_mean = std::stod(line.substr(comma2 + 1, comma3 - comma2 - 1));
  // The CSV rounds to 10 significant digits; compare at that precision.
  CHECK(cell_mean == doctest::Approx(mean_unlimited).epsilon(1e-9));
}

TEST_CASE("cmd_sweep: parallel workers produce the same bytes as one worker") {
  TempDir tmp;
  const std::string train_dir = cmd_train(fast_train_config(tmp.str(), 14, 6));
  Config cfg;
  cfg.set("io.out_dir", tmp.str());
  cfg.set("sweep.checkpoint", train_dir + "/checkpoint.bin");
  cfg.set("sweep.episodes", "3");
  cfg.set("sweep.seeds", "5,6,7");
  cfg.set("sweep.target_vars", "2.0,0.5");
  cfg.set("io.run_name", "sweep_w1");
  const std::string one = cmd_sweep(cfg);
  cfg.set("run.workers", "3");
  cfg.set("io.run_name", "sweep_w3");
  const std::string three = cmd_sweep(cfg);
  CHECK(slurp(one + "/sweep.csv") == slurp(three + "/sweep.csv"));
  CHECK(slurp(one + "/sweep_episodes.csv") == slurp(three + "/sweep_episodes.csv"));
}

TEST_CASE("cmd_sweep: validation errors") {
  TempDir tmp;
  Config cfg;
  cfg.set("io.out_dir", tmp.str());
  cfg.set("sweep.checkpoint", tmp.str() + "/missing.bin");
  cfg.set("sweep.episodes", "2");
  cfg.set("sweep.target_vars", "1.0");
  CHECK_THROWS_AS(cmd_sweep(cfg), ConfigError);

  const std::string train_dir = cmd_train(fast_train_config(tmp.str(), 7, 6));
  Config cfg2;
  cfg2.set("io.out_dir", tmp.str());
  cfg2.set("sweep.checkpoint", train_dir + "/checkpoint.bin");
  cfg2.set("sweep.episodes", "2");
  CHECK_THROWS_AS(cmd_sweep(cfg2), ConfigError);  // no settings given

  Config cfg3;
  cfg3.set("io.out_dir", tmp.str());
  cfg3.set("sweep.checkpoint", train_dir + "/checkpoint.bin");
  cfg3.set("sweep.episodes", "2");
  cfg3.set("sweep.target_vars", "");
  CHECK_THROWS_AS(cmd_sweep(cfg3), ConfigError);  // empty settings list
}

TEST_CASE("cmd_crossplay: 2x2 matrix from two predator-prey checkpoints") {
  TempDir tmp;
  Config base = Config::from_string(R"(
env.task = predator_prey
env.n_predators = 2
env.n_preys = 1
env.n_landmarks = 1
env.episode_len = 8
train.algo = imac
train.episodes = 5
train.batch_size = 8
train.buffer_capacity = 1024
train.steps_per_update = 8
train.warmup_steps = 16
agents.hidden = 8,8
agents.message_dim = 2
agents.query_dim = 4
run.deterministic = 1
)");
  base.set("io.out_dir", tmp.str());
  base.set("run.seed", "21");
  const std::string ckpt_a = cmd_train(base) + "/checkpoint.bin";
  base.set("run.seed", "22");
  const std::string ckpt_b = cmd_train(base) + "/checkpoint.bin";

  Config cfg;
  cfg.set("io.out_dir", tmp.str());
  cfg.set("env.task", "predator_prey");
  cfg.set("env.n_predators", "2");
  cfg.set("env.n_preys", "1");
  cfg.set("env.n_landmarks", "1");
  cfg.set("env.episode_len", "8");
  cfg.set("crossplay.checkpoints", ckpt_a + "," + ckpt_b);
  cfg.set("crossplay.episodes", "3");
  cfg.set("run.seed", "33");
  const std::string dir = cmd_crossplay(cfg);

  const std::string csv = slurp(dir + "/crossplay.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 pairs
  const std::string matrix = slurp(dir + "/crossplay_matrix.csv");
  CHECK(std::count(matrix.begin(), matrix.end(), '\n') == 3);  // header + 2 rows

  // Diagonal reproducibility: identical checkpoints in both roles, same seed.
  std::istringstream in(csv);
  std::string header, row_aa;
  std::getline(in, header);
  std::getline(in, row_aa);
  CHECK(row_aa.find("nan") == std::string::npos);

  // Env dimension mismatch is rejected.
  cfg.set("env.n_preys", "2");
  CHECK_THROWS_AS(cmd_crossplay(cfg), ConfigError);
}

TEST_CASE("cmd_entropy_report: bound, verdict, and the no-budget variant") {
  TempDir tmp;
  const std::string train_dir = cmd_train(fast_train_config(tmp.str(), 8, 8));

  Config cfg;
  cfg.set("report.checkpoint", train_dir + "/checkpoint.bin");
  const std::string no_budget = cmd_entropy_report(cfg);
  CHECK(no_budget.find("gaussian entropy bound:") != std::string::npos);
  CHECK(no_budget.find("verdict") == std::string::npos);

  cfg.set("channel.bandwidth_hz", "1000");
  cfg.set("channel.signal_levels", "4");
  cfg.set("channel.msgs_per_sec", "10");
  cfg.set("channel.quant_interval", "0.5");
  const std::string ok_report = cmd_entropy_report(cfg);
  CHECK(ok_report.find("verdict: ok") != std::string::npos);

  cfg.set("channel.bandwidth_hz", "0.5");
  cfg.set("channel.quant_interval", "0.001");
  const std::string bad_report = cmd_entropy_report(cfg);
  CHECK(bad_report.find("verdict: exceeds-budget") != std::string::npos);
}

TEST_CASE("entropy budget from config keys honors defaults and dimension") {
  Config cfg;
  cfg.set("channel.bandwidth_hz", "1");
  cfg.set("channel.signal_levels", "2");
  cfg.set("channel.msgs_per_sec", "1");
  cfg.set("channel.quant_interval", "1");
  const BandwidthBudget b = budget_from(cfg, 3);
  CHECK(b.message_dim == 3);
  CHECK(entropy_budget(b) == doctest::Approx(2.0));
}

TEST_CASE("trajectory dump: CSV schema with entity rows") {
  TempDir tmp;
  Config cfg = fast_train_config(tmp.str(), 9, 2);
  cfg.set("io.dump_trajectories", "1");
  const std::string run_dir = cmd_train(cfg);
  const std::string traj = slurp(run_dir + "/trajectories.csv");
  CHECK(traj.rfind("episode,step,entity_id,x,y,vx,vy,reward\n", 0) == 0);
  // 2 episodes x 10 steps x (2 agents + 2 landmarks) rows + header
  CHECK(std::count(traj.begin(), traj.end(), '\n') == 1 + 2 * 10 * 4);
}

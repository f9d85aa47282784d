// Exercises the shared library strictly through the public C API.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "imac/imac.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("imac_capi_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("version and error strings are always present") {
  CHECK(imac_version() != nullptr);
  CHECK(imac_last_error() != nullptr);
}

TEST_CASE("channel math through the C surface") {
  double out = 0.0;
  CHECK(imac_max_data_rate(3000, 2, &out) == IMAC_OK);
  CHECK(out == doctest::Approx(6000.0));
  CHECK(imac_max_data_rate(3000, 1, &out) == IMAC_ERR_INVALID);
  CHECK(std::string(imac_last_error()).find("signal levels") != std::string::npos);

  CHECK(imac_entropy_budget(1, 2, 1, 1, 2, &out) == IMAC_OK);
  CHECK(out == doctest::Approx(2.0));

  long level = 0;
  double recon = 0.0;
  CHECK(imac_quantize(0.3, 0.25, 1.0, &level, &recon) == IMAC_OK);
  CHECK(recon == doctest::Approx(0.25));
  CHECK(level == 1);

  const uint64_t counts[4] = {1, 1, 1, 1};
  CHECK(imac_discrete_entropy(counts, 4, &out) == IMAC_OK);
  CHECK(out == doctest::Approx(2.0));

  const double probs[3] = {0.5, 0.25, 0.25};
  CHECK(imac_huffman_avg_len(probs, 3, &out) == IMAC_OK);
  CHECK(out == doctest::Approx(1.5));
  const double bad[2] = {0.9, 0.3};
  CHECK(imac_huffman_avg_len(bad, 2, &out) == IMAC_ERR_INVALID);
}

TEST_CASE("stats handle lifecycle, limiter and bandwidth verdict") {
  imac_stats* s = imac_stats_new(2);
  REQUIRE(s != nullptr);
  CHECK(imac_stats_count(s) == 0);
  double bound = 0.0;
  CHECK(imac_stats_entropy_bound(s, &bound) == IMAC_ERR_INVALID);  // needs 2 updates

  const double m1[2] = {0.0, 1.0};
  const double m2[2] = {2.0, 3.0};
  CHECK(imac_stats_update(s, m1, 2) == IMAC_OK);
  CHECK(imac_stats_update(s, m2, 2) == IMAC_OK);
  CHECK(imac_stats_count(s) == 2);

  double mean[2], var[2];
  CHECK(imac_stats_mean(s, mean, 2) == IMAC_OK);
  CHECK(mean[0] == doctest::Approx(1.0));
  CHECK(imac_stats_variance(s, var, 2) == IMAC_OK);
  CHECK(var[0] == doctest::Approx(1.0));

  CHECK(imac_stats_entropy_bound(s, &bound) == IMAC_OK);
  CHECK(bound == doctest::Approx(2 * 2.0471).epsilon(1e-3));

  double limited[2];
  const double msg[2] = {3.0, 3.0};
  CHECK(imac_stats_limit_message(s, msg, 0.25, limited, 2) == IMAC_OK);
  CHECK(limited[0] == doctest::Approx(1.0 + 2.0 * 0.5));

  int ok = -1;
  double cap = 0.0;
  CHECK(imac_stats_verify_bandwidth(s, 100, 2, 1, 1, &ok, &bound, &cap) == IMAC_OK);
  CHECK(ok == 1);
  CHECK(cap == doctest::Approx(200.0));
  imac_stats_free(s);

  CHECK(imac_stats_new(0) == nullptr);
}

TEST_CASE("train + entropy report through the C API") {
  TempDir tmp;
  const std::string cfg_path = tmp.str() + "/train.cfg";
  {
    std::ofstream f(cfg_path);
    f << "env.task = coop_nav\n"
         "env.n_agents = 2\n"
         "env.n_landmarks = 2\n"
         "env.episode_len = 10\n"
         "train.algo = imac\n"
         "train.episodes = 6\n"
         "train.batch_size = 16\n"
         "train.buffer_capacity = 1024\n"
         "train.steps_per_update = 10\n"
         "train.warmup_steps = 20\n"
         "agents.hidden = 8,8\n"
         "agents.message_dim = 2\n"
         "agents.query_dim = 4\n";
  }
  const std::string out_override = "io.out_dir=" + tmp.str();
  const char* overrides[] = {out_override.c_str(), "run.seed=3", "run.deterministic=1"};

  char run_dir[4096] = {0};
  REQUIRE(imac_cmd_train(cfg_path.c_str(), overrides, 3, run_dir, sizeof(run_dir)) == IMAC_OK);
  CHECK(fs::exists(fs::path(run_dir) / "metrics.csv"));
  CHECK(fs::exists(fs::path(run_dir) / "checkpoint.bin"));

  const std::string report_override =
      "report.checkpoint=" + std::string(run_dir) + "/checkpoint.bin";
  const char* report_overrides[] = {report_override.c_str()};
  char text[65536] = {0};
  REQUIRE(imac_cmd_entropy_report(nullptr, report_overrides, 1, text, sizeof(text)) == IMAC_OK);
  CHECK(std::string(text).find("gaussian entropy bound:") != std::string::npos);

  // Invalid config key surfaces as IMAC_ERR_INVALID with a useful message.
  const char* bad_overrides[] = {out_override.c_str(), "env.gravity=9.8"};
  CHECK(imac_cmd_train(cfg_path.c_str(), bad_overrides, 2, run_dir, sizeof(run_dir)) ==
        IMAC_ERR_INVALID);
  CHECK(std::string(imac_last_error()).find("env.gravity") != std::string::npos);

  CHECK(imac_cmd_train("/nonexistent/file.cfg", nullptr, 0, run_dir, sizeof(run_dir)) ==
        IMAC_ERR_INVALID);
}

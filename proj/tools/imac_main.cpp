// Command-line harness for the imac shared library. Talks to the library
// exclusively through the public C API.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "imac/imac.h"

namespace {

struct CommonArgs {
  std::string config;
  std::string seed;
  std::string out_dir;
  std::string workers;
  bool deterministic = false;
  std::vector<std::string> sets;

  std::vector<std::string> to_overrides() const {
    std::vector<std::string> ov;
    if (!seed.empty()) ov.push_back("run.seed=" + seed);
    if (!out_dir.empty()) ov.push_back("io.out_dir=" + out_dir);
    if (!workers.empty()) ov.push_back("run.workers=" + workers);
    if (deterministic) ov.push_back("run.deterministic=1");
    for (const auto& s : sets) ov.push_back(s);
    return ov;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config, "path to key=value config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "override run.seed");
  cmd->add_option("--out-dir", args.out_dir, "override io.out_dir");
  cmd->add_option("--workers", args.workers, "override run.workers");
  cmd->add_flag("--deterministic", args.deterministic,
                "deterministic outputs (zeroes wall-clock columns)");
  cmd->add_option("--set", args.sets, "extra key=value overrides")->take_all();
}

int run_dir_command(const char* name,
                    imac_status (*fn)(const char*, const char* const*, size_t, char*, size_t),
                    const CommonArgs& args) {
  const auto ov = args.to_overrides();
  std::vector<const char*> ov_ptrs;
  for (const auto& s : ov) ov_ptrs.push_back(s.c_str());
  char run_dir[4096] = {0};
  const imac_status st = fn(args.config.empty() ? nullptr : args.config.c_str(),
                            ov_ptrs.data(), ov_ptrs.size(), run_dir, sizeof(run_dir));
  if (st != IMAC_OK) {
    std::fprintf(stderr, "%s failed: %s\n", name, imac_last_error());
    return static_cast<int>(st);
  }
  std::printf("%s\n", run_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imac: bandwidth-constrained multi-agent communication experiments"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, cross_args, report_args;
  std::string sweep_checkpoint, report_checkpoint, cross_checkpoints;

  auto* train = app.add_subcommand("train", "train agents per the config");
  add_common(train, train_args, true);

  auto* sweep = app.add_subcommand("sweep", "execution-stage bandwidth sweep of a checkpoint");
  add_common(sweep, sweep_args, true);
  sweep->add_option("--checkpoint", sweep_checkpoint, "override sweep.checkpoint");

  auto* cross = app.add_subcommand("crossplay", "cross-play tournament between checkpoints");
  add_common(cross, cross_args, true);
  cross->add_option("--checkpoints", cross_checkpoints,
                    "comma-separated checkpoint list (override crossplay.checkpoints)");

  auto* report = app.add_subcommand("entropy-report",
                                    "entropy bound / bandwidth verdict for a checkpoint");
  add_common(report, report_args, false);
  report->add_option("--checkpoint", report_checkpoint, "override report.checkpoint");

  auto* selftest = app.add_subcommand("selftest", "run every built-in oracle suite");
  std::string selftest_json_path;
  selftest->add_option("--json-out", selftest_json_path, "write the JSON summary to a file");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return run_dir_command("train", imac_cmd_train, train_args);

  if (sweep->parsed()) {
    if (!sweep_checkpoint.empty()) sweep_args.sets.push_back("sweep.checkpoint=" + sweep_checkpoint);
    return run_dir_command("sweep", imac_cmd_sweep, sweep_args);
  }

  if (cross->parsed()) {
    if (!cross_checkpoints.empty())
      cross_args.sets.push_back("crossplay.checkpoints=" + cross_checkpoints);
    return run_dir_command("crossplay", imac_cmd_crossplay, cross_args);
  }

  if (report->parsed()) {
    if (!report_checkpoint.empty())
      report_args.sets.push_back("report.checkpoint=" + report_checkpoint);
    const auto ov = report_args.to_overrides();
    std::vector<const char*> ov_ptrs;
    for (const auto& s : ov) ov_ptrs.push_back(s.c_str());
    std::vector<char> text(1 << 16, 0);
    const imac_status st =
        imac_cmd_entropy_report(report_args.config.empty() ? nullptr : report_args.config.c_str(),
                                ov_ptrs.data(), ov_ptrs.size(), text.data(), text.size());
    if (st != IMAC_OK) {
      std::fprintf(stderr, "entropy-report failed: %s\n", imac_last_error());
      return static_cast<int>(st);
    }
    std::printf("%s", text.data());
    return 0;
  }

  if (selftest->parsed()) {
    int all_pass = 0;
    std::vector<char> json(1 << 16, 0);
    const imac_status st = imac_cmd_selftest(&all_pass, json.data(), json.size());
    if (st != IMAC_OK) {
      std::fprintf(stderr, "selftest failed to run: %s\n", imac_last_error());
      return static_cast<int>(st);
    }
    std::printf("%s\n", json.data());
    if (!selftest_json_path.empty()) {
      FILE* f = std::fopen(selftest_json_path.c_str(), "wb");
      if (!f) {
        std::fprintf(stderr, "cannot write %s\n", selftest_json_path.c_str());
        return 2;
      }
      std::fputs(json.data(), f);
      std::fclose(f);
    }
    return all_pass ? 0 : 2;
  }

  return 1;
}

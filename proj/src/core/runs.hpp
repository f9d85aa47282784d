#ifndef IMAC_CORE_RUNS_HPP
#define IMAC_CORE_RUNS_HPP

#include <memory>
#include <string>

#include "core/channel.hpp"
#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/trainer.hpp"

namespace imac {

extern const char* kVersion;

// Config -> typed configs (validated).
EnvConfig env_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);
// Budget from the channel.* keys; default_dim fills message_dim when absent.
BandwidthBudget budget_from(const Config& cfg, long default_dim);
bool has_budget_keys(const Config& cfg);

// Full system + stats serialization. The checkpoint is self-contained: it
// carries the environment configuration and architecture metadata needed to
// rebuild the agents.
void save_checkpoint(const std::string& path, const EnvConfig& env_cfg,
                     const TrainConfig& train_cfg, MultiAgentSystem& sys,
                     const RunningStats& stats);

struct LoadedCheckpoint {
  EnvConfig env_cfg;
  TrainConfig train_cfg;  // architecture/algo fields only; episodes etc. unset
  std::unique_ptr<MultiAgentSystem> sys;
  RunningStats stats;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Command drivers behind the CLI verbs. Each returns the run directory (or
// report text for the entropy report). They throw imac::Error on failure.
std::string cmd_train(const Config& cfg);
std::string cmd_sweep(const Config& cfg);
std::string cmd_crossplay(const Config& cfg);
std::string cmd_entropy_report(const Config& cfg);

}  // namespace imac

#endif

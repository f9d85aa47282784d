#include "imac/imac.h"

#include <cstring>
#include <span>
#include <string>

#include "core/channel.hpp"
#include "core/config.hpp"
#include "core/error.hpp"
#include "core/runs.hpp"
#include "core/selftest.hpp"

namespace {

thread_local std::string g_last_error = "";

void copy_out(const std::string& s, char* out, size_t cap) {
  if (!out || cap == 0) return;
  const size_t n = std::min(s.size(), cap - 1);
  std::memcpy(out, s.data(), n);
  out[n] = '\0';
}

imac_status set_error(const std::exception& ex) {
  g_last_error = ex.what();
  if (auto* e = dynamic_cast<const imac::Error*>(&ex))
    return e->kind() == imac::ErrorKind::config ? IMAC_ERR_INVALID : IMAC_ERR_RUNTIME;
  return IMAC_ERR_RUNTIME;
}

template <typename Fn>
imac_status guarded(Fn&& fn) {
  try {
    fn();
    return IMAC_OK;
  } catch (const std::exception& ex) {
    return set_error(ex);
  } catch (...) {
    g_last_error = "unknown error";
    return IMAC_ERR_RUNTIME;
  }
}

imac::Config build_config(const char* config_path, const char* const* overrides,
                          size_t n_overrides) {
  imac::Config cfg;
  if (config_path) cfg = imac::Config::from_file(config_path);
  for (size_t i = 0; i < n_overrides; ++i) {
    if (!overrides[i]) throw imac::ConfigError("null override string");
    cfg.apply_override(overrides[i]);
  }
  return cfg;
}

}  // namespace

extern "C" {

const char* imac_version(void) { return imac::kVersion; }

const char* imac_last_error(void) { return g_last_error.c_str(); }

imac_status imac_max_data_rate(double bandwidth_hz, long signal_levels,
                               double* out_bits_per_s) {
  return guarded([&] {
    if (!out_bits_per_s) throw imac::ConfigError("out_bits_per_s is null");
    *out_bits_per_s = imac::max_data_rate(bandwidth_hz, signal_levels);
  });
}

imac_status imac_entropy_budget(double bandwidth_hz, long signal_levels, double msgs_per_sec,
                                double quant_interval, long message_dim, double* out_bits) {
  return guarded([&] {
    if (!out_bits) throw imac::ConfigError("out_bits is null");
    imac::BandwidthBudget b{bandwidth_hz, signal_levels, msgs_per_sec, quant_interval,
                            message_dim};
    *out_bits = imac::entropy_budget(b);
  });
}

imac_status imac_quantize(double x, double delta, double max_amp, long* out_level,
                          double* out_reconstructed) {
  return guarded([&] {
    const auto q = imac::quantize(x, delta, max_amp);
    if (out_level) *out_level = q.level;
    if (out_reconstructed) *out_reconstructed = q.reconstructed;
  });
}

imac_status imac_discrete_entropy(const uint64_t* counts, size_t n_symbols, double* out_bits) {
  return guarded([&] {
    if (!counts || !out_bits) throw imac::ConfigError("null argument");
    *out_bits = imac::discrete_entropy(std::span<const std::uint64_t>(counts, n_symbols));
  });
}

imac_status imac_huffman_avg_len(const double* probs, size_t n_symbols,
                                 double* out_bits_per_symbol) {
  return guarded([&] {
    if (!probs || !out_bits_per_symbol) throw imac::ConfigError("null argument");
    const auto code = imac::huffman_build(std::span<const double>(probs, n_symbols));
    *out_bits_per_symbol = code.avg_len();
  });
}

struct imac_stats {
  imac::RunningStats impl;
};

imac_stats* imac_stats_new(size_t dim) {
  if (dim == 0) {
    g_last_error = "stats dimension must be >= 1";
    return nullptr;
  }
  return new imac_stats{imac::RunningStats(dim)};
}

void imac_stats_free(imac_stats* stats) { delete stats; }

imac_status imac_stats_update(imac_stats* stats, const double* msg, size_t dim) {
  return guarded([&] {
    if (!stats || !msg) throw imac::ConfigError("null argument");
    stats->impl.update(std::span<const double>(msg, dim));
  });
}

uint64_t imac_stats_count(const imac_stats* stats) {
  return stats ? stats->impl.count() : 0;
}

imac_status imac_stats_mean(const imac_stats* stats, double* out, size_t dim) {
  return guarded([&] {
    if (!stats || !out) throw imac::ConfigError("null argument");
    if (dim != stats->impl.dim()) throw imac::ConfigError("stats dimension mismatch");
    const auto& m = stats->impl.mean();
    std::memcpy(out, m.data(), dim * sizeof(double));
  });
}

imac_status imac_stats_variance(const imac_stats* stats, double* out, size_t dim) {
  return guarded([&] {
    if (!stats || !out) throw imac::ConfigError("null argument");
    if (dim != stats->impl.dim()) throw imac::ConfigError("stats dimension mismatch");
    const auto v = stats->impl.variance();
    std::memcpy(out, v.data(), dim * sizeof(double));
  });
}

imac_status imac_stats_entropy_bound(const imac_stats* stats, double* out_bits) {
  return guarded([&] {
    if (!stats || !out_bits) throw imac::ConfigError("null argument");
    *out_bits = imac::gaussian_entropy_bound(stats->impl);
  });
}

imac_status imac_stats_limit_message(const imac_stats* stats, const double* msg,
                                     double target_var, double* out, size_t dim) {
  return guarded([&] {
    if (!stats || !msg || !out) throw imac::ConfigError("null argument");
    const auto limited =
        imac::limit_message(std::span<const double>(msg, dim), stats->impl, target_var);
    std::memcpy(out, limited.data(), limited.size() * sizeof(double));
  });
}

imac_status imac_stats_verify_bandwidth(const imac_stats* stats, double bandwidth_hz,
                                        long signal_levels, double msgs_per_sec,
                                        double quant_interval, int* out_ok,
                                        double* out_bound_bits, double* out_cap_bits) {
  return guarded([&] {
    if (!stats) throw imac::ConfigError("null stats");
    imac::BandwidthBudget b{bandwidth_hz, signal_levels, msgs_per_sec, quant_interval,
                            static_cast<long>(stats->impl.dim())};
    const auto v = imac::verify_bandwidth(stats->impl, b);
    if (out_ok) *out_ok = v.ok ? 1 : 0;
    if (out_bound_bits) *out_bound_bits = v.bound_bits;
    if (out_cap_bits) *out_cap_bits = v.cap_bits;
  });
}

imac_status imac_cmd_train(const char* config_path, const char* const* overrides,
                           size_t n_overrides, char* out_run_dir, size_t out_cap) {
  return guarded([&] {
    const auto cfg = build_config(config_path, overrides, n_overrides);
    copy_out(imac::cmd_train(cfg), out_run_dir, out_cap);
  });
}

imac_status imac_cmd_sweep(const char* config_path, const char* const* overrides,
                           size_t n_overrides, char* out_run_dir, size_t out_cap) {
  return guarded([&] {
    const auto cfg = build_config(config_path, overrides, n_overrides);
    copy_out(imac::cmd_sweep(cfg), out_run_dir, out_cap);
  });
}

imac_status imac_cmd_crossplay(const char* config_path, const char* const* overrides,
                               size_t n_overrides, char* out_run_dir, size_t out_cap) {
  return guarded([&] {
    const auto cfg = build_config(config_path, overrides, n_overrides);
    copy_out(imac::cmd_crossplay(cfg), out_run_dir, out_cap);
  });
}

imac_status imac_cmd_entropy_report(const char* config_path, const char* const* overrides,
                                    size_t n_overrides, char* out_text, size_t out_cap) {
  return guarded([&] {
    const auto cfg = build_config(config_path, overrides, n_overrides);
    copy_out(imac::cmd_entropy_report(cfg), out_text, out_cap);
  });
}

imac_status imac_cmd_selftest(int* out_all_pass, char* out_json, size_t out_cap) {
  return guarded([&] {
    const auto report = imac::run_selftest();
    if (out_all_pass) *out_all_pass = report.all_pass() ? 1 : 0;
    if (out_json) copy_out(report.to_json(), out_json, out_cap);
  });
}

}  // extern "C"

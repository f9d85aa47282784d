/*
 * imac - multi-agent communication simulator, C API.
 *
 * All functions return imac_status unless noted. On failure the thread-local
 * message from imac_last_error() describes the problem. Opaque handles must
 * be released with their matching _free function.
 */
#ifndef IMAC_H
#define IMAC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum imac_status {
  IMAC_OK = 0,
  IMAC_ERR_INVALID = 1, /* bad config, bad argument, domain error */
  IMAC_ERR_RUNTIME = 2  /* I/O or numerical failure at run time */
} imac_status;

const char* imac_version(void);
/* Message for the most recent failure on this thread; never NULL. */
const char* imac_last_error(void);

/* ---- channel mathematics ---- */

/* Nyquist-rate cap 2*B*log2(K) in bits/second. */
imac_status imac_max_data_rate(double bandwidth_hz, long signal_levels, double* out_bits_per_s);

/* Entropy cap 2*B*log2(K)/n + d*log2(delta) in bits. */
imac_status imac_entropy_budget(double bandwidth_hz, long signal_levels, double msgs_per_sec,
                                double quant_interval, long message_dim, double* out_bits);

/* Uniform quantizer over [-max_amp, max_amp]; returns the signed level index
 * and the reconstructed value level*delta. */
imac_status imac_quantize(double x, double delta, double max_amp, long* out_level,
                          double* out_reconstructed);

/* Shannon entropy in bits of a histogram of symbol counts. */
imac_status imac_discrete_entropy(const uint64_t* counts, size_t n_symbols, double* out_bits);

/* Expected codeword length of the optimal (Huffman) prefix code. */
imac_status imac_huffman_avg_len(const double* probs, size_t n_symbols,
                                 double* out_bits_per_symbol);

/* ---- running message statistics ---- */

typedef struct imac_stats imac_stats;

imac_stats* imac_stats_new(size_t dim);
void imac_stats_free(imac_stats* stats);
imac_status imac_stats_update(imac_stats* stats, const double* msg, size_t dim);
uint64_t imac_stats_count(const imac_stats* stats);
imac_status imac_stats_mean(const imac_stats* stats, double* out, size_t dim);
imac_status imac_stats_variance(const imac_stats* stats, double* out, size_t dim);
/* Maximum-entropy bound 0.5*log2((2 pi e)^d prod var_j); needs >= 2 updates. */
imac_status imac_stats_entropy_bound(const imac_stats* stats, double* out_bits);
/* Shrinks msg toward the recorded mean so no dimension exceeds target_var. */
imac_status imac_stats_limit_message(const imac_stats* stats, const double* msg,
                                     double target_var, double* out, size_t dim);
/* ok=1 iff the entropy bound fits under the budget cap. */
imac_status imac_stats_verify_bandwidth(const imac_stats* stats, double bandwidth_hz,
                                        long signal_levels, double msgs_per_sec,
                                        double quant_interval, int* out_ok,
                                        double* out_bound_bits, double* out_cap_bits);

/* ---- experiment commands ----
 *
 * Each takes a config file path plus optional "key=value" override strings
 * (applied in order after the file). Run artifacts land in a run directory
 * whose path is copied into out_run_dir (truncated to out_cap, always
 * NUL-terminated). config_path may be NULL when the overrides carry the whole
 * configuration.
 */

imac_status imac_cmd_train(const char* config_path, const char* const* overrides,
                           size_t n_overrides, char* out_run_dir, size_t out_cap);

imac_status imac_cmd_sweep(const char* config_path, const char* const* overrides,
                           size_t n_overrides, char* out_run_dir, size_t out_cap);

imac_status imac_cmd_crossplay(const char* config_path, const char* const* overrides,
                               size_t n_overrides, char* out_run_dir, size_t out_cap);

/* Writes the printable report into out_text (truncated to out_cap). */
imac_status imac_cmd_entropy_report(const char* config_path, const char* const* overrides,
                                    size_t n_overrides, char* out_text, size_t out_cap);

/* Runs every oracle suite; returns IMAC_OK with *out_all_pass = 0 when suites
 * fail (an error status means the harness itself failed). The JSON summary is
 * copied into out_json when non-NULL. */
imac_status imac_cmd_selftest(int* out_all_pass, char* out_json, size_t out_cap);

#ifdef __cplusplus
}
#endif

#endif /* IMAC_H */

#ifndef IMAC_CORE_CHANNEL_HPP
#define IMAC_CORE_CHANNEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace imac {

// Physical channel parameters and the message-entropy cap they induce.
struct BandwidthBudget {
  double bandwidth_hz = 1.0;   // B
  long signal_levels = 2;      // K
  double msgs_per_sec = 1.0;   // n
  double quant_interval = 1.0; // delta
  long message_dim = 1;        // d

  void validate() const;
};

// Nyquist-rate cap for a noiseless channel: 2 B log2 K, in bits/second.
double max_data_rate(double bandwidth_hz, long signal_levels);

// Entropy cap in bits implied by the budget: 2 B log2(K) / n + d log2(delta).
// May be negative for tiny quantization intervals.
double entropy_budget(const BandwidthBudget& budget);

struct QuantizeResult {
  long level = 0;              // signed grid index, reconstructed = level * delta
  double reconstructed = 0.0;
  long level_count = 0;        // ceil(2*max_amp/delta) + 1
};

// Uniform mid-tread quantizer over [-max_amp, max_amp]; the input is clamped
// into range first.
QuantizeResult quantize(double x, double delta, double max_amp);

// Shannon entropy in bits of a histogram of symbol counts.
double discrete_entropy(std::span<const std::uint64_t> counts);
double discrete_entropy_probs(std::span<const double> probs);

struct HuffmanCode {
  std::vector<double> probs;
  std::vector<std::string> codewords;  // '0'/'1' strings, prefix-free

  double avg_len() const;
  bool kraft_ok() const;  // sum 2^-len <= 1 (+tolerance)
  // Prefix-decodes exactly n_symbols symbol ids from a '0'/'1' stream.
  std::vector<std::size_t> decode(const std::string& bits, std::size_t n_symbols) const;
};

// Optimal prefix code; merge order is deterministic so equal-probability
// sources always yield the same codebook.
HuffmanCode huffman_build(std::span<const double> probs);

// Analog-to-digital -> source coding -> decoding -> digital-to-analog, for
// one message vector. Symbols are quantizer levels shifted to 0-based ids;
// the code must cover quantize(...).level_count symbols.
struct TransmitResult {
  std::vector<long> levels;
  std::string bitstream;
  std::vector<double> reconstructed;
};

TransmitResult transmit_message(std::span<const double> msg, double delta, double max_amp,
                                const HuffmanCode& code);

// 0-based symbol id of a quantizer level under (delta, max_amp).
std::size_t level_to_symbol(long level, double delta, double max_amp);

// Streaming per-dimension mean/variance record of a message stream
// (population form). Single writer, many readers between updates.
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  std::size_t dim() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const;

  void update(std::span<const double> msg);

  // Restores a previously serialized record.
  static RunningStats restore(std::uint64_t count, std::vector<double> mean,
                              std::vector<double> m2);
  const std::vector<double>& m2() const { return m2_; }

 private:
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Variance floor that keeps log terms finite for constant streams.
constexpr double kVarFloor = 1e-12;

// Maximum-entropy cap in bits for any distribution with the recorded
// (diagonal) covariance: 1/2 log2((2 pi e)^d * prod var_j).
double gaussian_entropy_bound(const RunningStats& stats);
double gaussian_entropy_bound(std::span<const double> variances);

// Shrinks m toward the recorded mean so each dimension's deviation matches at
// most target_var; never amplifies.
std::vector<double> limit_message(std::span<const double> m, const RunningStats& stats,
                                  double target_var);

struct BandwidthVerdict {
  bool ok = false;
  double bound_bits = 0.0;
  double cap_bits = 0.0;
};

// ok iff the Gaussian entropy bound fits under the budget cap (inclusive).
BandwidthVerdict verify_bandwidth(const RunningStats& stats, const BandwidthBudget& budget);

}  // namespace imac

#endif

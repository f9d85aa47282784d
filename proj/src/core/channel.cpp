#include "core/channel.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace imac {

namespace {
constexpr double kTwoPiE = 17.079468445347132030599237837301;  // 2*pi*e
}  // namespace

void BandwidthBudget::validate() const {
  if (!(bandwidth_hz > 0.0)) throw DomainError("budget: bandwidth_hz must be > 0");
  if (signal_levels < 2) throw DomainError("budget: signal_levels must be >= 2");
  if (!(msgs_per_sec > 0.0)) throw DomainError("budget: msgs_per_sec must be > 0");
  if (!(quant_interval > 0.0)) throw DomainError("budget: quant_interval must be > 0");
  if (message_dim < 1) throw DomainError("budget: message_dim must be >= 1");
}

double max_data_rate(double bandwidth_hz, long signal_levels) {
  if (!(bandwidth_hz > 0.0)) throw DomainError("max_data_rate: bandwidth must be > 0");
  if (signal_levels < 2) throw DomainError("max_data_rate: need at least 2 signal levels");
  return 2.0 * bandwidth_hz * std::log2(static_cast<double>(signal_levels));
}

double entropy_budget(const BandwidthBudget& budget) {
  budget.validate();
  return max_data_rate(budget.bandwidth_hz, budget.signal_levels) / budget.msgs_per_sec +
         static_cast<double>(budget.message_dim) * std::log2(budget.quant_interval);
}

QuantizeResult quantize(double x, double delta, double max_amp) {
  if (!(delta > 0.0)) throw DomainError("quantize: interval must be > 0");
  if (!(max_amp > 0.0)) throw DomainError("quantize: max amplitude must be > 0");
  QuantizeResult r;
  const double clamped = std::clamp(x, -max_amp, max_amp);
  r.level = static_cast<long>(std::llround(clamped / delta));
  r.reconstructed = static_cast<double>(r.level) * delta;
  r.level_count = static_cast<long>(std::ceil(2.0 * max_amp / delta)) + 1;
  return r;
}

double discrete_entropy(std::span<const std::uint64_t> counts) {
  std::uint64_t total = 0;
  for (std::uint64_t c : counts) total += c;
  if (total == 0) throw DomainError("discrete_entropy: empty histogram");
  double h = 0.0;
  const double dt = static_cast<double>(total);
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / dt;
    h -= p * std::log2(p);
  }
  return h;
}

double discrete_entropy_probs(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw DomainError("discrete_entropy: negative probability");
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

double HuffmanCode::avg_len() const {
  double l = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    l += probs[i] * static_cast<double>(codewords[i].size());
  return l;
}

bool HuffmanCode::kraft_ok() const {
  double s = 0.0;
  for (const auto& c : codewords) s += std::pow(2.0, -static_cast<double>(c.size()));
  return s <= 1.0 + 1e-12;
}

HuffmanCode huffman_build(std::span<const double> probs) {
  if (probs.empty()) throw DomainError("huffman: need at least one symbol");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw DomainError("huffman: negative probability");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw DomainError("huffman: probabilities must sum to 1");

  HuffmanCode code;
  code.probs.assign(probs.begin(), probs.end());
  code.codewords.assign(probs.size(), "");
  if (probs.size() == 1) return code;  // degenerate source: empty codeword

  struct Node {
    double p;
    std::uint64_t order;  // creation order, breaks probability ties
    int left = -1, right = -1;
  };
  std::vector<Node> nodes;
  nodes.reserve(2 * probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    nodes.push_back({probs[i], static_cast<std::uint64_t>(i), -1, -1});

  auto cmp = [&nodes](int a, int b) {
    if (nodes[a].p != nodes[b].p) return nodes[a].p > nodes[b].p;
    return nodes[a].order > nodes[b].order;
  };
  std::priority_queue<int, std::vector<int>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < probs.size(); ++i) heap.push(static_cast<int>(i));
  while (heap.size() > 1) {
    int a = heap.top();
    heap.pop();
    int b = heap.top();
    heap.pop();
    nodes.push_back({nodes[a].p + nodes[b].p, static_cast<std::uint64_t>(nodes.size()), a, b});
    heap.push(static_cast<int>(nodes.size()) - 1);
  }

  // Walk the tree iteratively; leaves are the original symbol indices.
  std::vector<std::pair<int, std::string>> stack{{heap.top(), ""}};
  while (!stack.empty()) {
    auto [idx, prefix] = std::move(stack.back());
    stack.pop_back();
    const Node& n = nodes[idx];
    if (n.left < 0) {
      code.codewords[static_cast<std::size_t>(idx)] = prefix;
      continue;
    }
    stack.push_back({n.left, prefix + "0"});
    stack.push_back({n.right, prefix + "1"});
  }
  return code;
}

std::vector<std::size_t> HuffmanCode::decode(const std::string& bits,
                                             std::size_t n_symbols) const {
  // Rebuild the tree from the codewords; small alphabets keep this cheap.
  struct Node {
    int child[2] = {-1, -1};
    int symbol = -1;
  };
  std::vector<Node> tree(1);
  for (std::size_t s = 0; s < codewords.size(); ++s) {
    int cur = 0;
    for (char b : codewords[s]) {
      const int dir = b == '1' ? 1 : 0;
      if (tree[cur].child[dir] < 0) {
        tree[cur].child[dir] = static_cast<int>(tree.size());
        tree.emplace_back();
      }
      cur = tree[cur].child[dir];
    }
    tree[cur].symbol = static_cast<int>(s);
  }
  std::vector<std::size_t> out;
  out.reserve(n_symbols);
  std::size_t pos = 0;
  while (out.size() < n_symbols) {
    int cur = 0;
    // Degenerate single-symbol alphabet: the empty codeword decodes in place.
    while (tree[cur].symbol < 0) {
      if (pos >= bits.size()) throw DomainError("huffman decode: truncated bitstream");
      cur = tree[cur].child[bits[pos++] == '1' ? 1 : 0];
      if (cur < 0) throw DomainError("huffman decode: invalid bitstream");
    }
    out.push_back(static_cast<std::size_t>(tree[cur].symbol));
  }
  return out;
}

std::size_t level_to_symbol(long level, double delta, double max_amp) {
  const long count = static_cast<long>(std::ceil(2.0 * max_amp / delta)) + 1;
  const long shifted = level + count / 2;
  if (shifted < 0 || shifted >= count)
    throw DomainError("level_to_symbol: level outside the quantizer range");
  return static_cast<std::size_t>(shifted);
}

TransmitResult transmit_message(std::span<const double> msg, double delta, double max_amp,
                                const HuffmanCode& code) {
  TransmitResult r;
  r.levels.reserve(msg.size());
  for (double x : msg) {
    const auto q = quantize(x, delta, max_amp);
    if (code.codewords.size() != static_cast<std::size_t>(q.level_count))
      throw DomainError("transmit: code alphabet does not match the quantizer");
    r.levels.push_back(q.level);
    r.bitstream += code.codewords[level_to_symbol(q.level, delta, max_amp)];
  }
  const auto symbols = code.decode(r.bitstream, msg.size());
  const long count = static_cast<long>(std::ceil(2.0 * max_amp / delta)) + 1;
  r.reconstructed.reserve(msg.size());
  for (std::size_t symbol : symbols)
    r.reconstructed.push_back(static_cast<double>(static_cast<long>(symbol) - count / 2) *
                              delta);
  return r;
}

std::vector<double> RunningStats::variance() const {
  std::vector<double> v(mean_.size(), 0.0);
  if (count_ > 1) {
    for (std::size_t j = 0; j < v.size(); ++j)
      v[j] = std::max(0.0, m2_[j] / static_cast<double>(count_));
  }
  return v;
}

void RunningStats::update(std::span<const double> msg) {
  if (msg.size() != mean_.size())
    throw ConfigError("RunningStats: message dimension mismatch");
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t j = 0; j < mean_.size(); ++j) {
    const double delta = msg[j] - mean_[j];
    mean_[j] += delta * inv;
    m2_[j] += delta * (msg[j] - mean_[j]);
  }
}

RunningStats RunningStats::restore(std::uint64_t count, std::vector<double> mean,
                                   std::vector<double> m2) {
  if (mean.size() != m2.size()) throw ConfigError("RunningStats::restore: size mismatch");
  RunningStats s(mean.size());
  s.count_ = count;
  s.mean_ = std::move(mean);
  s.m2_ = std::move(m2);
  return s;
}

double gaussian_entropy_bound(std::span<const double> variances) {
  if (variances.empty()) throw DomainError("gaussian_entropy_bound: empty variance vector");
  double bits = 0.0;
  for (double v : variances)
    bits += 0.5 * std::log2(kTwoPiE * std::max(v, kVarFloor));
  return bits;
}

double gaussian_entropy_bound(const RunningStats& stats) {
  if (stats.count() < 2)
    throw DomainError("gaussian_entropy_bound: need at least 2 recorded messages");
  const auto v = stats.variance();
  return gaussian_entropy_bound(std::span<const double>(v.data(), v.size()));
}

std::vector<double> limit_message(std::span<const double> m, const RunningStats& stats,
                                  double target_var) {
  if (stats.count() < 2) throw DomainError("limit_message: stats not initialized");
  if (!(target_var > 0.0)) throw DomainError("limit_message: target variance must be > 0");
  if (m.size() != stats.dim()) throw ConfigError("limit_message: dimension mismatch");
  const auto var = stats.variance();
  const auto& mean = stats.mean();
  std::vector<double> out(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    const double scale = std::min(1.0, std::sqrt(target_var / std::max(var[j], kVarFloor)));
    out[j] = mean[j] + (m[j] - mean[j]) * scale;
  }
  return out;
}

BandwidthVerdict verify_bandwidth(const RunningStats& stats, const BandwidthBudget& budget) {
  BandwidthVerdict v;
  v.bound_bits = gaussian_entropy_bound(stats);
  v.cap_bits = entropy_budget(budget);
  v.ok = v.bound_bits <= v.cap_bits;
  return v;
}

}  // namespace imac

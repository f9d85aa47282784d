#ifndef IMAC_CORE_REPLAY_HPP
#define IMAC_CORE_REPLAY_HPP

#include <cstdint>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace imac {

// Ring buffer of transitions in struct-of-arrays form. Observation widths may
// differ per agent (predator/prey roles), message fields are msg_dim wide.
class ReplayBuffer {
 public:
  struct Layout {
    std::vector<std::size_t> obs_dims;  // per agent
    std::size_t msg_dim = 0;            // 0 disables all message fields
    std::size_t action_dim = 2;
    bool sched_noise = false;
  };

  ReplayBuffer(std::size_t capacity, Layout layout)
      : capacity_(capacity), layout_(std::move(layout)) {
    if (capacity_ == 0) throw ConfigError("replay: capacity must be > 0");
    const std::size_t n = layout_.obs_dims.size();
    agents_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      AgentCols& a = agents_[i];
      const std::size_t od = layout_.obs_dims[i];
      const std::size_t d = layout_.msg_dim;
      a.obs.assign(capacity_ * od, 0.0);
      a.obs_next.assign(capacity_ * od, 0.0);
      a.action.assign(capacity_ * layout_.action_dim, 0.0);
      a.reward.assign(capacity_, 0.0);
      if (d > 0) {
        a.c_prev.assign(capacity_ * d, 0.0);
        a.c.assign(capacity_ * d, 0.0);
        a.c_next.assign(capacity_ * d, 0.0);
        a.m_mean.assign(capacity_ * d, 0.0);
        a.m_log_var.assign(capacity_ * d, 0.0);
        a.noise.assign(capacity_ * d, 0.0);
        if (layout_.sched_noise) a.sched_noise.assign(capacity_ * d, 0.0);
      }
    }
    done_.assign(capacity_, 0);
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  const Layout& layout() const { return layout_; }

  // Returns the slot index the next push will fill.
  std::size_t begin_push() {
    const std::size_t slot = cursor_;
    cursor_ = (cursor_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
    return slot;
  }

  struct AgentCols {
    std::vector<double> obs, obs_next, action, reward;
    std::vector<double> c_prev, c, c_next, m_mean, m_log_var, noise, sched_noise;
  };

  AgentCols& agent(std::size_t i) { return agents_[i]; }
  const AgentCols& agent(std::size_t i) const { return agents_[i]; }
  std::vector<std::uint8_t>& done() { return done_; }
  const std::vector<std::uint8_t>& done() const { return done_; }

  // Uniform sample without replacement within the batch.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    if (batch > size_) throw ConfigError("replay: batch larger than buffer");
    // Partial Fisher-Yates over a scratch index map.
    std::vector<std::size_t> idx(size_);
    for (std::size_t i = 0; i < size_; ++i) idx[i] = i;
    std::vector<std::size_t> out(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(size_ - i));
      std::swap(idx[i], idx[j]);
      out[i] = idx[i];
    }
    return out;
  }

  // Gathers rows of a field into a [batch, width] tensor.
  static void gather(const std::vector<double>& col, std::size_t width,
                     const std::vector<std::size_t>& indices, Tensor& out) {
    out.resize(indices.size(), width);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const double* src = col.data() + indices[r] * width;
      double* dst = out.row(r);
      for (std::size_t u = 0; u < width; ++u) dst[u] = src[u];
    }
  }

 private:
  std::size_t capacity_ = 0;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  Layout layout_;
  std::vector<AgentCols> agents_;
  std::vector<std::uint8_t> done_;
};

}  // namespace imac

#endif

#ifndef IMAC_CORE_NET_HPP
#define IMAC_CORE_NET_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace imac {

enum class Act { linear, relu, tanh };

Act act_from_string(const std::string& s);
const char* act_name(Act a);

struct Layer {
  Tensor w;  // [out, in]
  Tensor b;  // [1, out]
  Act act = Act::linear;
};

struct LayerGrads {
  Tensor dw;
  Tensor db;
};

// Per-layer forward activations kept for the backward pass. Buffers are
// reused across calls.
struct Trace {
  Tensor input;
  std::vector<Tensor> pre;    // z = x W^T + b
  std::vector<Tensor> post;   // act(z)
  std::vector<Tensor> dz;     // scratch for backward
  std::vector<Tensor> dpost;  // scratch: grad w.r.t. each layer output
};

// Plain fully connected stack with hand-derived backprop.
class DenseNet {
 public:
  DenseNet() = default;
  // dims = {in, h1, ..., out}; hidden layers use hidden_act, last layer out_act.
  DenseNet(const std::vector<std::size_t>& dims, Act hidden_act, Act out_act);

  std::size_t in_dim() const;
  std::size_t out_dim() const;

  void init(Rng& rng, double out_layer_scale = 1.0);

  // Pure forward; y is resized to [batch, out].
  void forward(const Tensor& x, Tensor& y) const;
  // Forward keeping activations for backward.
  const Tensor& forward(const Tensor& x, Trace& trace) const;
  // Accumulates parameter grads into g (skipped when null); dx (optional)
  // receives the input gradient. upstream is d(loss)/d(output), [batch, out].
  void backward(const Trace& trace, const Tensor& upstream, std::vector<LayerGrads>* g,
                Tensor* dx) const;

  std::vector<LayerGrads> make_grads() const;
  static void zero_grads(std::vector<LayerGrads>& g);

  std::vector<Layer> layers;
};

// Gaussian output head: shared trunk, then linear mean and log-variance
// heads. The log-variance is hard-clamped to [-10, 4]. When mean_bound > 0
// the mean is squashed to (-mean_bound, mean_bound) via b*tanh(z/b), which
// keeps messages inside the channel's amplitude range while staying
// identity-like near the origin.
class GaussianHead {
 public:
  static constexpr double kLogVarMin = -10.0;
  static constexpr double kLogVarMax = 4.0;

  GaussianHead() = default;
  GaussianHead(const std::vector<std::size_t>& trunk_dims, std::size_t out_dim, Act hidden_act);

  std::size_t in_dim() const { return trunk.in_dim(); }
  std::size_t out_dim() const { return mean.w.rows(); }

  void init(Rng& rng, double head_scale);

  struct TraceG {
    Trace trunk;
    Tensor mean;        // [batch, d]
    Tensor log_var;     // [batch, d], clamped
    Tensor clamp_mask;  // 1 where not clamped
    Tensor d_trunk_out; // scratch
  };

  void forward(const Tensor& x, Tensor& mean_out, Tensor& log_var_out) const;
  void forward(const Tensor& x, TraceG& t) const;

  struct GradsG {
    std::vector<LayerGrads> trunk;
    LayerGrads mean;
    LayerGrads log_var;
  };
  GradsG make_grads() const;
  void zero_grads(GradsG& g) const;

  // d_mean/d_log_var are upstream gradients on the two heads.
  void backward(const TraceG& t, const Tensor& d_mean, const Tensor& d_log_var, GradsG& g,
                Tensor* dx) const;

  DenseNet trunk;
  Layer mean;
  Layer log_var;
  double mean_bound = 0.0;  // 0 disables the amplitude squash
};

// m = mean + exp(0.5 * log_var) .* noise, elementwise. Differentiable in both
// mean and log_var; the noise is always caller-supplied.
Tensor sample_reparam(const Tensor& mean, const Tensor& log_var, const Tensor& noise);

// Adam over a fixed list of parameter tensors with bias correction. One step
// counter is shared by all bound blocks.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void bind(Tensor* param);
  // Applies one update over all bound blocks; grads must be passed in the
  // bind order. Returns false (and leaves every parameter untouched) when any
  // gradient entry is non-finite.
  bool step(std::span<const Tensor* const> grads);
  bool step(const std::vector<const Tensor*>& grads) {
    return step(std::span<const Tensor* const>(grads.data(), grads.size()));
  }

  long step_count() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
};

// Central finite differences of f over every coordinate in params, compared
// against the supplied analytic gradient. Returns the worst relative error,
// |fd - an| / max(|fd|, |an|, 1e-3).
double grad_check(const std::function<double()>& f, std::span<double> params,
                  std::span<const double> analytic, double eps = 1e-5);

}  // namespace imac

#endif

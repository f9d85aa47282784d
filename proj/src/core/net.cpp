#include "core/net.hpp"

#include <cmath>

namespace imac {

Act act_from_string(const std::string& s) {
  if (s == "linear") return Act::linear;
  if (s == "relu") return Act::relu;
  if (s == "tanh") return Act::tanh;
  throw ConfigError("unknown activation: " + s);
}

const char* act_name(Act a) {
  switch (a) {
    case Act::linear: return "linear";
    case Act::relu: return "relu";
    case Act::tanh: return "tanh";
  }
  return "?";
}

namespace {

void apply_act(Act act, Tensor& t) {
  switch (act) {
    case Act::linear:
      break;
    case Act::relu:
      for (double& v : t.data) v = v > 0.0 ? v : 0.0;
      break;
    case Act::tanh:
      for (double& v : t.data) v = std::tanh(v);
      break;
  }
}

// dz = upstream .* act'(z), using the post-activation values.
void act_backward(Act act, const Tensor& pre, const Tensor& post, const Tensor& upstream,
                  Tensor& dz) {
  dz.resize(upstream.rows(), upstream.cols());
  switch (act) {
    case Act::linear:
      dz.data = upstream.data;
      break;
    case Act::relu:
      for (std::size_t i = 0; i < dz.numel(); ++i)
        dz.data[i] = pre.data[i] > 0.0 ? upstream.data[i] : 0.0;
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < dz.numel(); ++i) {
        double y = post.data[i];
        dz.data[i] = upstream.data[i] * (1.0 - y * y);
      }
      break;
  }
}

void linear_forward(const Layer& l, const Tensor& x, Tensor& z) {
  gemm_nt(x, l.w, z);  // [B,in] x [out,in]^T
  const std::size_t out = l.w.rows();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double* zr = z.row(r);
    const double* b = l.b.data.data();
    for (std::size_t j = 0; j < out; ++j) zr[j] += b[j];
  }
}

// Accumulates dW += dz^T x, db += column sums of dz; dx = dz W when wanted.
void linear_backward(const Layer& l, const Tensor& x, const Tensor& dz, LayerGrads* g,
                     Tensor* dx) {
  if (g) {
    gemm_tn(dz, x, g->dw, /*acc=*/true);
    const std::size_t out = l.w.rows();
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      const double* row = dz.row(r);
      for (std::size_t j = 0; j < out; ++j) g->db.data[j] += row[j];
    }
  }
  if (dx) gemm(dz, l.w, *dx);
}

void init_layer(Rng& rng, Layer& l, double scale) {
  const double fan_in = static_cast<double>(l.w.cols());
  const double fan_out = static_cast<double>(l.w.rows());
  const double s = scale * std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : l.w.data) v = rng.uniform(-s, s);
  l.b.zero();
}

}  // namespace

DenseNet::DenseNet(const std::vector<std::size_t>& dims, Act hidden_act, Act out_act) {
  if (dims.size() < 2) throw ConfigError("DenseNet needs at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.w.resize(dims[i + 1], dims[i]);
    l.b.resize(1, dims[i + 1]);
    l.act = (i + 2 == dims.size()) ? out_act : hidden_act;
    layers.push_back(std::move(l));
  }
}

std::size_t DenseNet::in_dim() const { return layers.front().w.cols(); }
std::size_t DenseNet::out_dim() const { return layers.back().w.rows(); }

void DenseNet::init(Rng& rng, double out_layer_scale) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    init_layer(rng, layers[i], i + 1 == layers.size() ? out_layer_scale : 1.0);
}

void DenseNet::forward(const Tensor& x, Tensor& y) const {
  if (x.cols() != in_dim()) throw ConfigError("DenseNet forward: input dimension mismatch");
  Tensor cur = x;
  for (const Layer& l : layers) {
    linear_forward(l, cur, y);
    apply_act(l.act, y);
    cur = y;
  }
}

const Tensor& DenseNet::forward(const Tensor& x, Trace& trace) const {
  if (x.cols() != in_dim()) throw ConfigError("DenseNet forward: input dimension mismatch");
  trace.input = x;
  trace.pre.resize(layers.size());
  trace.post.resize(layers.size());
  trace.dz.resize(layers.size());
  const Tensor* cur = &trace.input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    linear_forward(layers[i], *cur, trace.pre[i]);
    trace.post[i] = trace.pre[i];
    apply_act(layers[i].act, trace.post[i]);
    cur = &trace.post[i];
  }
  return trace.post.back();
}

void DenseNet::backward(const Trace& trace, const Tensor& upstream, std::vector<LayerGrads>* g,
                        Tensor* dx) const {
  if (g && g->size() != layers.size()) throw ConfigError("DenseNet backward: grads mismatch");
  if (upstream.rows() != trace.post.back().rows() || upstream.cols() != out_dim())
    throw ConfigError("DenseNet backward: upstream shape mismatch");
  auto& scratch = const_cast<Trace&>(trace);
  scratch.dpost.resize(layers.size());
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Tensor& up = (i + 1 == layers.size()) ? upstream : trace.dpost[i];
    Tensor& dz = scratch.dz[i];
    act_backward(layers[i].act, trace.pre[i], trace.post[i], up, dz);
    const Tensor& in = i == 0 ? trace.input : trace.post[i - 1];
    linear_backward(layers[i], in, dz, g ? &(*g)[i] : nullptr, i == 0 ? dx : &scratch.dpost[i - 1]);
  }
}

std::vector<LayerGrads> DenseNet::make_grads() const {
  std::vector<LayerGrads> g(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g[i].dw.resize(layers[i].w.rows(), layers[i].w.cols());
    g[i].db.resize(1, layers[i].b.cols());
  }
  return g;
}

void DenseNet::zero_grads(std::vector<LayerGrads>& g) {
  for (auto& lg : g) {
    lg.dw.zero();
    lg.db.zero();
  }
}

GaussianHead::GaussianHead(const std::vector<std::size_t>& trunk_dims, std::size_t d,
                           Act hidden_act)
    : trunk(trunk_dims, hidden_act, hidden_act) {
  mean.w.resize(d, trunk.out_dim());
  mean.b.resize(1, d);
  mean.act = Act::linear;
  log_var.w.resize(d, trunk.out_dim());
  log_var.b.resize(1, d);
  log_var.act = Act::linear;
}

void GaussianHead::init(Rng& rng, double head_scale) {
  trunk.init(rng);
  init_layer(rng, mean, head_scale);
  init_layer(rng, log_var, head_scale);
  // Start with modest output variance (about 0.37); the regularizer, when
  // active, pulls it toward the prior from below.
  for (double& v : log_var.b.data) v = -1.0;
}

void GaussianHead::forward(const Tensor& x, Tensor& mean_out, Tensor& log_var_out) const {
  Tensor h;
  trunk.forward(x, h);
  linear_forward(mean, h, mean_out);
  if (mean_bound > 0.0)
    for (double& v : mean_out.data) v = mean_bound * std::tanh(v / mean_bound);
  linear_forward(log_var, h, log_var_out);
  for (double& v : log_var_out.data) {
    v = v < kLogVarMin ? kLogVarMin : (v > kLogVarMax ? kLogVarMax : v);
  }
}

void GaussianHead::forward(const Tensor& x, TraceG& t) const {
  const Tensor& h = trunk.forward(x, t.trunk);
  linear_forward(mean, h, t.mean);
  if (mean_bound > 0.0)
    for (double& v : t.mean.data) v = mean_bound * std::tanh(v / mean_bound);
  linear_forward(log_var, h, t.log_var);
  t.clamp_mask.resize(t.log_var.rows(), t.log_var.cols());
  for (std::size_t i = 0; i < t.log_var.numel(); ++i) {
    double v = t.log_var.data[i];
    bool in_range = v > kLogVarMin && v < kLogVarMax;
    t.clamp_mask.data[i] = in_range ? 1.0 : 0.0;
    t.log_var.data[i] = v < kLogVarMin ? kLogVarMin : (v > kLogVarMax ? kLogVarMax : v);
  }
}

GaussianHead::GradsG GaussianHead::make_grads() const {
  GradsG g;
  g.trunk = trunk.make_grads();
  g.mean.dw.resize(mean.w.rows(), mean.w.cols());
  g.mean.db.resize(1, mean.b.cols());
  g.log_var.dw.resize(log_var.w.rows(), log_var.w.cols());
  g.log_var.db.resize(1, log_var.b.cols());
  return g;
}

void GaussianHead::zero_grads(GradsG& g) const {
  DenseNet::zero_grads(g.trunk);
  g.mean.dw.zero();
  g.mean.db.zero();
  g.log_var.dw.zero();
  g.log_var.db.zero();
}

void GaussianHead::backward(const TraceG& t, const Tensor& d_mean, const Tensor& d_log_var,
                            GradsG& g, Tensor* dx) const {
  auto& scratch = const_cast<TraceG&>(t);
  Tensor d_mu = d_mean;
  if (mean_bound > 0.0) {
    // d/dz of b*tanh(z/b) is 1 - (mu/b)^2
    for (std::size_t i = 0; i < d_mu.numel(); ++i) {
      const double u = t.mean.data[i] / mean_bound;
      d_mu.data[i] *= 1.0 - u * u;
    }
  }
  // Clamped coordinates pass no gradient.
  Tensor d_lv = d_log_var;
  for (std::size_t i = 0; i < d_lv.numel(); ++i) d_lv.data[i] *= t.clamp_mask.data[i];
  const Tensor& h = t.trunk.post.back();
  Tensor d_h2;
  linear_backward(mean, h, d_mu, &g.mean, &scratch.d_trunk_out);
  linear_backward(log_var, h, d_lv, &g.log_var, &d_h2);
  for (std::size_t i = 0; i < scratch.d_trunk_out.numel(); ++i)
    scratch.d_trunk_out.data[i] += d_h2.data[i];
  trunk.backward(t.trunk, scratch.d_trunk_out, &g.trunk, dx);
}

Tensor sample_reparam(const Tensor& mean, const Tensor& log_var, const Tensor& noise) {
  check_same_shape(mean, log_var, "sample_reparam");
  check_same_shape(mean, noise, "sample_reparam");
  Tensor out = mean;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] += std::exp(0.5 * log_var.data[i]) * noise.data[i];
  return out;
}

void Adam::bind(Tensor* param) {
  params_.push_back(param);
  m_.emplace_back(param->rows(), param->cols());
  v_.emplace_back(param->rows(), param->cols());
}

bool Adam::step(std::span<const Tensor* const> grads) {
  if (grads.size() != params_.size()) throw ConfigError("Adam: grad list mismatch");
  for (std::size_t b = 0; b < grads.size(); ++b) {
    if (grads[b]->numel() != params_[b]->numel())
      throw ConfigError("Adam: grad shape mismatch");
    if (!grads[b]->finite()) return false;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < grads.size(); ++b) {
    double* p = params_[b]->data.data();
    double* m = m_[b].data.data();
    double* v = v_[b].data.data();
    const double* g = grads[b]->data.data();
    const std::size_t n = params_[b]->numel();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  return true;
}

double grad_check(const std::function<double()>& f, std::span<double> params,
                  std::span<const double> analytic, double eps) {
  if (params.size() != analytic.size()) throw ConfigError("grad_check: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double fp = f();
    params[i] = saved - eps;
    const double fm = f();
    params[i] = saved;
    const double fd = (fp - fm) / (2.0 * eps);
    const double an = analytic[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

}  // namespace imac

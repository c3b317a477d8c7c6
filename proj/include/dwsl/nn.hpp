#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dwsl/math.hpp"
#include "dwsl/rng.hpp"

namespace dwsl {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Fully connected network, ReLU hidden layers, linear output, 64-bit floats
// throughout. Weights are row major (output x input).
struct Mlp {
  std::vector<int> sizes;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }

  // Init uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded.
  static Mlp init(const std::vector<int>& layer_sizes, Rng& rng) {
    if (layer_sizes.size() < 2) throw std::invalid_argument("need at least two layer sizes");
    Mlp net;
    net.sizes = layer_sizes;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      const int in = layer_sizes[l], out = layer_sizes[l + 1];
      if (in < 1 || out < 1) throw std::invalid_argument("layer sizes must be positive");
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::vector<double> w(static_cast<std::size_t>(in) * out);
      for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
      net.weights.push_back(std::move(w));
      net.biases.push_back(std::vector<double>(out, 0.0));
    }
    return net;
  }
};

// Per-layer activation buffers kept across forward/backward.
struct MlpWorkspace {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[L] = logits
};

inline const std::vector<double>& mlp_forward(const Mlp& net, std::span<const double> x,
                                              MlpWorkspace& ws) {
  if (static_cast<int>(x.size()) != net.input_size())
    throw std::invalid_argument("input dimension mismatch");
  ws.acts.resize(net.num_layers() + 1);
  ws.acts[0].assign(x.begin(), x.end());
  for (int l = 0; l < net.num_layers(); ++l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    const bool hidden = l + 1 < net.num_layers();
    auto& y = ws.acts[l + 1];
    y.assign(out, 0.0);
    const auto& w = net.weights[l];
    const auto& prev = ws.acts[l];
    for (int o = 0; o < out; ++o) {
      double acc = net.biases[l][o];
      const double* row = w.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * prev[i];
      y[o] = hidden ? std::max(0.0, acc) : acc;
    }
  }
  return ws.acts.back();
}

inline std::vector<double> forward(const Mlp& net, std::span<const double> x) {
  MlpWorkspace ws;
  return mlp_forward(net, x, ws);
}

struct MlpGrads {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static MlpGrads zeros_like(const Mlp& net) {
    MlpGrads g;
    for (int l = 0; l < net.num_layers(); ++l) {
      g.weights.push_back(std::vector<double>(net.weights[l].size(), 0.0));
      g.biases.push_back(std::vector<double>(net.biases[l].size(), 0.0));
    }
    return g;
  }
  void zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }
};

// Accumulates exact gradients for the sample last run through `ws`, given the
// loss gradient at the logits. ReLU subgradient at 0 is taken as 0.
inline void mlp_backward(const Mlp& net, const MlpWorkspace& ws,
                         std::span<const double> dlogits, MlpGrads& grads) {
  if (static_cast<int>(dlogits.size()) != net.output_size())
    throw std::invalid_argument("logit gradient dimension mismatch");
  std::vector<double> delta(dlogits.begin(), dlogits.end());
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    const auto& prev = ws.acts[l];
    auto& gw = grads.weights[l];
    auto& gb = grads.biases[l];
    for (int o = 0; o < out; ++o) {
      gb[o] += delta[o];
      double* row = gw.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) row[i] += delta[o] * prev[i];
    }
    if (l == 0) break;
    std::vector<double> prev_delta(in, 0.0);
    const auto& w = net.weights[l];
    for (int o = 0; o < out; ++o) {
      const double* row = w.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) prev_delta[i] += delta[o] * row[i];
    }
    // ReLU gate of the hidden activation we came from.
    for (int i = 0; i < in; ++i)
      if (ws.acts[l][i] <= 0.0) prev_delta[i] = 0.0;
    delta = std::move(prev_delta);
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one flat parameter tensor.
struct AdamBuf {
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamBuf zeros(std::size_t n) {
    AdamBuf b;
    b.m.assign(n, 0.0);
    b.v.assign(n, 0.0);
    return b;
  }
};

// Standard bias-corrected Adam update of one tensor.
inline void adam_step(const AdamConfig& cfg, AdamBuf& buf, std::span<double> params,
                      std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != buf.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  buf.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(buf.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(buf.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    buf.m[i] = cfg.beta1 * buf.m[i] + (1.0 - cfg.beta1) * grads[i];
    buf.v[i] = cfg.beta2 * buf.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = buf.m[i] / bc1;
    const double vhat = buf.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Adam state covering every tensor of an Mlp.
struct AdamState {
  AdamConfig cfg;
  std::vector<AdamBuf> weight_bufs;
  std::vector<AdamBuf> bias_bufs;

  static AdamState for_mlp(const Mlp& net, double lr) {
    AdamState st;
    st.cfg.lr = lr;
    for (int l = 0; l < net.num_layers(); ++l) {
      st.weight_bufs.push_back(AdamBuf::zeros(net.weights[l].size()));
      st.bias_bufs.push_back(AdamBuf::zeros(net.biases[l].size()));
    }
    return st;
  }
};

inline void adam_step(AdamState& st, Mlp& net, const MlpGrads& grads) {
  for (int l = 0; l < net.num_layers(); ++l) {
    adam_step(st.cfg, st.weight_bufs[l], net.weights[l], grads.weights[l]);
    adam_step(st.cfg, st.bias_bufs[l], net.biases[l], grads.biases[l]);
  }
}

// ---------------------------------------------------------------------------
// Losses

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> dlogits;
};

// loss = -log softmax(logits)[target], computed in log space.
inline LossAndGrad softmax_cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw std::invalid_argument("target index out of range");
  LossAndGrad out;
  out.dlogits = softmax(logits);
  const double lse = log_sum_exp(logits);
  out.loss = lse - logits[target];
  out.dlogits[target] -= 1.0;
  return out;
}

// Cross entropy against a full target distribution (soft labels).
inline LossAndGrad soft_cross_entropy(std::span<const double> logits,
                                      std::span<const double> target) {
  if (logits.size() != target.size())
    throw std::invalid_argument("target distribution size mismatch");
  LossAndGrad out;
  out.dlogits = softmax(logits);
  const double lse = log_sum_exp(logits);
  out.loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] > 0.0) out.loss += target[i] * (lse - logits[i]);
    out.dlogits[i] -= target[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers
//
// Parameters serialize as C99 hex floats, which round-trip 64-bit values
// exactly.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_double(const std::string& text) {
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw std::invalid_argument("bad float literal: " + text);
  return v;
}

inline void write_mlp(std::ostream& os, const Mlp& net) {
  os << "mlp";
  for (int s : net.sizes) os << ' ' << s;
  os << "\n";
  for (int l = 0; l < net.num_layers(); ++l) {
    for (double v : net.weights[l]) os << format_double(v) << ' ';
    for (double v : net.biases[l]) os << format_double(v) << ' ';
    os << "\n";
  }
}

inline Mlp read_mlp(std::istream& is) {
  std::string tag;
  is >> tag;
  if (tag != "mlp") throw std::runtime_error("expected mlp record");
  std::string line;
  std::getline(is, line);
  std::istringstream hs(line);
  Mlp net;
  int s;
  while (hs >> s) net.sizes.push_back(s);
  if (net.sizes.size() < 2) throw std::runtime_error("mlp record missing layer sizes");
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const std::size_t in = net.sizes[l], out = net.sizes[l + 1];
    std::vector<double> w(in * out), b(out);
    std::string tok;
    for (double& v : w) {
      if (!(is >> tok)) throw std::runtime_error("mlp record truncated");
      v = parse_double(tok);
    }
    for (double& v : b) {
      if (!(is >> tok)) throw std::runtime_error("mlp record truncated");
      v = parse_double(tok);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

}  // namespace dwsl

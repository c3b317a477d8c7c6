#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dwsl/distance.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/relabel.hpp"
#include "dwsl/rng.hpp"

namespace dwsl {

enum class PolicyBackend { kTabular, kMlp };

// Goal-conditioned stochastic policy. The tabular backend stores an action
// distribution for every (s, g) pair seen in training and reports unseen
// pairs as unsupported; the MLP backend is a softmax head over
// state-goal features and answers every query.
struct PolicyModel {
  PolicyBackend backend = PolicyBackend::kTabular;
  std::string env_id;
  int num_actions = 0;
  int goal_count = 0;
  std::map<long long, std::vector<double>> table;
  Mlp net;

  std::optional<std::vector<double>> action_probs(const MdpSpec& spec, int s, int g) const {
    check_state(spec, s);
    check_goal(spec, g);
    if (backend == PolicyBackend::kTabular) {
      const auto it = table.find(pair_key(s, g, goal_count));
      if (it == table.end()) return std::nullopt;
      return it->second;
    }
    return softmax(forward(net, state_goal_features(spec, s, g)));
  }
};

// ---------------------------------------------------------------------------
// Advantage and weighting

// adv = d_cur - c - d_next with the bin-normalized cost c = 1{phi(s') != g}/B.
// A step along a shortest path with exact distances scores zero.
inline double advantage(double d_cur, double d_next, bool next_achieves_goal,
                        const BinningConfig& binning) {
  const double c = next_achieves_goal ? 0.0 : 1.0 / binning.num_bins;
  return d_cur - c - d_next;
}

// w = min(exp(adv / beta), clip); always positive. Pass an infinite clip to
// disable clipping. The exponent is clamped to the finite double range so
// extreme advantage/beta ratios cannot produce a zero or infinite weight.
inline double weight(double adv, double beta, double clip) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  const double exponent = std::clamp(adv / beta, -700.0, 700.0);
  return std::min(std::exp(exponent), clip);
}

// Distance estimate lookup used during policy training; nullopt means the
// pair is unsupported by the model.
using DistanceFn = std::function<std::optional<double>(int s, int g)>;

// Soft-min (LogSumExp) estimates at temperature alpha for distributional
// backends, scalar predictions for regressor backends.
inline DistanceFn soft_min_distance_fn(const DistanceModel& model, const MdpSpec& spec,
                                       double alpha) {
  if (model.is_distributional())
    return [&model, &spec, alpha](int s, int g) {
      return logsumexp_distance(model, spec, s, g, alpha);
    };
  return [&model, &spec](int s, int g) { return predicted_distance(model, spec, s, g); };
}

inline DistanceFn expectation_distance_fn(const DistanceModel& model, const MdpSpec& spec) {
  if (!model.is_distributional())
    throw std::invalid_argument("expectation statistic needs a distributional model");
  return [&model, &spec](int s, int g) { return expectation_distance(model, spec, s, g); };
}

struct PolicyTrainReport {
  long unsupported_next = 0;  // next-state distance queries answered unsupported
  long clipped = 0;           // weights cut off at the clip value
};

namespace detail {

// Weight of one relabeled sample. Unsupported next-state queries contribute
// advantage 0 (weight 1) and are counted, so stitching gaps stay observable.
class SampleWeigher {
 public:
  SampleWeigher(const MdpSpec& spec, DistanceFn distance, const BinningConfig& binning,
                double beta, double clip)
      : spec_(&spec), distance_(std::move(distance)), binning_(binning), beta_(beta),
        clip_(clip) {}

  double operator()(const RelabeledSample& sample, PolicyTrainReport* report) {
    double adv = 0.0;
    const bool next_achieves = spec_->phi(sample.s_next) == sample.goal;
    const auto d_cur = lookup(sample.s, sample.goal);
    const auto d_next = lookup(sample.s_next, sample.goal);
    if (d_cur && d_next) {
      adv = advantage(*d_cur, *d_next, next_achieves, binning_);
    } else if (report) {
      ++report->unsupported_next;
    }
    const double w = weight(adv, beta_, clip_);
    if (report && w == clip_) ++report->clipped;
    return w;
  }

 private:
  std::optional<double> lookup(int s, int g) {
    const long long key = pair_key(s, g, spec_->goal_count);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto d = distance_(s, g);
    cache_.emplace(key, d);
    return d;
  }

  const MdpSpec* spec_;
  DistanceFn distance_;
  BinningConfig binning_;
  double beta_;
  double clip_;
  std::map<long long, std::optional<double>> cache_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Weighted imitation training

// Core weighted relabeled imitation. The tabular path is the exact closed
// form: pi(a|s,g) proportional to the sampler-law mass of matching samples
// scaled by their weights. The MLP path minimizes the weighted cross entropy
// over sampled batches, deterministic per seed.
inline PolicyModel train_weighted_imitation(
    const Dataset& data, const MdpSpec& spec, const BinningConfig& binning,
    DistanceFn distance, const TrainConfig& cfg, PolicyBackend backend,
    PolicyTrainReport* report = nullptr, long snapshot_every = 0,
    const std::function<void(long, const PolicyModel&)>& on_snapshot = {}) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  PolicyModel policy;
  policy.backend = backend;
  policy.env_id = spec.env_id;
  policy.num_actions = spec.num_actions;
  policy.goal_count = spec.goal_count;
  const bool unweighted = !distance;
  detail::SampleWeigher weigh(spec, std::move(distance), binning, cfg.beta, cfg.clip);

  if (backend == PolicyBackend::kTabular) {
    const std::size_t num_traj = data.trajectories.size();
    for (const RelabeledSample& sample : enumerate_all_pairs(data, spec, binning)) {
      auto& row = policy.table[pair_key(sample.s, sample.goal, spec.goal_count)];
      if (row.empty()) row.assign(spec.num_actions, 0.0);
      const double w = unweighted ? 1.0 : weigh(sample, report);
      row[sample.a] += w * sampler_law_weight(sample, data.header.horizon, num_traj);
    }
    for (auto& [key, row] : policy.table) {
      double total = 0.0;
      for (double v : row) total += v;
      for (double& v : row) v /= total;
    }
    return policy;
  }

  policy.net = detail::init_net(spec, cfg, spec.num_actions);
  AdamState opt = AdamState::for_mlp(policy.net, cfg.lr);
  MlpGrads grads = MlpGrads::zeros_like(policy.net);
  MlpWorkspace ws;
  Rng rng(cfg.seed + 1);
  for (long step = 0; step < cfg.steps; ++step) {
    grads.zero();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const RelabeledSample sample = sample_relabeled(data, spec, binning, rng);
      const double w = unweighted ? 1.0 : weigh(sample, report);
      const auto& logits =
          mlp_forward(policy.net, state_goal_features(spec, sample.s, sample.goal), ws);
      LossAndGrad lg = softmax_cross_entropy(logits, sample.a);
      loss += w * lg.loss;
      for (double& d : lg.dlogits) d *= w / cfg.batch;
      mlp_backward(policy.net, ws, lg.dlogits, grads);
    }
    if (!std::isfinite(loss)) throw TrainingError("non-finite policy loss", step);
    adam_step(opt, policy.net, grads);
    if (snapshot_every > 0 && on_snapshot && (step + 1) % snapshot_every == 0)
      on_snapshot(step + 1, policy);
  }
  return policy;
}

// DWSL: exponentiated reduction of the soft-min distance estimate.
inline PolicyModel train_dwsl(const Dataset& data, const MdpSpec& spec,
                              const DistanceModel& model, const TrainConfig& cfg,
                              PolicyBackend backend = PolicyBackend::kTabular,
                              PolicyTrainReport* report = nullptr) {
  return train_weighted_imitation(data, spec, model.binning,
                                  soft_min_distance_fn(model, spec, cfg.alpha), cfg,
                                  backend, report);
}

// GCSL baseline: every weight forced to one.
inline PolicyModel train_gcsl(const Dataset& data, const MdpSpec& spec,
                              const BinningConfig& binning, const TrainConfig& cfg,
                              PolicyBackend backend = PolicyBackend::kTabular) {
  return train_weighted_imitation(data, spec, binning, nullptr, cfg, backend, nullptr);
}

// AWR-style variant: expectation statistic instead of the soft minimum.
inline PolicyModel train_awr_variant(const Dataset& data, const MdpSpec& spec,
                                     const DistanceModel& model, const TrainConfig& cfg,
                                     PolicyBackend backend = PolicyBackend::kTabular,
                                     PolicyTrainReport* report = nullptr) {
  return train_weighted_imitation(data, spec, model.binning,
                                  expectation_distance_fn(model, spec), cfg, backend,
                                  report);
}

// ---------------------------------------------------------------------------
// DWSL-B: bootstrapped distance distributions
//
// Distributional backup on relabeled transitions. The target for (s, g) given
// the transition to s' is a point mass at bin 0 when phi(s') = g, and
// otherwise the target model's distribution at (s', g) shifted up one bin
// with overflow collecting in the last bin. The online model fits targets by
// cross entropy; the target model tracks it by polyak averaging every
// target_update_period steps. Restricted to n_step = 1, where the one-bin
// shift is exact.

namespace detail {

inline std::vector<double> shifted_target(const std::vector<double>& p) {
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t b = 1; b < p.size(); ++b) out[b] = p[b - 1];
  out.back() += p.back();
  return out;
}

}  // namespace detail

inline DistanceModel train_dwsl_b(const Dataset& data, const MdpSpec& spec,
                                  const BinningConfig& binning, const TrainConfig& cfg,
                                  int target_update_period, double polyak,
                                  PolicyBackend backend = PolicyBackend::kTabular) {
  if (binning.n_step != 1)
    throw std::invalid_argument("dwsl_b requires n_step = 1");
  if (target_update_period < 1 || !(polyak > 0.0) || polyak > 1.0)
    throw std::invalid_argument("bad target update parameters");
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  const int bins = binning.num_bins;

  DistanceModel model;
  model.binning = binning;
  model.env_id = spec.env_id;
  model.goal_count = spec.goal_count;

  if (backend == PolicyBackend::kTabular) {
    model.backend = DistanceBackend::kTabular;
    // Zero logits (uniform) for every pair-start observed in the data.
    std::map<long long, std::vector<double>> logits, target_logits;
    std::map<long long, AdamBuf> adam;
    for (const RelabeledSample& s : enumerate_all_pairs(data, spec, binning)) {
      const long long key = pair_key(s.s, s.goal, spec.goal_count);
      if (!logits.count(key)) {
        logits[key].assign(bins, 0.0);
        adam[key] = AdamBuf::zeros(static_cast<std::size_t>(bins));
      }
    }
    target_logits = logits;
    const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};
    Rng rng(cfg.seed + 1);
    for (long step = 0; step < cfg.steps; ++step) {
      double loss = 0.0;
      for (int b = 0; b < cfg.batch; ++b) {
        const RelabeledSample sample = sample_relabeled(data, spec, binning, rng);
        std::vector<double> target(bins, 0.0);
        if (spec.phi(sample.s_next) == sample.goal) {
          target[0] = 1.0;
        } else {
          // The (i+1, j) pair exists whenever phi(s_{i+1}) != goal, so the
          // next-state row is always present.
          target = detail::shifted_target(softmax(
              target_logits.at(pair_key(sample.s_next, sample.goal, spec.goal_count))));
        }
        const long long key = pair_key(sample.s, sample.goal, spec.goal_count);
        auto& row = logits.at(key);
        LossAndGrad lg = soft_cross_entropy(row, target);
        loss += lg.loss;
        adam_step(adam_cfg, adam.at(key), row, lg.dlogits);
      }
      if (!std::isfinite(loss)) throw TrainingError("non-finite dwsl_b loss", step);
      if ((step + 1) % target_update_period == 0) {
        for (auto& [key, trow] : target_logits) {
          const auto& orow = logits.at(key);
          for (int i = 0; i < bins; ++i)
            trow[i] = (1.0 - polyak) * trow[i] + polyak * orow[i];
        }
      }
    }
    for (const auto& [key, row] : logits) {
      CategoricalDistance cell;
      cell.probs = softmax(row);
      cell.support.assign(bins, 1);
      model.table[key] = std::move(cell);
    }
    return model;
  }

  model.backend = DistanceBackend::kMlpClassifier;
  model.net = detail::init_net(spec, cfg, bins);
  Mlp target_net = model.net;
  AdamState opt = AdamState::for_mlp(model.net, cfg.lr);
  MlpGrads grads = MlpGrads::zeros_like(model.net);
  MlpWorkspace ws;
  Rng rng(cfg.seed + 1);
  for (long step = 0; step < cfg.steps; ++step) {
    grads.zero();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const RelabeledSample sample = sample_relabeled(data, spec, binning, rng);
      std::vector<double> target(bins, 0.0);
      if (spec.phi(sample.s_next) == sample.goal) {
        target[0] = 1.0;
      } else {
        target = detail::shifted_target(softmax(
            forward(target_net, state_goal_features(spec, sample.s_next, sample.goal))));
      }
      const auto& logits =
          mlp_forward(model.net, state_goal_features(spec, sample.s, sample.goal), ws);
      LossAndGrad lg = soft_cross_entropy(logits, target);
      loss += lg.loss;
      for (double& d : lg.dlogits) d /= cfg.batch;
      mlp_backward(model.net, ws, lg.dlogits, grads);
    }
    if (!std::isfinite(loss)) throw TrainingError("non-finite dwsl_b loss", step);
    adam_step(opt, model.net, grads);
    if ((step + 1) % target_update_period == 0) {
      for (int l = 0; l < model.net.num_layers(); ++l) {
        for (std::size_t i = 0; i < model.net.weights[l].size(); ++i)
          target_net.weights[l][i] = (1.0 - polyak) * target_net.weights[l][i] +
                                     polyak * model.net.weights[l][i];
        for (std::size_t i = 0; i < model.net.biases[l].size(); ++i)
          target_net.biases[l][i] = (1.0 - polyak) * target_net.biases[l][i] +
                                    polyak * model.net.biases[l][i];
      }
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Action selection

enum class ActMode { kGreedy, kSample };

// Greedy takes the argmax with lowest-id tie break; sample draws from the
// policy. Unsupported tabular pairs fall back to a uniform action and count
// the event.
inline int act(const PolicyModel& policy, const MdpSpec& spec, int s, int g, ActMode mode,
               Rng& rng, long* fallback_count = nullptr) {
  const auto probs = policy.action_probs(spec, s, g);
  if (!probs) {
    if (fallback_count) ++*fallback_count;
    return rng.uniform_int(spec.num_actions);
  }
  if (mode == ActMode::kSample) return rng.categorical(*probs);
  int best = 0;
  for (int a = 1; a < spec.num_actions; ++a)
    if ((*probs)[a] > (*probs)[best]) best = a;
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoint format

inline void write_policy_model(std::ostream& os, const PolicyModel& policy) {
  os << "dwsl-policy 1\n";
  os << "backend=" << (policy.backend == PolicyBackend::kTabular ? "tabular" : "mlp")
     << " env=" << policy.env_id << " actions=" << policy.num_actions
     << " goal_count=" << policy.goal_count << "\n";
  if (policy.backend == PolicyBackend::kTabular) {
    os << "pairs " << policy.table.size() << "\n";
    for (const auto& [key, row] : policy.table) {
      os << key / policy.goal_count << ' ' << key % policy.goal_count;
      for (double v : row) os << ' ' << format_double(v);
      os << "\n";
    }
  } else {
    write_mlp(os, policy.net);
  }
}

inline PolicyModel read_policy_model(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "dwsl-policy" || version != 1)
    throw std::runtime_error("not a v1 policy checkpoint");
  PolicyModel policy;
  std::string kv;
  std::string backend;
  for (int field = 0; field < 4; ++field) {
    if (!(is >> kv)) throw std::runtime_error("policy checkpoint truncated");
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed checkpoint field: " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "backend") backend = value;
    else if (key == "env") policy.env_id = value;
    else if (key == "actions") policy.num_actions = std::stoi(value);
    else if (key == "goal_count") policy.goal_count = std::stoi(value);
    else throw std::runtime_error("unknown checkpoint field: " + key);
  }
  if (backend == "tabular") {
    policy.backend = PolicyBackend::kTabular;
    std::string tag;
    std::size_t pairs = 0;
    is >> tag >> pairs;
    if (tag != "pairs") throw std::runtime_error("expected pairs record");
    for (std::size_t i = 0; i < pairs; ++i) {
      int s = 0, g = 0;
      if (!(is >> s >> g)) throw std::runtime_error("policy checkpoint truncated");
      std::vector<double> row(policy.num_actions);
      std::string tok;
      for (double& v : row) {
        if (!(is >> tok)) throw std::runtime_error("policy checkpoint truncated");
        v = parse_double(tok);
      }
      policy.table[pair_key(s, g, policy.goal_count)] = std::move(row);
    }
  } else if (backend == "mlp") {
    policy.backend = PolicyBackend::kMlp;
    policy.net = read_mlp(is);
  } else {
    throw std::runtime_error("unknown policy backend: " + backend);
  }
  return policy;
}

}  // namespace dwsl

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwsl/math.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/nn.hpp"
#include "dwsl/relabel.hpp"

namespace dwsl {

// Probability vector over B distance bins for one (state, goal) pair. The
// support flag marks bins actually observed in the relabeled data; unobserved
// bins hold exact zeros.
struct CategoricalDistance {
  std::vector<double> probs;
  std::vector<std::uint8_t> support;

  int num_bins() const { return static_cast<int>(probs.size()); }
};

enum class DistanceBackend { kTabular, kMlpClassifier, kMlpRegressor, kMlpExpectile };

inline std::string backend_name(DistanceBackend b) {
  switch (b) {
    case DistanceBackend::kTabular: return "tabular";
    case DistanceBackend::kMlpClassifier: return "mlp_classifier";
    case DistanceBackend::kMlpRegressor: return "mlp_regressor";
    case DistanceBackend::kMlpExpectile: return "mlp_expectile";
  }
  return "?";
}

inline DistanceBackend backend_from_name(const std::string& name) {
  if (name == "tabular") return DistanceBackend::kTabular;
  if (name == "mlp_classifier") return DistanceBackend::kMlpClassifier;
  if (name == "mlp_regressor") return DistanceBackend::kMlpRegressor;
  if (name == "mlp_expectile") return DistanceBackend::kMlpExpectile;
  throw std::invalid_argument("unknown distance backend: " + name);
}

inline long long pair_key(int s, int g, int goal_count) {
  return static_cast<long long>(s) * goal_count + g;
}

// Distance-distribution model p(.|s,g). The tabular backend covers exactly
// the (s, g) pairs observed in the relabeled data and signals unsupported
// queries with nullopt; the MLP backends answer every query. Regressor
// backends predict a scalar normalized distance instead of a distribution.
struct DistanceModel {
  DistanceBackend backend = DistanceBackend::kTabular;
  BinningConfig binning;
  std::string env_id;
  int goal_count = 0;
  std::map<long long, CategoricalDistance> table;
  Mlp net;
  double tau = 0.0;  // expectile level, kMlpExpectile only

  bool is_tabular() const { return backend == DistanceBackend::kTabular; }
  bool is_distributional() const {
    return backend == DistanceBackend::kTabular ||
           backend == DistanceBackend::kMlpClassifier;
  }

  std::optional<CategoricalDistance> distribution(const MdpSpec& spec, int s, int g) const {
    check_state(spec, s);
    check_goal(spec, g);
    if (backend == DistanceBackend::kTabular) {
      const auto it = table.find(pair_key(s, g, goal_count));
      if (it == table.end()) return std::nullopt;
      return it->second;
    }
    if (backend == DistanceBackend::kMlpClassifier) {
      CategoricalDistance d;
      d.probs = softmax(forward(net, state_goal_features(spec, s, g)));
      d.support.assign(d.probs.size(), 1);
      return d;
    }
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Tabular fit (exact maximum likelihood under the sampler's law)

// probs[b] for each observed (s, g) is proportional to the total two-stage
// sampler mass of the pairs landing in bin b; pairs at source index i carry
// weight 1/(T - i).
inline DistanceModel fit_tabular(const Dataset& data, const MdpSpec& spec,
                                 const BinningConfig& cfg) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  DistanceModel model;
  model.backend = DistanceBackend::kTabular;
  model.binning = cfg;
  model.env_id = spec.env_id;
  model.goal_count = spec.goal_count;
  const std::size_t num_traj = data.trajectories.size();
  for (const RelabeledSample& sample : enumerate_all_pairs(data, spec, cfg)) {
    auto& cell = model.table[pair_key(sample.s, sample.goal, spec.goal_count)];
    if (cell.probs.empty()) {
      cell.probs.assign(cfg.num_bins, 0.0);
      cell.support.assign(cfg.num_bins, 0);
    }
    cell.probs[sample.bin] +=
        sampler_law_weight(sample, data.header.horizon, num_traj);
    cell.support[sample.bin] = 1;
  }
  for (auto& [key, cell] : model.table) {
    double total = 0.0;
    for (double p : cell.probs) total += p;
    for (double& p : cell.probs) p /= total;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Distance statistics

// Soft minimum of the normalized bin distances (b+1)/B under p(.|s,g):
//   d = -alpha * log sum_b p(b) exp(-(b+1)/(B*alpha))
// computed in log space. A point mass at bin b gives exactly (b+1)/B.
inline std::optional<double> logsumexp_distance(const DistanceModel& model,
                                                const MdpSpec& spec, int s, int g,
                                                double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const auto dist = model.distribution(spec, s, g);
  if (!dist) return std::nullopt;
  const int bins = dist->num_bins();
  std::vector<double> values(bins);
  for (int b = 0; b < bins; ++b) values[b] = model.binning.bin_value(b);
  return soft_min(values, dist->probs, alpha);
}

// Mean normalized distance sum_b p(b) (b+1)/B.
inline std::optional<double> expectation_distance(const DistanceModel& model,
                                                  const MdpSpec& spec, int s, int g) {
  const auto dist = model.distribution(spec, s, g);
  if (!dist) return std::nullopt;
  double mean = 0.0;
  for (int b = 0; b < dist->num_bins(); ++b)
    mean += dist->probs[b] * model.binning.bin_value(b);
  return mean;
}

// Scalar prediction of the regressor backends, already mapped back to
// normalized-distance space.
inline std::optional<double> predicted_distance(const DistanceModel& model,
                                                const MdpSpec& spec, int s, int g) {
  if (model.backend == DistanceBackend::kMlpRegressor)
    return forward(model.net, state_goal_features(spec, s, g))[0];
  if (model.backend == DistanceBackend::kMlpExpectile)
    return -forward(model.net, state_goal_features(spec, s, g))[0];
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Distance to discounted return
//
// A goal first achieved after k steps earns reward -1 for k-1 steps and 0
// afterwards, a total discounted return of -(1 - gamma^(k-1)) / (1 - gamma).
// With gamma = 1 this is -(k-1), capped by the remaining horizon when one is
// given. Strictly decreasing in k.

inline double distance_to_return(int k, double gamma, int remaining_horizon = -1) {
  if (k < 1) throw std::invalid_argument("distance k must be >= 1");
  if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("gamma must be in (0,1]");
  if (gamma == 1.0) {
    double steps = static_cast<double>(k - 1);
    if (remaining_horizon >= 0) steps = std::min(steps, static_cast<double>(remaining_horizon));
    return -steps;
  }
  return -(1.0 - std::pow(gamma, k - 1)) / (1.0 - gamma);
}

// ---------------------------------------------------------------------------
// MLP training

struct TrainConfig {
  double alpha = 1.0;   // soft-min temperature in normalized-distance space
  double beta = 0.05;   // advantage temperature
  double clip = 10.0;   // max exponentiated weight; infinity disables clipping
  long steps = 20000;
  int batch = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64, 64};
};

namespace detail {

inline Mlp init_net(const MdpSpec& spec, const TrainConfig& cfg, int outputs) {
  std::vector<int> sizes;
  sizes.push_back(spec.feature_dim());
  for (int h : cfg.hidden) sizes.push_back(h);
  sizes.push_back(outputs);
  Rng rng(cfg.seed);
  return Mlp::init(sizes, rng);
}

}  // namespace detail

// Softmax classifier over bins, cross-entropy on two-stage-sampled relabeled
// pairs. Deterministic per seed.
inline DistanceModel train_classifier(const Dataset& data, const MdpSpec& spec,
                                      const BinningConfig& cfg, const TrainConfig& train) {
  if (cfg.num_bins < 2)
    throw std::invalid_argument("classification needs at least two bins");
  DistanceModel model;
  model.backend = DistanceBackend::kMlpClassifier;
  model.binning = cfg;
  model.env_id = spec.env_id;
  model.goal_count = spec.goal_count;
  model.net = detail::init_net(spec, train, cfg.num_bins);

  AdamState opt = AdamState::for_mlp(model.net, train.lr);
  MlpGrads grads = MlpGrads::zeros_like(model.net);
  MlpWorkspace ws;
  Rng rng(train.seed + 1);
  for (long step = 0; step < train.steps; ++step) {
    grads.zero();
    double loss = 0.0;
    for (int b = 0; b < train.batch; ++b) {
      const RelabeledSample sample = sample_relabeled(data, spec, cfg, rng);
      const auto& logits =
          mlp_forward(model.net, state_goal_features(spec, sample.s, sample.goal), ws);
      LossAndGrad lg = softmax_cross_entropy(logits, sample.bin);
      loss += lg.loss;
      for (double& d : lg.dlogits) d /= train.batch;
      mlp_backward(model.net, ws, lg.dlogits, grads);
    }
    if (!std::isfinite(loss)) throw TrainingError("non-finite classifier loss", step);
    adam_step(opt, model.net, grads);
  }
  return model;
}

enum class RegressionMode { kMse, kExpectile };

// Scalar regressor on normalized bin distances. kMse fits the conditional
// mean. kExpectile fits the tau-expectile of the negated distances with the
// asymmetric squared loss |tau - 1{u<0}| u^2, pushing the prediction toward
// the low-distance side for tau > 0.5.
inline DistanceModel train_regression(const Dataset& data, const MdpSpec& spec,
                                      const BinningConfig& cfg, const TrainConfig& train,
                                      RegressionMode mode, double tau = 0.7) {
  if (mode == RegressionMode::kExpectile && !(tau > 0.5 && tau < 1.0))
    throw std::invalid_argument("expectile tau must be in (0.5, 1)");
  DistanceModel model;
  model.backend = mode == RegressionMode::kMse ? DistanceBackend::kMlpRegressor
                                               : DistanceBackend::kMlpExpectile;
  model.binning = cfg;
  model.env_id = spec.env_id;
  model.goal_count = spec.goal_count;
  model.tau = mode == RegressionMode::kExpectile ? tau : 0.0;
  model.net = detail::init_net(spec, train, 1);

  AdamState opt = AdamState::for_mlp(model.net, train.lr);
  MlpGrads grads = MlpGrads::zeros_like(model.net);
  MlpWorkspace ws;
  Rng rng(train.seed + 1);
  const bool expectile = mode == RegressionMode::kExpectile;
  for (long step = 0; step < train.steps; ++step) {
    grads.zero();
    double loss = 0.0;
    for (int b = 0; b < train.batch; ++b) {
      const RelabeledSample sample = sample_relabeled(data, spec, cfg, rng);
      double target = model.binning.bin_value(sample.bin);
      if (expectile) target = -target;
      const auto& out =
          mlp_forward(model.net, state_goal_features(spec, sample.s, sample.goal), ws);
      const double u = target - out[0];
      const double w = expectile ? std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) : 1.0;
      loss += w * u * u;
      const double dlogit[1] = {-2.0 * w * u / train.batch};
      mlp_backward(model.net, ws, dlogit, grads);
    }
    if (!std::isfinite(loss)) throw TrainingError("non-finite regression loss", step);
    adam_step(opt, model.net, grads);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint format (versioned, lossless 64-bit round trip)

inline void write_distance_model(std::ostream& os, const DistanceModel& model) {
  os << "dwsl-distance 1\n";
  os << "backend=" << backend_name(model.backend) << " env=" << model.env_id
     << " goal_count=" << model.goal_count << " n_step=" << model.binning.n_step
     << " bins=" << model.binning.num_bins << " tau=" << format_double(model.tau) << "\n";
  if (model.backend == DistanceBackend::kTabular) {
    os << "pairs " << model.table.size() << "\n";
    for (const auto& [key, cell] : model.table) {
      os << key / model.goal_count << ' ' << key % model.goal_count;
      for (int b = 0; b < cell.num_bins(); ++b)
        os << ' ' << format_double(cell.probs[b]) << ' ' << static_cast<int>(cell.support[b]);
      os << "\n";
    }
  } else {
    write_mlp(os, model.net);
  }
}

inline DistanceModel read_distance_model(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "dwsl-distance" || version != 1)
    throw std::runtime_error("not a v1 distance checkpoint");
  DistanceModel model;
  std::string kv;
  for (int field = 0; field < 6; ++field) {
    if (!(is >> kv)) throw std::runtime_error("distance checkpoint truncated");
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed checkpoint field: " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "backend") model.backend = backend_from_name(value);
    else if (key == "env") model.env_id = value;
    else if (key == "goal_count") model.goal_count = std::stoi(value);
    else if (key == "n_step") model.binning.n_step = std::stoi(value);
    else if (key == "bins") model.binning.num_bins = std::stoi(value);
    else if (key == "tau") model.tau = parse_double(value);
    else throw std::runtime_error("unknown checkpoint field: " + key);
  }
  if (model.backend == DistanceBackend::kTabular) {
    std::string tag;
    std::size_t pairs = 0;
    is >> tag >> pairs;
    if (tag != "pairs") throw std::runtime_error("expected pairs record");
    for (std::size_t i = 0; i < pairs; ++i) {
      int s = 0, g = 0;
      if (!(is >> s >> g)) throw std::runtime_error("distance checkpoint truncated");
      CategoricalDistance cell;
      cell.probs.resize(model.binning.num_bins);
      cell.support.resize(model.binning.num_bins);
      for (int b = 0; b < model.binning.num_bins; ++b) {
        std::string p;
        int flag = 0;
        if (!(is >> p >> flag)) throw std::runtime_error("distance checkpoint truncated");
        cell.probs[b] = parse_double(p);
        cell.support[b] = static_cast<std::uint8_t>(flag);
      }
      model.table[pair_key(s, g, model.goal_count)] = std::move(cell);
    }
  } else {
    model.net = read_mlp(is);
  }
  return model;
}

}  // namespace dwsl

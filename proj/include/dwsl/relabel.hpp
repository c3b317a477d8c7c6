#pragma once

#include <algorithm>
#include <vector>

#include "dwsl/datagen.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/rng.hpp"

namespace dwsl {

// N-step distance binning: B = T // N bins, bin(k) = (k - 1) // N for a
// distance of k transitions. When N does not divide T the largest distances
// clamp into the final bin.
struct BinningConfig {
  int n_step = 1;
  int num_bins = 1;

  static BinningConfig for_horizon(int horizon, int n_step) {
    if (n_step < 1) throw std::invalid_argument("n_step must be positive");
    BinningConfig cfg;
    cfg.n_step = n_step;
    cfg.num_bins = horizon / n_step;
    if (cfg.num_bins < 1)
      throw std::invalid_argument("horizon too short for the requested n_step");
    return cfg;
  }

  int bin_of(int k) const {
    if (k < 1) throw std::invalid_argument("distance k must be >= 1");
    return std::min((k - 1) / n_step, num_bins - 1);
  }

  // Representative normalized distance of a bin, the upper edge (b+1)/B.
  double bin_value(int b) const { return static_cast<double>(b + 1) / num_bins; }

  bool operator==(const BinningConfig&) const = default;
};

// A hindsight-relabeled transition: action a taken at state s reached s_next,
// and the same trajectory achieved goal = phi(states[j]) exactly k = j - i
// steps after i. t records i so the sampler's law weight 1/(T-i) can be
// reconstructed.
struct RelabeledSample {
  int s = 0;
  int a = 0;
  int s_next = 0;
  int goal = 0;
  int k = 0;
  int bin = 0;
  int t = 0;
};

// Two-stage sampler: trajectory uniform, i uniform in [0, T-1], then j
// uniform in [i+1, T]. Hence P(i, j | trajectory) = 1/T * 1/(T - i).
inline RelabeledSample sample_relabeled(const Dataset& data, const MdpSpec& spec,
                                        const BinningConfig& cfg, Rng& rng) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  const Trajectory& traj =
      data.trajectories[rng.uniform_int(static_cast<int>(data.trajectories.size()))];
  const int horizon = traj.horizon();
  if (horizon < 1) throw std::invalid_argument("trajectory too short to relabel");
  const int i = rng.uniform_int(horizon);
  const int j = i + 1 + rng.uniform_int(horizon - i);
  RelabeledSample sample;
  sample.s = traj.states[i];
  sample.a = traj.actions[i];
  sample.s_next = traj.states[i + 1];
  sample.goal = spec.phi(traj.states[j]);
  sample.k = j - i;
  sample.bin = cfg.bin_of(sample.k);
  sample.t = i;
  return sample;
}

// Every (trajectory, i, j) pair with i < j; cardinality sum over trajectories
// of T(T+1)/2. Exact counterpart of the sampler for tabular fits and tests.
inline std::vector<RelabeledSample> enumerate_all_pairs(const Dataset& data,
                                                        const MdpSpec& spec,
                                                        const BinningConfig& cfg) {
  std::vector<RelabeledSample> out;
  for (const Trajectory& traj : data.trajectories) {
    const int horizon = traj.horizon();
    for (int i = 0; i < horizon; ++i) {
      for (int j = i + 1; j <= horizon; ++j) {
        RelabeledSample sample;
        sample.s = traj.states[i];
        sample.a = traj.actions[i];
        sample.s_next = traj.states[i + 1];
        sample.goal = spec.phi(traj.states[j]);
        sample.k = j - i;
        sample.bin = cfg.bin_of(sample.k);
        sample.t = i;
        out.push_back(sample);
      }
    }
  }
  return out;
}

// Probability mass the two-stage sampler puts on one enumerated pair.
inline double sampler_law_weight(const RelabeledSample& sample, int horizon,
                                 std::size_t num_trajectories) {
  return 1.0 / (static_cast<double>(num_trajectories) * horizon * (horizon - sample.t));
}

}  // namespace dwsl

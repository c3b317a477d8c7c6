#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dwsl/datagen.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/policy.hpp"
#include "dwsl/rng.hpp"

namespace dwsl {

struct EvalReport {
  int episodes = 0;
  double success_rate = 0.0;       // goal achieved at least once
  double mean_steps_at_goal = 0.0; // steps started from a goal-achieving state
  double mean_first_hit = 0.0;     // among successful episodes
  long fallback_count = 0;         // unsupported (s, g) action queries
};

enum class GoalStrategy { kDatasetStates, kAllReachable };

// dataset_states draws phi(s) for s uniform over all dataset states;
// all_reachable draws uniformly over goals reachable from the start.
inline std::pair<int, int> sample_eval_goal(const MdpSpec& spec, GoalStrategy strategy,
                                            Rng& rng, const Dataset* data = nullptr) {
  const int start =
      spec.start_states[rng.uniform_int(static_cast<int>(spec.start_states.size()))];
  if (strategy == GoalStrategy::kDatasetStates) {
    if (!data || data->trajectories.empty())
      throw std::invalid_argument("dataset_states goal strategy needs a dataset");
    const Trajectory& traj =
        data->trajectories[rng.uniform_int(static_cast<int>(data->trajectories.size()))];
    const int s = traj.states[rng.uniform_int(static_cast<int>(traj.states.size()))];
    return {start, spec.phi(s)};
  }
  std::vector<std::uint8_t> goal_seen(spec.goal_count, 0);
  std::vector<int> reachable;
  // Forward BFS over the transition table from the start state.
  std::vector<std::uint8_t> visited(spec.num_states, 0);
  std::vector<int> frontier = {start};
  visited[start] = 1;
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int s : frontier) {
      if (!goal_seen[spec.phi(s)]) {
        goal_seen[spec.phi(s)] = 1;
        reachable.push_back(spec.phi(s));
      }
      for (int a = 0; a < spec.num_actions; ++a) {
        const int n = spec.f(s, a);
        if (!visited[n]) {
          visited[n] = 1;
          next.push_back(n);
        }
      }
    }
    frontier = std::move(next);
  }
  if (reachable.empty()) throw std::runtime_error("no reachable goal");
  std::sort(reachable.begin(), reachable.end());
  return {start, reachable[rng.uniform_int(static_cast<int>(reachable.size()))]};
}

struct RolloutFragment {
  bool success = false;
  int steps_at_goal = 0;            // t in [0, T) with phi(s_t) = g
  std::optional<int> first_hit;     // min t >= 0 with phi(s_t) = g
  long fallback_count = 0;
};

inline std::pair<Trajectory, RolloutFragment> rollout(const MdpSpec& spec,
                                                      const PolicyModel& policy, int start,
                                                      int goal, int horizon, ActMode mode,
                                                      Rng& rng) {
  check_state(spec, start);
  check_goal(spec, goal);
  Trajectory traj;
  RolloutFragment frag;
  int s = start;
  traj.states.push_back(s);
  for (int t = 0; t < horizon; ++t) {
    if (spec.phi(s) == goal) {
      ++frag.steps_at_goal;
      if (!frag.first_hit) frag.first_hit = t;
    }
    const int a = act(policy, spec, s, goal, mode, rng, &frag.fallback_count);
    s = spec.f(s, a);
    traj.actions.push_back(a);
    traj.states.push_back(s);
  }
  if (!frag.first_hit && spec.phi(s) == goal) frag.first_hit = horizon;
  frag.success = frag.first_hit.has_value();
  return {std::move(traj), frag};
}

// Aggregates seeded rollouts; episode e uses the stream Rng(seed + e), so the
// report is a pure function of its arguments.
inline EvalReport evaluate(const MdpSpec& spec, const PolicyModel& policy, int episodes,
                           GoalStrategy strategy, std::uint64_t seed,
                           const Dataset* data = nullptr,
                           ActMode mode = ActMode::kGreedy) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  EvalReport report;
  report.episodes = episodes;
  long successes = 0;
  long steps_at_goal = 0;
  long first_hits = 0;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(seed + static_cast<std::uint64_t>(e));
    const auto [start, goal] = sample_eval_goal(spec, strategy, rng, data);
    const auto [traj, frag] = rollout(spec, policy, start, goal, spec.horizon, mode, rng);
    if (frag.success) {
      ++successes;
      first_hits += *frag.first_hit;
    }
    steps_at_goal += frag.steps_at_goal;
    report.fallback_count += frag.fallback_count;
  }
  report.success_rate = static_cast<double>(successes) / episodes;
  report.mean_steps_at_goal = static_cast<double>(steps_at_goal) / episodes;
  report.mean_first_hit =
      successes > 0 ? static_cast<double>(first_hits) / successes : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Learning curves: comma-separated, one header row, full-precision decimals.

struct CurvePoint {
  long step = 0;
  EvalReport report;
};

inline void emit_curves(std::ostream& os, const std::vector<CurvePoint>& history) {
  os << "step,success_rate,mean_steps_at_goal,mean_first_hit,fallback_count\n";
  char buf[64];
  for (const CurvePoint& p : history) {
    os << p.step;
    std::snprintf(buf, sizeof(buf), ",%.17g", p.report.success_rate);
    os << buf;
    std::snprintf(buf, sizeof(buf), ",%.17g", p.report.mean_steps_at_goal);
    os << buf;
    std::snprintf(buf, sizeof(buf), ",%.17g", p.report.mean_first_hit);
    os << buf;
    os << ',' << p.report.fallback_count << "\n";
  }
}

inline void emit_curves(const std::string& path, const std::vector<CurvePoint>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  emit_curves(os, history);
}

}  // namespace dwsl

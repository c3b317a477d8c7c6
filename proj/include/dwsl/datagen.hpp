#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dwsl/mdp.hpp"
#include "dwsl/rng.hpp"

namespace dwsl {

// One episode of the behavior policy: states has length T+1, actions length T,
// and states[t+1] = f(states[t], actions[t]) under the generating MdpSpec.
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  int horizon() const { return static_cast<int>(actions.size()); }
  bool operator==(const Trajectory&) const = default;
};

struct DatasetHeader {
  int format_version = 1;
  std::string env_id;
  int horizon = 0;
  int num_trajectories = 0;
  std::string behavior;
  std::uint64_t seed = 0;
  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Trajectory> trajectories;
  bool operator==(const Dataset&) const = default;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// Behavior policies

enum class BehaviorKind { kRandom, kNoisyExpert, kMixture };

struct BehaviorSpec {
  BehaviorKind kind = BehaviorKind::kRandom;
  double eps = 0.0;  // probability of a uniform action when off goal
  double rho = 0.0;  // fraction of episodes rolled with uniform actions

  static BehaviorSpec random() { return {BehaviorKind::kRandom, 0.0, 0.0}; }
  static BehaviorSpec noisy_expert(double eps) {
    if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("eps must be in [0,1]");
    return {BehaviorKind::kNoisyExpert, eps, 0.0};
  }
  static BehaviorSpec mixture(double rho, double eps) {
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("rho must be in [0,1]");
    if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("eps must be in [0,1]");
    return {BehaviorKind::kMixture, eps, rho};
  }
};

inline std::string format_behavior(const BehaviorSpec& b) {
  std::ostringstream os;
  switch (b.kind) {
    case BehaviorKind::kRandom: os << "random"; break;
    case BehaviorKind::kNoisyExpert: os << "noisy_expert:" << b.eps; break;
    case BehaviorKind::kMixture: os << "mixture:" << b.rho << "," << b.eps; break;
  }
  return os.str();
}

// Accepts "random", "noisy_expert:<eps>", "mixture:<rho>,<eps>".
inline BehaviorSpec parse_behavior(const std::string& text) {
  if (text == "random") return BehaviorSpec::random();
  if (text.rfind("noisy_expert:", 0) == 0)
    return BehaviorSpec::noisy_expert(std::stod(text.substr(13)));
  if (text.rfind("mixture:", 0) == 0) {
    const std::string args = text.substr(8);
    const auto comma = args.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("mixture needs rho and eps: " + text);
    return BehaviorSpec::mixture(std::stod(args.substr(0, comma)),
                                 std::stod(args.substr(comma + 1)));
  }
  throw std::invalid_argument("unknown behavior: " + text);
}

// Goal-conditioned action law of the scripted behaviors. The noisy expert
// takes the stationary action with probability one once the goal is achieved;
// off goal it takes the BFS-optimal action (ties broken by lowest action id)
// with probability 1-eps and a uniform action otherwise. A mixture behaves as
// the eps-uniform mixture of the random and noisy-expert laws.
class BehaviorPolicy {
 public:
  BehaviorPolicy(const MdpSpec& spec, BehaviorSpec behavior)
      : spec_(&spec), behavior_(behavior), distances_(spec.goal_count) {
    for (int g = 0; g < spec.goal_count; ++g) distances_[g] = distance_map(spec, g);
  }

  const BehaviorSpec& behavior() const { return behavior_; }

  // Action distribution of a noisy-expert episode commanded toward `goal`.
  std::vector<double> expert_action_probs(int s, int goal) const {
    check_state(*spec_, s);
    check_goal(*spec_, goal);
    const int acts = spec_->num_actions;
    std::vector<double> p(acts, 0.0);
    if (spec_->phi(s) == goal) {
      p[stationary_action(*spec_, s)] = 1.0;
      return p;
    }
    const auto& dist = goal_distances(goal);
    int best_a = 0;
    long best = std::numeric_limits<long>::max();
    for (int a = 0; a < acts; ++a) {
      const int n = spec_->f(s, a);
      const long d = dist[n] < 0 ? std::numeric_limits<long>::max() - 1 : dist[n];
      if (d < best) {
        best = d;
        best_a = a;
      }
    }
    for (int a = 0; a < acts; ++a) p[a] = behavior_.eps / acts;
    p[best_a] += 1.0 - behavior_.eps;
    return p;
  }

  // Mean action law over episode types; this is the analytic policy the
  // verification oracles consume.
  std::vector<double> action_probs(int s, int goal) const {
    const int acts = spec_->num_actions;
    if (behavior_.kind == BehaviorKind::kRandom)
      return std::vector<double>(acts, 1.0 / acts);
    std::vector<double> p = expert_action_probs(s, goal);
    if (behavior_.kind == BehaviorKind::kMixture) {
      for (double& v : p) v = behavior_.rho / acts + (1.0 - behavior_.rho) * v;
    }
    return p;
  }

  int sample(int s, int goal, bool random_episode, Rng& rng) const {
    if (random_episode || behavior_.kind == BehaviorKind::kRandom)
      return rng.uniform_int(spec_->num_actions);
    const std::vector<double> p = expert_action_probs(s, goal);
    return rng.categorical(p);
  }

  const std::vector<int>& goal_distances(int goal) const { return distances_[goal]; }

 private:
  const MdpSpec* spec_;
  BehaviorSpec behavior_;
  std::vector<std::vector<int>> distances_;  // steps-to-goal per goal id
};

inline BehaviorPolicy make_behavior_policy(const MdpSpec& spec, const BehaviorSpec& b) {
  return BehaviorPolicy(spec, b);
}

// Whether the analytic law stays at an achieved goal forever. This is the
// precondition of the distance-to-return change of variables.
inline bool is_goal_persistent(const BehaviorSpec& b) {
  return b.kind == BehaviorKind::kNoisyExpert;
}

// Mixtures mark a fixed fraction rho of episodes as uniform-random; the first
// round(rho * num_traj) episode indices are the random ones.
inline int num_random_episodes(const BehaviorSpec& b, int num_traj) {
  if (b.kind != BehaviorKind::kMixture) return b.kind == BehaviorKind::kRandom ? num_traj : 0;
  return static_cast<int>(std::llround(b.rho * num_traj));
}

// ---------------------------------------------------------------------------
// Collection

// Rolls `num_traj` episodes of exactly spec.horizon steps. Each episode owns
// the seeded stream Rng(seed + episode index); the start state is uniform
// over start_states and the commanded goal uniform over goals reachable from
// it. Commanded goals steer collection only and are not stored. For mixtures,
// the first round(rho * num_traj) episodes are rolled with uniform actions.
// If commanded_returns is non-null it receives, per episode, the count of
// steps whose next state achieved the commanded goal.
inline Dataset collect_dataset(const MdpSpec& spec, const BehaviorPolicy& policy,
                               int num_traj, std::uint64_t seed,
                               std::vector<int>* commanded_returns = nullptr) {
  if (num_traj < 1) throw std::invalid_argument("num_traj must be >= 1");
  Dataset out;
  out.header.env_id = spec.env_id;
  out.header.horizon = spec.horizon;
  out.header.num_trajectories = num_traj;
  out.header.behavior = format_behavior(policy.behavior());
  out.header.seed = seed;
  if (commanded_returns) commanded_returns->clear();

  const int num_random = policy.behavior().kind == BehaviorKind::kMixture
                             ? num_random_episodes(policy.behavior(), num_traj)
                             : 0;
  for (int e = 0; e < num_traj; ++e) {
    Rng rng(seed + static_cast<std::uint64_t>(e));
    const bool random_episode = e < num_random;
    int s = spec.start_states[rng.uniform_int(static_cast<int>(spec.start_states.size()))];
    std::vector<int> reachable;
    for (int g = 0; g < spec.goal_count; ++g)
      if (policy.goal_distances(g)[s] >= 0) reachable.push_back(g);
    if (reachable.empty()) throw std::logic_error("no reachable goal from start state");
    const int goal = reachable[rng.uniform_int(static_cast<int>(reachable.size()))];

    Trajectory traj;
    traj.states.push_back(s);
    int achieved = 0;
    for (int t = 0; t < spec.horizon; ++t) {
      const int a = policy.sample(s, goal, random_episode, rng);
      s = spec.f(s, a);
      traj.actions.push_back(a);
      traj.states.push_back(s);
      if (spec.phi(s) == goal) ++achieved;
    }
    if (commanded_returns) commanded_returns->push_back(achieved);
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Return statistics

struct ReturnStats {
  double mean = 0.0;
  double median = 0.0;
  double p75 = 0.0;
  double p90 = 0.0;
};

inline ReturnStats summarize_returns(std::vector<double> returns) {
  if (returns.empty()) throw std::invalid_argument("empty return list");
  ReturnStats stats;
  for (double r : returns) stats.mean += r;
  stats.mean /= static_cast<double>(returns.size());
  std::sort(returns.begin(), returns.end());
  auto nearest_rank = [&](double pct) {
    const std::size_t n = returns.size();
    std::size_t idx = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
    if (idx > 0) --idx;
    return returns[std::min(idx, n - 1)];
  };
  stats.median = nearest_rank(50.0);
  stats.p75 = nearest_rank(75.0);
  stats.p90 = nearest_rank(90.0);
  return stats;
}

// Per-trajectory return against `goal`: the count of steps t whose next state
// achieves the goal.
inline ReturnStats dataset_stats(const Dataset& data, const MdpSpec& spec, int goal) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  check_goal(spec, goal);
  std::vector<double> returns;
  for (const Trajectory& traj : data.trajectories) {
    int r = 0;
    for (std::size_t t = 1; t < traj.states.size(); ++t)
      if (spec.phi(traj.states[t]) == goal) ++r;
    returns.push_back(r);
  }
  return summarize_returns(std::move(returns));
}

// ---------------------------------------------------------------------------
// File format
//
// UTF-8 text; line 1 is the header record, lines 2..N+1 hold one trajectory
// each as "s0 a0 s1 a1 ... a(T-1) sT" in decimal.

inline void write_dataset(std::ostream& os, const Dataset& data) {
  const DatasetHeader& h = data.header;
  os << "dwsl-dataset " << h.format_version << " env=" << h.env_id
     << " horizon=" << h.horizon << " trajectories=" << h.num_trajectories
     << " behavior=" << h.behavior << " seed=" << h.seed << "\n";
  for (const Trajectory& traj : data.trajectories) {
    for (std::size_t t = 0; t < traj.actions.size(); ++t)
      os << traj.states[t] << ' ' << traj.actions[t] << ' ';
    os << traj.states.back() << "\n";
  }
}

inline void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_dataset(os, data);
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("missing header record", 1);
  std::istringstream hs(line);
  std::string magic;
  Dataset data;
  DatasetHeader& h = data.header;
  hs >> magic >> h.format_version;
  if (magic != "dwsl-dataset") throw FormatError("not a dwsl dataset file", 1);
  if (h.format_version != 1)
    throw FormatError("unsupported format version " + std::to_string(h.format_version), 1);
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw FormatError("malformed header field: " + kv, 1);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "env") h.env_id = value;
    else if (key == "horizon") h.horizon = std::stoi(value);
    else if (key == "trajectories") h.num_trajectories = std::stoi(value);
    else if (key == "behavior") h.behavior = value;
    else if (key == "seed") h.seed = std::stoull(value);
    else throw FormatError("unknown header field: " + key, 1);
  }
  MdpSpec spec;
  try {
    spec = make_env(h.env_id);
  } catch (const std::invalid_argument&) {
    throw FormatError("env not in registry: " + h.env_id, 1);
  }
  if (h.horizon < 1) throw FormatError("missing or invalid horizon", 1);

  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Trajectory traj;
    int value;
    std::vector<int> tokens;
    while (ls >> value) tokens.push_back(value);
    if (!ls.eof()) throw FormatError("non-integer token", line_no);
    if (tokens.size() != static_cast<std::size_t>(2 * h.horizon + 1))
      throw FormatError("trajectory record has wrong length", line_no);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i % 2 == 0) traj.states.push_back(tokens[i]);
      else traj.actions.push_back(tokens[i]);
    }
    for (int t = 0; t < h.horizon; ++t) {
      if (traj.states[t] < 0 || traj.states[t] >= spec.num_states ||
          traj.actions[t] < 0 || traj.actions[t] >= spec.num_actions)
        throw FormatError("state or action out of range", line_no);
      if (spec.f(traj.states[t], traj.actions[t]) != traj.states[t + 1])
        throw FormatError("trajectory does not replay under the env dynamics", line_no);
    }
    data.trajectories.push_back(std::move(traj));
  }
  if (static_cast<int>(data.trajectories.size()) != h.num_trajectories)
    throw FormatError("trajectory count does not match header", line_no + 1);
  return data;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return read_dataset(is);
}

}  // namespace dwsl

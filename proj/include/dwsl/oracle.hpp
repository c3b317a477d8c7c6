#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dwsl/datagen.hpp"
#include "dwsl/distance.hpp"
#include "dwsl/math.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/policy.hpp"
#include "dwsl/relabel.hpp"

namespace dwsl {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class EnumerationCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Relabeled behavior

// Tabular goal-conditioned policy pi_r(a|s,g) with a support mask. Carries
// both empirical estimates and analytic generating policies.
struct TabularBehavior {
  int num_states = 0;
  int num_actions = 0;
  int goal_count = 0;
  std::vector<double> probs;         // [s][g][a]
  std::vector<std::uint8_t> mask;    // [s][g]

  std::span<const double> row(int s, int g) const {
    return {probs.data() +
                (static_cast<std::size_t>(s) * goal_count + g) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
  std::span<double> mutable_row(int s, int g) {
    return {probs.data() +
                (static_cast<std::size_t>(s) * goal_count + g) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
  bool supported(int s, int g) const {
    return mask[static_cast<std::size_t>(s) * goal_count + g] != 0;
  }

  static TabularBehavior empty(const MdpSpec& spec) {
    TabularBehavior b;
    b.num_states = spec.num_states;
    b.num_actions = spec.num_actions;
    b.goal_count = spec.goal_count;
    b.probs.assign(static_cast<std::size_t>(spec.num_states) * spec.goal_count *
                       spec.num_actions,
                   0.0);
    b.mask.assign(static_cast<std::size_t>(spec.num_states) * spec.goal_count, 0);
    return b;
  }
};

// pi_r(a|s,g) as normalized sampler-law-weighted counts of the action taken
// at s in pairs relabeled with g.
inline TabularBehavior estimate_behavior(const Dataset& data, const MdpSpec& spec,
                                         const BinningConfig& cfg = {1, 1}) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  TabularBehavior b = TabularBehavior::empty(spec);
  const std::size_t num_traj = data.trajectories.size();
  for (const RelabeledSample& sample : enumerate_all_pairs(data, spec, cfg)) {
    auto row = b.mutable_row(sample.s, sample.goal);
    row[sample.a] += sampler_law_weight(sample, data.header.horizon, num_traj);
    b.mask[static_cast<std::size_t>(sample.s) * spec.goal_count + sample.goal] = 1;
  }
  for (int s = 0; s < spec.num_states; ++s)
    for (int g = 0; g < spec.goal_count; ++g)
      if (b.supported(s, g)) {
        auto row = b.mutable_row(s, g);
        double total = 0.0;
        for (double v : row) total += v;
        for (double& v : row) v /= total;
      }
  return b;
}

// The exact generating law of a scripted behavior, total on all (s, g).
inline TabularBehavior analytic_behavior(const MdpSpec& spec, const BehaviorSpec& kind) {
  BehaviorPolicy policy(spec, kind);
  TabularBehavior b = TabularBehavior::empty(spec);
  for (int s = 0; s < spec.num_states; ++s)
    for (int g = 0; g < spec.goal_count; ++g) {
      const std::vector<double> p = policy.action_probs(s, g);
      auto row = b.mutable_row(s, g);
      for (int a = 0; a < spec.num_actions; ++a) row[a] = p[a];
      b.mask[static_cast<std::size_t>(s) * spec.goal_count + g] = 1;
    }
  return b;
}

// Goal-agnostic empirical behavior pi_b(a|s) replicated across goals. This is
// what a dynamic-programming learner can stitch over.
inline TabularBehavior marginal_behavior(const Dataset& data, const MdpSpec& spec) {
  if (data.trajectories.empty()) throw std::invalid_argument("empty dataset");
  std::vector<double> counts(static_cast<std::size_t>(spec.num_states) * spec.num_actions,
                             0.0);
  for (const Trajectory& traj : data.trajectories)
    for (std::size_t t = 0; t < traj.actions.size(); ++t)
      counts[static_cast<std::size_t>(traj.states[t]) * spec.num_actions +
             traj.actions[t]] += 1.0;
  TabularBehavior b = TabularBehavior::empty(spec);
  for (int s = 0; s < spec.num_states; ++s) {
    double total = 0.0;
    for (int a = 0; a < spec.num_actions; ++a)
      total += counts[static_cast<std::size_t>(s) * spec.num_actions + a];
    if (total == 0.0) continue;
    for (int g = 0; g < spec.goal_count; ++g) {
      auto row = b.mutable_row(s, g);
      for (int a = 0; a < spec.num_actions; ++a)
        row[a] = counts[static_cast<std::size_t>(s) * spec.num_actions + a] / total;
      b.mask[static_cast<std::size_t>(s) * spec.goal_count + g] = 1;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// KL-constrained soft value iteration
//
// Fixed point of
//   Q(s,a,g) = r(s,a,g) + gamma V(f(s,a), g)
//   V(s,g)   = alpha log E_{a ~ pi_r}[ exp(Q(s,a,g)/alpha) ]
// with the sparse reward r = -1{phi(s') != g}. horizon >= 1 runs the
// finite-horizon backward recursion from V_horizon = 0 and stores every time
// slice; horizon = 0 iterates to the stationary fixed point (residual 1e-12),
// which for gamma = 1 exists when pi_r eventually reaches and holds the goal.
// Entries whose backup passes through an unsupported pi_r row are NaN.

struct SoftValueTable {
  double alpha = 1.0;
  double gamma = 1.0;
  int horizon = 0;  // 0 = stationary
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> goals;       // evaluated goals
  std::vector<int> goal_slot;   // goal id -> index in `goals`, -1 if absent
  std::vector<double> v;        // [t][s][slot], t in [0, max(horizon,0)]
  std::vector<double> q;        // [t][s][a][slot], t in [0, max(horizon,1)-1]

  int slots() const { return static_cast<int>(goals.size()); }
  int time_slices_v() const { return horizon == 0 ? 1 : horizon + 1; }
  int time_slices_q() const { return horizon == 0 ? 1 : horizon; }

  double v_at(int t, int s, int g) const {
    const int slot = goal_slot[g];
    if (slot < 0) throw std::invalid_argument("goal not evaluated");
    return v[(static_cast<std::size_t>(t) * num_states + s) * slots() + slot];
  }
  double q_at(int t, int s, int a, int g) const {
    const int slot = goal_slot[g];
    if (slot < 0) throw std::invalid_argument("goal not evaluated");
    return q[((static_cast<std::size_t>(t) * num_states + s) * num_actions + a) * slots() +
             slot];
  }
  double adv_at(int t, int s, int a, int g) const {
    return q_at(t, s, a, g) - v_at(t, s, g);
  }
};

namespace detail {

// One backup V_out(s) from V_in over next states, for a single goal.
// Returns NaN where pi_r is unsupported or a contributing next value is NaN.
inline void soft_backup(const MdpSpec& spec, const TabularBehavior& pi_r, int g,
                        double alpha, double gamma, const std::vector<double>& v_in,
                        std::vector<double>* v_out, std::vector<double>* q_out) {
  std::vector<double> terms;
  for (int s = 0; s < spec.num_states; ++s) {
    if (!pi_r.supported(s, g)) {
      (*v_out)[s] = kNaN;
      if (q_out)
        for (int a = 0; a < spec.num_actions; ++a)
          (*q_out)[static_cast<std::size_t>(s) * spec.num_actions + a] = kNaN;
      continue;
    }
    const auto row = pi_r.row(s, g);
    terms.clear();
    bool defined = true;
    for (int a = 0; a < spec.num_actions; ++a) {
      const int sn = spec.f(s, a);
      const double r = spec.phi(sn) == g ? 0.0 : -1.0;
      const double qv = r + gamma * v_in[sn];
      if (q_out)
        (*q_out)[static_cast<std::size_t>(s) * spec.num_actions + a] = qv;
      if (row[a] > 0.0) {
        if (std::isnan(qv)) defined = false;
        terms.push_back(std::log(row[a]) + qv / alpha);
      }
    }
    (*v_out)[s] = defined ? alpha * log_sum_exp(terms) : kNaN;
  }
}

}  // namespace detail

inline SoftValueTable soft_value_iteration(const MdpSpec& spec, const TabularBehavior& pi_r,
                                           double alpha, double gamma, int horizon,
                                           std::vector<int> goals = {},
                                           double residual_tol = 1e-13,
                                           long max_iters = 1000000) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("gamma must be in (0,1]");
  if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
  SoftValueTable table;
  table.alpha = alpha;
  table.gamma = gamma;
  table.horizon = horizon;
  table.num_states = spec.num_states;
  table.num_actions = spec.num_actions;
  if (goals.empty())
    for (int g = 0; g < spec.goal_count; ++g) goals.push_back(g);
  table.goals = goals;
  table.goal_slot.assign(spec.goal_count, -1);
  for (int i = 0; i < static_cast<int>(goals.size()); ++i) table.goal_slot[goals[i]] = i;

  const int slots = table.slots();
  table.v.assign(static_cast<std::size_t>(table.time_slices_v()) * spec.num_states * slots,
                 0.0);
  table.q.assign(static_cast<std::size_t>(table.time_slices_q()) * spec.num_states *
                     spec.num_actions * slots,
                 0.0);

  std::vector<double> v_in(spec.num_states), v_out(spec.num_states),
      q_buf(static_cast<std::size_t>(spec.num_states) * spec.num_actions);
  for (int slot = 0; slot < slots; ++slot) {
    const int g = goals[slot];
    if (horizon >= 1) {
      // Backward recursion; slice t = horizon already holds zeros.
      std::fill(v_in.begin(), v_in.end(), 0.0);
      for (int t = horizon - 1; t >= 0; --t) {
        detail::soft_backup(spec, pi_r, g, alpha, gamma, v_in, &v_out, &q_buf);
        for (int s = 0; s < spec.num_states; ++s) {
          table.v[(static_cast<std::size_t>(t) * spec.num_states + s) * slots + slot] =
              v_out[s];
          for (int a = 0; a < spec.num_actions; ++a)
            table.q[((static_cast<std::size_t>(t) * spec.num_states + s) *
                         spec.num_actions +
                     a) *
                        slots +
                    slot] = q_buf[static_cast<std::size_t>(s) * spec.num_actions + a];
        }
        v_in = v_out;
      }
    } else {
      std::fill(v_in.begin(), v_in.end(), 0.0);
      double residual = std::numeric_limits<double>::infinity();
      for (long it = 0; it < max_iters; ++it) {
        detail::soft_backup(spec, pi_r, g, alpha, gamma, v_in, &v_out, &q_buf);
        residual = 0.0;
        for (int s = 0; s < spec.num_states; ++s) {
          if (std::isnan(v_out[s]) && std::isnan(v_in[s])) continue;
          residual = std::max(residual, std::abs(v_out[s] - v_in[s]));
        }
        v_in = v_out;
        if (residual <= residual_tol) break;
      }
      if (!(residual <= residual_tol))
        throw SolverError("soft value iteration did not converge", residual);
      for (int s = 0; s < spec.num_states; ++s) {
        table.v[static_cast<std::size_t>(s) * slots + slot] = v_in[s];
        for (int a = 0; a < spec.num_actions; ++a)
          table.q[(static_cast<std::size_t>(s) * spec.num_actions + a) * slots + slot] =
              q_buf[static_cast<std::size_t>(s) * spec.num_actions + a];
      }
    }
  }
  return table;
}

// Largest violation of the fixed-point equations over defined entries; the
// invariant check on a computed table. Both equations are checked: the
// Q-to-next-V linkage and the soft backup of Q into V.
inline double max_fixed_point_residual(const SoftValueTable& table, const MdpSpec& spec,
                                       const TabularBehavior& pi_r) {
  double worst = 0.0;
  std::vector<double> terms;
  for (int t = 0; t < table.time_slices_q(); ++t)
    for (int slot = 0; slot < table.slots(); ++slot) {
      const int g = table.goals[slot];
      // For the stationary table the next slice is the slice itself.
      const int t_next = table.horizon == 0 ? 0 : t + 1;
      for (int s = 0; s < spec.num_states; ++s) {
        if (!pi_r.supported(s, g)) continue;
        const auto row = pi_r.row(s, g);
        terms.clear();
        bool defined = true;
        for (int a = 0; a < spec.num_actions; ++a) {
          const int sn = spec.f(s, a);
          const double qv = table.q_at(t, s, a, g);
          const double v_next = table.v_at(t_next, sn, g);
          if (!std::isnan(qv) && !std::isnan(v_next)) {
            const double r = spec.phi(sn) == g ? 0.0 : -1.0;
            worst = std::max(worst, std::abs(qv - (r + table.gamma * v_next)));
          }
          if (row[a] > 0.0) {
            if (std::isnan(qv)) defined = false;
            terms.push_back(std::log(row[a]) + qv / table.alpha);
          }
        }
        if (!defined || std::isnan(table.v_at(t, s, g))) continue;
        worst = std::max(worst, std::abs(table.alpha * log_sum_exp(terms) -
                                         table.v_at(t, s, g)));
      }
    }
  return worst;
}

// ---------------------------------------------------------------------------
// Empirical soft values
//
//   alpha log E_{pi_r}[ exp( (sum_t gamma^t r_t) / alpha ) ]
//
// For gamma = 1 this enumerates every pi_r-supported action sequence of the
// given horizon (error if the tree exceeds the cap). For gamma < 1 the
// expectation is taken over the first H = ceil(log(eps (1-gamma))/log gamma)
// steps with eps = 1e-10; on a deterministic MDP the time-indexed product DP
// below sums exactly the same truncated trajectory tree.

inline int effective_horizon(double gamma, double eps = 1e-10) {
  return static_cast<int>(std::ceil(std::log(eps * (1.0 - gamma)) / std::log(gamma)));
}

inline double empirical_soft_value(const MdpSpec& spec, const TabularBehavior& pi_r, int s,
                                   int g, double alpha, double gamma, int horizon,
                                   long long cap = 4000000) {
  check_state(spec, s);
  check_goal(spec, g);
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (gamma == 1.0) {
    if (horizon < 1) throw std::invalid_argument("finite-horizon form needs horizon >= 1");
    double paths = 1.0;
    for (int t = 0; t < horizon; ++t) {
      paths *= spec.num_actions;
      if (paths > static_cast<double>(cap))
        throw EnumerationCapError("trajectory enumeration exceeds cap at horizon " +
                                  std::to_string(horizon));
    }
    // Returns are integers in [-horizon, 0]; the terms p * exp(ret/alpha) are
    // summed directly with compensation, which keeps the grouping identity
    // with the hit-time route tight to machine precision.
    std::vector<double> exp_ret(horizon + 1);
    for (int r = 0; r <= horizon; ++r) exp_ret[r] = std::exp(-r / alpha);
    double sum = 0.0, comp = 0.0;
    bool undefined = false;
    auto add_term = [&](double term) {
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    };
    // Depth-first over action sequences with nonzero probability.
    auto recurse = [&](auto&& self, int state, int t, double p, int neg_ret) -> void {
      if (t == horizon) {
        add_term(p * exp_ret[neg_ret]);
        return;
      }
      if (!pi_r.supported(state, g)) {
        undefined = true;
        return;
      }
      const auto row = pi_r.row(state, g);
      for (int a = 0; a < spec.num_actions; ++a) {
        if (row[a] <= 0.0) continue;
        const int sn = spec.f(state, a);
        self(self, sn, t + 1, p * row[a], neg_ret + (spec.phi(sn) == g ? 0 : 1));
      }
    };
    recurse(recurse, s, 0, 1.0, 0);
    if (undefined) return kNaN;
    return alpha * std::log(sum);
  }

  const int trunc = effective_horizon(gamma);
  std::vector<double> lw(spec.num_states, 0.0), next(spec.num_states, 0.0);
  std::vector<double> terms;
  for (int t = trunc - 1; t >= 0; --t) {
    const double scale = std::pow(gamma, t) / alpha;
    for (int st = 0; st < spec.num_states; ++st) {
      if (!pi_r.supported(st, g)) {
        next[st] = kNaN;
        continue;
      }
      const auto row = pi_r.row(st, g);
      terms.clear();
      bool defined = true;
      for (int a = 0; a < spec.num_actions; ++a) {
        if (row[a] <= 0.0) continue;
        const int sn = spec.f(st, a);
        const double r = spec.phi(sn) == g ? 0.0 : -1.0;
        if (std::isnan(lw[sn])) defined = false;
        terms.push_back(std::log(row[a]) + r * scale + lw[sn]);
      }
      next[st] = defined ? log_sum_exp(terms) : kNaN;
    }
    std::swap(lw, next);
  }
  return alpha * lw[s];
}

// ---------------------------------------------------------------------------
// Hit-time distributions and the distance-side soft value

// First-hit-time law of pi_r(.|., g) from a start state: p[k-1] is the
// probability that the k-th step first reaches a state achieving g; `never`
// is the residual mass after max_steps. Mass is absorbed on arrival.
struct HitTimeDistribution {
  std::vector<double> p;
  double never = 0.0;
};

inline HitTimeDistribution hit_time_distribution(const MdpSpec& spec,
                                                 const TabularBehavior& pi_r, int s, int g,
                                                 int max_steps) {
  check_state(spec, s);
  check_goal(spec, g);
  HitTimeDistribution out;
  out.p.assign(max_steps, 0.0);
  std::vector<double> occ(spec.num_states, 0.0), next(spec.num_states);
  occ[s] = 1.0;
  for (int k = 1; k <= max_steps; ++k) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int st = 0; st < spec.num_states; ++st) {
      if (occ[st] == 0.0) continue;
      if (!pi_r.supported(st, g))
        throw std::invalid_argument("hit-time law hit an unsupported pi_r row");
      const auto row = pi_r.row(st, g);
      for (int a = 0; a < spec.num_actions; ++a)
        if (row[a] > 0.0) next[spec.f(st, a)] += occ[st] * row[a];
    }
    double hit = 0.0;
    for (int st = 0; st < spec.num_states; ++st)
      if (spec.phi(st) == g) {
        hit += next[st];
        next[st] = 0.0;
      }
    out.p[k - 1] = hit;
    std::swap(occ, next);
  }
  for (double m : occ) out.never += m;
  return out;
}

// alpha log E_{k ~ p}[ exp(R_k / alpha) ] with R_k the discounted return of
// reaching the goal after k steps and holding it. Bin b of a unit-step
// distribution stands for k = b + 1.
inline double distance_soft_value(const CategoricalDistance& p_r, double alpha,
                                  double gamma) {
  std::vector<double> terms;
  for (int b = 0; b < p_r.num_bins(); ++b)
    if (p_r.probs[b] > 0.0)
      terms.push_back(std::log(p_r.probs[b]) + distance_to_return(b + 1, gamma) / alpha);
  if (terms.empty()) throw std::invalid_argument("empty distance distribution");
  return alpha * log_sum_exp(terms);
}

// Same value from a truncated hit-time law. Trajectories that never reach the
// goal within `truncation_horizon` steps earn the all-minus-one return of
// that horizon, which is exactly their truncated empirical return. For
// gamma = 1 the terms are summed directly (compensated) so the grouping
// identity with trajectory enumeration holds to machine precision.
inline double distance_soft_value(const HitTimeDistribution& p_r, double alpha,
                                  double gamma, int truncation_horizon) {
  if (gamma == 1.0) {
    double sum = 0.0, comp = 0.0;
    auto add_term = [&](double term) {
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    };
    bool any = false;
    for (std::size_t i = 0; i < p_r.p.size(); ++i)
      if (p_r.p[i] > 0.0) {
        add_term(p_r.p[i] * std::exp(distance_to_return(static_cast<int>(i) + 1, 1.0,
                                                        truncation_horizon) / alpha));
        any = true;
      }
    if (p_r.never > 0.0) {
      add_term(p_r.never * std::exp(-truncation_horizon / alpha));
      any = true;
    }
    if (!any) throw std::invalid_argument("empty distance distribution");
    return alpha * std::log(sum);
  }
  std::vector<double> terms;
  for (std::size_t i = 0; i < p_r.p.size(); ++i)
    if (p_r.p[i] > 0.0)
      terms.push_back(std::log(p_r.p[i]) +
                      distance_to_return(static_cast<int>(i) + 1, gamma,
                                         truncation_horizon) / alpha);
  if (p_r.never > 0.0) {
    const double r_never =
        -(1.0 - std::pow(gamma, truncation_horizon)) / (1.0 - gamma);
    terms.push_back(std::log(p_r.never) + r_never / alpha);
  }
  if (terms.empty()) throw std::invalid_argument("empty distance distribution");
  return alpha * log_sum_exp(terms);
}

// Tabular distance model holding the exact hit-time law of pi_r for every
// (s, g), at unit binning with `max_steps` bins. The tail mass beyond
// max_steps is dropped and the law renormalized; callers pick max_steps large
// enough for the tail to be negligible.
inline DistanceModel exact_distance_model(const MdpSpec& spec, const TabularBehavior& pi_r,
                                          int max_steps) {
  DistanceModel model;
  model.backend = DistanceBackend::kTabular;
  model.binning.n_step = 1;
  model.binning.num_bins = max_steps;
  model.env_id = spec.env_id;
  model.goal_count = spec.goal_count;
  for (int s = 0; s < spec.num_states; ++s)
    for (int g = 0; g < spec.goal_count; ++g) {
      if (!pi_r.supported(s, g)) continue;
      const HitTimeDistribution law = hit_time_distribution(spec, pi_r, s, g, max_steps);
      const double total = 1.0 - law.never;
      if (!(total > 0.0)) continue;  // goal unreachable under pi_r
      CategoricalDistance cell;
      cell.probs.resize(max_steps);
      cell.support.resize(max_steps);
      for (int b = 0; b < max_steps; ++b) {
        cell.probs[b] = law.p[b] / total;
        cell.support[b] = law.p[b] > 0.0 ? 1 : 0;
      }
      model.table[pair_key(s, g, spec.goal_count)] = std::move(cell);
    }
  return model;
}

// ---------------------------------------------------------------------------
// Optimal KL-constrained policy extraction

// pi*(a|s,g) proportional to pi_r(a|s,g) exp(A*(s,a,g)/alpha), per time slice
// of the value table.
struct KlPolicy {
  int horizon = 0;  // 0 = stationary
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> goals;
  std::vector<int> goal_slot;
  std::vector<double> probs;            // [t][s][a][slot]
  std::vector<std::uint8_t> defined;    // [t][s][slot]

  int slots() const { return static_cast<int>(goals.size()); }
  int time_slices() const { return horizon == 0 ? 1 : horizon; }
  bool is_defined(int t, int s, int g) const {
    const int slot = goal_slot[g];
    if (slot < 0) return false;
    return defined[(static_cast<std::size_t>(t) * num_states + s) * slots() + slot] != 0;
  }
  std::vector<double> probs_at(int t, int s, int g) const {
    const int slot = goal_slot[g];
    if (slot < 0 || !is_defined(t, s, g))
      throw std::invalid_argument("kl policy undefined at (t, s, g)");
    std::vector<double> out(num_actions);
    for (int a = 0; a < num_actions; ++a)
      out[a] = probs[((static_cast<std::size_t>(t) * num_states + s) * num_actions + a) *
                         slots() +
                     slot];
    return out;
  }
};

inline KlPolicy optimal_kl_policy(const SoftValueTable& table, const TabularBehavior& pi_r) {
  KlPolicy out;
  out.horizon = table.horizon;
  out.num_states = table.num_states;
  out.num_actions = table.num_actions;
  out.goals = table.goals;
  out.goal_slot = table.goal_slot;
  const int slots = out.slots();
  out.probs.assign(static_cast<std::size_t>(out.time_slices()) * table.num_states *
                       table.num_actions * slots,
                   0.0);
  out.defined.assign(
      static_cast<std::size_t>(out.time_slices()) * table.num_states * slots, 0);
  bool any_defined = false;
  for (int t = 0; t < out.time_slices(); ++t)
    for (int slot = 0; slot < slots; ++slot) {
      const int g = out.goals[slot];
      for (int s = 0; s < table.num_states; ++s) {
        if (!pi_r.supported(s, g)) continue;
        const auto row = pi_r.row(s, g);
        std::vector<double> w(table.num_actions, 0.0);
        double total = 0.0;
        bool ok = true;
        for (int a = 0; a < table.num_actions; ++a) {
          if (row[a] <= 0.0) continue;
          const double adv = table.adv_at(t, s, a, g);
          if (std::isnan(adv)) {
            ok = false;
            break;
          }
          w[a] = row[a] * std::exp(adv / table.alpha);
          total += w[a];
        }
        if (!ok || !(total > 0.0)) continue;
        for (int a = 0; a < table.num_actions; ++a)
          out.probs[((static_cast<std::size_t>(t) * table.num_states + s) *
                         table.num_actions +
                     a) *
                        slots +
                    slot] = w[a] / total;
        out.defined[(static_cast<std::size_t>(t) * table.num_states + s) * slots + slot] = 1;
        any_defined = true;
      }
    }
  if (!any_defined)
    throw std::runtime_error("kl policy has no defined entry (support mismatch)");
  return out;
}

// One time slice as a tabular PolicyModel, for rollouts.
inline PolicyModel to_policy_model(const KlPolicy& kl, const MdpSpec& spec, int t = 0) {
  PolicyModel policy;
  policy.backend = PolicyBackend::kTabular;
  policy.env_id = spec.env_id;
  policy.num_actions = spec.num_actions;
  policy.goal_count = spec.goal_count;
  for (int slot = 0; slot < kl.slots(); ++slot) {
    const int g = kl.goals[slot];
    for (int s = 0; s < spec.num_states; ++s)
      if (kl.is_defined(t, s, g))
        policy.table[pair_key(s, g, spec.goal_count)] = kl.probs_at(t, s, g);
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Dataset goal-persistence gate

// True when every trajectory, once it first achieves the goal of its final
// state, keeps achieving it to the end. Datasets from the stay-at-goal noisy
// expert satisfy this; random behavior generically does not.
inline bool dataset_goal_persistent(const Dataset& data, const MdpSpec& spec) {
  for (const Trajectory& traj : data.trajectories) {
    const int g_final = spec.phi(traj.states.back());
    std::size_t first = 0;
    while (first < traj.states.size() && spec.phi(traj.states[first]) != g_final) ++first;
    for (std::size_t t = first; t < traj.states.size(); ++t)
      if (spec.phi(traj.states[t]) != g_final) return false;
  }
  return true;
}

}  // namespace dwsl

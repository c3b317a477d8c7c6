#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dwsl/oracle.hpp"

namespace dwsl {

// One record of the verification report.
struct CheckRecord {
  std::string check_id;
  std::string params;
  double residual = 0.0;
  double tolerance = 0.0;
  std::string status;  // pass | fail | skip
  std::string note;
};

struct VerifyReport {
  std::vector<CheckRecord> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckRecord& c) { return c.status != "fail"; });
  }
  int failures() const {
    return static_cast<int>(std::count_if(checks.begin(), checks.end(),
                                          [](const CheckRecord& c) {
                                            return c.status == "fail";
                                          }));
  }
};

// Line-delimited records: check_id, params, residual, tolerance, status.
inline void write_report(std::ostream& os, const VerifyReport& report) {
  for (const CheckRecord& c : report.checks) {
    os << "check=" << c.check_id << " params=\"" << c.params << "\" residual=";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", c.residual);
    os << buf << " tolerance=" << c.tolerance << " status=" << c.status;
    if (!c.note.empty()) os << " note=\"" << c.note << "\"";
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Policy extraction exactness
//
// With exact (hit-time-law) distance distributions, unit binning, no clipping
// and matched temperatures, tabular weighted imitation reproduces
//   pi*(a|s,g) proportional to pi_hat_r(a|s,g) exp(A*(s,a,g)/alpha)
// where pi_hat_r is the empirical relabeled behavior of the dataset and A*
// comes from the stationary gamma=1 soft values of the generating policy.
// `alpha_raw` is the KL temperature in step units; the matching
// normalized-space temperature is alpha_raw / max_steps.

struct ExtractionResult {
  double max_tv = 0.0;
  long pairs = 0;
};

inline ExtractionResult extraction_check(const MdpSpec& spec, const Dataset& data,
                                         const TabularBehavior& pi_gen, double alpha_raw,
                                         int max_steps = 400) {
  const DistanceModel exact = exact_distance_model(spec, pi_gen, max_steps);
  const SoftValueTable values =
      soft_value_iteration(spec, pi_gen, alpha_raw, 1.0, /*horizon=*/0);
  const TabularBehavior empirical = estimate_behavior(data, spec);

  TrainConfig cfg;
  cfg.alpha = alpha_raw / max_steps;
  cfg.beta = cfg.alpha;
  cfg.clip = std::numeric_limits<double>::infinity();
  const PolicyModel learned = train_dwsl(data, spec, exact, cfg, PolicyBackend::kTabular);

  ExtractionResult result;
  for (const auto& [key, learned_row] : learned.table) {
    const int s = static_cast<int>(key / spec.goal_count);
    const int g = static_cast<int>(key % spec.goal_count);
    const auto row = empirical.row(s, g);
    std::vector<double> target(spec.num_actions, 0.0);
    double total = 0.0;
    for (int a = 0; a < spec.num_actions; ++a) {
      if (row[a] <= 0.0) continue;
      const int sn = spec.f(s, a);
      const double r = spec.phi(sn) == g ? 0.0 : -1.0;
      const double adv = r + values.v_at(0, sn, g) - values.v_at(0, s, g);
      target[a] = row[a] * std::exp(adv / alpha_raw);
      total += target[a];
    }
    double tv = 0.0;
    for (int a = 0; a < spec.num_actions; ++a)
      tv += std::abs(learned_row[a] - target[a] / total);
    result.max_tv = std::max(result.max_tv, 0.5 * tv);
    ++result.pairs;
  }
  return result;
}

// ---------------------------------------------------------------------------
// The bundled suite

struct VerifyOptions {
  std::string suite = "all";  // all | fixed_point | finite | prop1 | corollary | extraction
  long long enumeration_cap = 4000000;
  int extraction_max_steps = 400;
  double extraction_alpha_raw = 1.0;
};

inline bool suite_selected(const VerifyOptions& opt, const std::string& name) {
  return opt.suite == "all" || opt.suite == name;
}

// Runs the theory checks against the dataset's generating behavior (parsed
// from its header) and appends one record per check. Infeasible or
// ungated checks are reported as skipped, never as passing.
inline VerifyReport verify_suite(const MdpSpec& spec, const Dataset& data,
                                 const std::vector<double>& alpha_grid,
                                 const std::vector<double>& gamma_grid,
                                 const VerifyOptions& opt = {}) {
  VerifyReport report;
  std::optional<BehaviorSpec> behavior;
  try {
    behavior = parse_behavior(data.header.behavior);
  } catch (const std::invalid_argument&) {
    behavior.reset();
  }
  auto skip_all = [&](const std::string& id, const std::string& why) {
    report.checks.push_back({id, "", 0.0, 0.0, "skip", why});
  };
  if (!behavior) {
    if (suite_selected(opt, "fixed_point")) skip_all("fixed_point_residual", "behavior descriptor not analytic");
    if (suite_selected(opt, "finite")) skip_all("finite_horizon_equality", "behavior descriptor not analytic");
    if (suite_selected(opt, "prop1")) skip_all("prop1_bound", "behavior descriptor not analytic");
    if (suite_selected(opt, "corollary")) skip_all("corollary_change_of_variables", "behavior descriptor not analytic");
    if (suite_selected(opt, "extraction")) skip_all("policy_extraction", "behavior descriptor not analytic");
    return report;
  }
  const TabularBehavior pi_r = analytic_behavior(spec, *behavior);

  // Fixed-point residual of the solved tables (both regimes).
  if (suite_selected(opt, "fixed_point")) {
    for (double alpha : alpha_grid) {
      const SoftValueTable finite =
          soft_value_iteration(spec, pi_r, alpha, 1.0, std::min(spec.horizon, 8));
      std::ostringstream ps;
      ps << "alpha=" << alpha << " gamma=1 horizon=" << std::min(spec.horizon, 8);
      const double r1 = max_fixed_point_residual(finite, spec, pi_r);
      report.checks.push_back({"fixed_point_residual", ps.str(), r1, 1e-12,
                               r1 <= 1e-12 ? "pass" : "fail", ""});
    }
    for (double gamma : gamma_grid) {
      if (gamma >= 1.0) continue;
      const SoftValueTable inf_table =
          soft_value_iteration(spec, pi_r, 1.0, gamma, /*horizon=*/0);
      std::ostringstream ps;
      ps << "alpha=1 gamma=" << gamma << " stationary";
      const double r2 = max_fixed_point_residual(inf_table, spec, pi_r);
      report.checks.push_back({"fixed_point_residual", ps.str(), r2, 1e-12,
                               r2 <= 1e-12 ? "pass" : "fail", ""});
    }
  }

  // Finite-horizon equality of backward recursion and trajectory enumeration.
  if (suite_selected(opt, "finite")) {
    long long paths = 1;
    int horizon = 0;
    while (horizon < spec.horizon && paths * spec.num_actions <= opt.enumeration_cap) {
      paths *= spec.num_actions;
      ++horizon;
    }
    horizon = std::min(horizon, 6);
    if (horizon < 2) {
      skip_all("finite_horizon_equality", "enumeration infeasible under cap");
    } else {
      for (double alpha : alpha_grid) {
        const SoftValueTable table = soft_value_iteration(spec, pi_r, alpha, 1.0, horizon);
        double worst = 0.0;
        for (int s = 0; s < spec.num_states; ++s)
          for (int g = 0; g < spec.goal_count; ++g) {
            const double lhs = table.v_at(0, s, g);
            if (std::isnan(lhs)) continue;
            const double rhs = empirical_soft_value(spec, pi_r, s, g, alpha, 1.0, horizon,
                                                    opt.enumeration_cap);
            worst = std::max(worst, std::abs(lhs - rhs));
          }
        std::ostringstream ps;
        ps << "alpha=" << alpha << " horizon=" << horizon;
        report.checks.push_back({"finite_horizon_equality", ps.str(), worst, 1e-9,
                                 worst <= 1e-9 ? "pass" : "fail", ""});
      }
    }
  }

  // Infinite-horizon lower bound, and its gap shrinking toward gamma = 1.
  if (suite_selected(opt, "prop1")) {
    std::vector<double> gammas;
    for (double g : gamma_grid)
      if (g < 1.0) gammas.push_back(g);
    std::sort(gammas.begin(), gammas.end());
    std::vector<double> mean_gaps;
    for (double gamma : gammas) {
      const SoftValueTable table = soft_value_iteration(spec, pi_r, 1.0, gamma, 0);
      double worst = 0.0, gap_sum = 0.0;
      long count = 0;
      for (int s = 0; s < spec.num_states; ++s)
        for (int g = 0; g < spec.goal_count; ++g) {
          const double lhs = table.v_at(0, s, g);
          if (std::isnan(lhs)) continue;
          const double rhs = empirical_soft_value(spec, pi_r, s, g, 1.0, gamma, 0,
                                                  opt.enumeration_cap);
          worst = std::max(worst, rhs - lhs);
          gap_sum += lhs - rhs;
          ++count;
        }
      mean_gaps.push_back(gap_sum / static_cast<double>(count));
      std::ostringstream ps;
      ps << "gamma=" << gamma << " alpha=1 truncation=" << effective_horizon(gamma);
      report.checks.push_back({"prop1_bound", ps.str(), worst, 1e-9,
                               worst <= 1e-9 ? "pass" : "fail", "residual = max(RHS - V*)"});
    }
    if (mean_gaps.size() >= 2) {
      double worst_increase = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i + 1 < mean_gaps.size(); ++i)
        worst_increase = std::max(worst_increase, mean_gaps[i + 1] - mean_gaps[i]);
      std::ostringstream ps;
      ps << "gammas=";
      for (double g : gammas) ps << g << ",";
      report.checks.push_back({"prop1_gap_monotone", ps.str(), worst_increase, 0.0,
                               worst_increase <= 0.0 ? "pass" : "fail",
                               "residual = max increase of the mean gap"});
    }
  }

  // Change of variables between hit-time laws and empirical returns.
  if (suite_selected(opt, "corollary")) {
    if (!is_goal_persistent(*behavior)) {
      skip_all("corollary_change_of_variables",
               "behavior " + data.header.behavior + " is not goal persistent");
    } else if (!dataset_goal_persistent(data, spec)) {
      skip_all("corollary_change_of_variables", "dataset violates goal persistence");
    } else {
      const TabularBehavior empirical = estimate_behavior(data, spec);
      std::vector<double> gammas = gamma_grid;
      gammas.push_back(1.0);
      for (double alpha : alpha_grid) {
        for (double gamma : gammas) {
          const int horizon = gamma == 1.0 ? data.header.horizon : effective_horizon(gamma);
          long long paths = 1;
          bool feasible = true;
          if (gamma == 1.0) {
            for (int t = 0; t < horizon && feasible; ++t) {
              paths *= spec.num_actions;
              if (paths > opt.enumeration_cap) feasible = false;
            }
          }
          std::ostringstream ps;
          ps << "alpha=" << alpha << " gamma=" << gamma;
          if (!feasible) {
            report.checks.push_back({"corollary_change_of_variables", ps.str(), 0.0, 0.0,
                                     "skip", "enumeration infeasible under cap"});
            continue;
          }
          double worst = 0.0;
          for (int s = 0; s < spec.num_states; ++s)
            for (int g = 0; g < spec.goal_count; ++g) {
              if (!empirical.supported(s, g)) continue;
              const HitTimeDistribution law =
                  hit_time_distribution(spec, pi_r, s, g, horizon);
              const double lhs = distance_soft_value(law, alpha, gamma, horizon);
              const double rhs = empirical_soft_value(spec, pi_r, s, g, alpha, gamma,
                                                      horizon, opt.enumeration_cap);
              worst = std::max(worst, std::abs(lhs - rhs));
            }
          report.checks.push_back({"corollary_change_of_variables", ps.str(), worst, 1e-12,
                                   worst <= 1e-12 ? "pass" : "fail", ""});
        }
      }
    }
  }

  // Optimal policy recovery from exact distance distributions.
  if (suite_selected(opt, "extraction")) {
    if (!is_goal_persistent(*behavior)) {
      skip_all("policy_extraction",
               "behavior " + data.header.behavior + " is not goal persistent");
    } else {
      const ExtractionResult res = extraction_check(spec, data, pi_r,
                                                    opt.extraction_alpha_raw,
                                                    opt.extraction_max_steps);
      std::ostringstream ps;
      ps << "alpha_raw=" << opt.extraction_alpha_raw << " pairs=" << res.pairs;
      report.checks.push_back({"policy_extraction", ps.str(), res.max_tv, 1e-6,
                               res.max_tv <= 1e-6 ? "pass" : "fail",
                               "residual = max total variation"});
    }
  }
  return report;
}

}  // namespace dwsl

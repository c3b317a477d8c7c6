#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "dwsl/oracle.hpp"
#include "dwsl/verify.hpp"

using namespace dwsl;

namespace {

Dataset collect(const MdpSpec& spec, const BehaviorSpec& behavior, int traj,
                std::uint64_t seed) {
  const BehaviorPolicy policy(spec, behavior);
  return collect_dataset(spec, policy, traj, seed);
}

double behavior_tv(const TabularBehavior& a, const TabularBehavior& b, int s, int g) {
  const auto ra = a.row(s, g), rb = b.row(s, g);
  double tv = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) tv += std::abs(ra[i] - rb[i]);
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("estimate_behavior") {
  const MdpSpec chain = make_env("chain-5").with_horizon(8);

  SECTION("deterministic behavior gives point-mass rows") {
    const Dataset data = collect(chain, BehaviorSpec::noisy_expert(0.0), 20, 3);
    const TabularBehavior pi = estimate_behavior(data, chain);
    for (int s = 0; s < chain.num_states; ++s)
      for (int g = 0; g < chain.goal_count; ++g) {
        if (!pi.supported(s, g)) continue;
        double mx = 0.0;
        for (double v : pi.row(s, g)) mx = std::max(mx, v);
        CHECK(mx == 1.0);
      }
  }
  SECTION("large samples from the same law agree") {
    const Dataset a = collect(chain, BehaviorSpec::random(), 3000, 11);
    const Dataset b = collect(chain, BehaviorSpec::random(), 3000, 7777);
    const TabularBehavior pa = estimate_behavior(a, chain);
    const TabularBehavior pb = estimate_behavior(b, chain);
    for (int s = 0; s < chain.num_states; ++s)
      for (int g = 0; g < chain.goal_count; ++g) {
        if (!pa.supported(s, g) || !pb.supported(s, g)) continue;
        CHECK(behavior_tv(pa, pb, s, g) <= 0.05);
      }
  }
  SECTION("unobserved pairs are masked") {
    Dataset data;
    data.header = {1, chain.env_id, 2, 1, "manual", 0};
    data.trajectories.push_back({{0, 1, 2}, {1, 1}});
    const TabularBehavior pi = estimate_behavior(data, chain);
    CHECK(pi.supported(0, chain.phi(1)));
    CHECK_FALSE(pi.supported(4, chain.phi(0)));
  }
}

TEST_CASE("analytic behavior matches the generating law") {
  const MdpSpec chain = make_env("chain-5");
  const TabularBehavior pi = analytic_behavior(chain, BehaviorSpec::noisy_expert(0.3));
  CHECK(pi.row(0, 4)[1] == Catch::Approx(0.7 + 0.3 / 3));
  CHECK(pi.row(2, 2)[2] == 1.0);  // stationary at the goal
  for (int s = 0; s < chain.num_states; ++s)
    for (int g = 0; g < chain.goal_count; ++g) CHECK(pi.supported(s, g));
}

TEST_CASE("soft value iteration") {
  SECTION("single-action MDP reproduces the deterministic return") {
    // 0 -> 1 -> 2 -> 2 under the only action.
    MdpSpec line;
    line.env_id = "line";
    line.num_states = 3;
    line.num_actions = 1;
    line.horizon = 4;
    line.goal_count = 3;
    line.transition = {1, 2, 2};
    line.goal_of = {0, 1, 2};
    line.start_states = {0};
    TabularBehavior pi = TabularBehavior::empty(line);
    for (int s = 0; s < 3; ++s)
      for (int g = 0; g < 3; ++g) {
        pi.mutable_row(s, g)[0] = 1.0;
        pi.mask[s * 3 + g] = 1;
      }
    const SoftValueTable table = soft_value_iteration(line, pi, 1.0, 1.0, 4);
    // From state 0 toward goal 2: rewards -1, 0, 0, 0.
    CHECK(table.v_at(0, 0, 2) == Catch::Approx(-1.0).margin(1e-12));
    // Toward goal 1: achieved after step 1, left forever: 0, -1, -1, -1.
    CHECK(table.v_at(0, 0, 1) == Catch::Approx(-3.0).margin(1e-12));
  }

  SECTION("chain-3 horizon-2 value matches a hand enumeration of 9 paths") {
    const MdpSpec chain = make_env("chain-3");
    const TabularBehavior uniform = analytic_behavior(chain, BehaviorSpec::random());
    const double alpha = 1.0;
    const int goal = chain.phi(2);
    const SoftValueTable table = soft_value_iteration(chain, uniform, alpha, 1.0, 2);
    double acc = 0.0;
    for (int a0 = 0; a0 < 3; ++a0)
      for (int a1 = 0; a1 < 3; ++a1) {
        const int s1 = chain.f(0, a0);
        const int s2 = chain.f(s1, a1);
        const double ret = (chain.phi(s1) == goal ? 0 : -1) +
                           (chain.phi(s2) == goal ? 0 : -1);
        acc += std::exp(ret / alpha) / 9.0;
      }
    CHECK(table.v_at(0, 0, goal) == Catch::Approx(alpha * std::log(acc)).margin(1e-12));
  }

  SECTION("alpha -> 0 approaches the best supported return") {
    const MdpSpec chain = make_env("chain-3");
    const TabularBehavior uniform = analytic_behavior(chain, BehaviorSpec::random());
    const SoftValueTable table = soft_value_iteration(chain, uniform, 1e-4, 1.0, 2);
    // Best return from 0 toward phi(2) within 2 steps: -1 (right, right).
    CHECK(table.v_at(0, 0, chain.phi(2)) == Catch::Approx(-1.0).margin(1e-3));
  }

  SECTION("stationary discounted table satisfies the fixed point to 1e-12") {
    const MdpSpec chain = make_env("chain-5");
    const TabularBehavior pi = analytic_behavior(chain, BehaviorSpec::noisy_expert(0.2));
    const SoftValueTable table = soft_value_iteration(chain, pi, 1.0, 0.9, 0);
    CHECK(max_fixed_point_residual(table, chain, pi) <= 1e-12);
  }

  SECTION("undiscounted iteration without absorption fails loudly") {
    const MdpSpec chain = make_env("chain-3");
    // Plain uniform behavior never holds the goal; the gamma=1 fixed point
    // diverges and the solver reports its residual.
    const TabularBehavior uniform = analytic_behavior(chain, BehaviorSpec::random());
    CHECK_THROWS_AS(soft_value_iteration(chain, uniform, 1.0, 1.0, 0, {}, 1e-12, 400),
                    SolverError);
  }
}

TEST_CASE("empirical soft value") {
  const MdpSpec chain = make_env("chain-3");
  const TabularBehavior uniform = analytic_behavior(chain, BehaviorSpec::random());

  SECTION("point-mass behavior gives the single-trajectory return") {
    const TabularBehavior expert =
        analytic_behavior(chain, BehaviorSpec::noisy_expert(0.0));
    // From 0 toward phi(2), horizon 3: rewards -1, 0, 0.
    CHECK(empirical_soft_value(chain, expert, 0, chain.phi(2), 1.0, 1.0, 3) ==
          Catch::Approx(-1.0).margin(1e-12));
  }
  SECTION("finite-horizon equality with the backward recursion") {
    for (double alpha : {0.5, 1.0, 2.0}) {
      const SoftValueTable table = soft_value_iteration(chain, uniform, alpha, 1.0, 4);
      for (int s = 0; s < chain.num_states; ++s)
        for (int g = 0; g < chain.goal_count; ++g) {
          const double rhs = empirical_soft_value(chain, uniform, s, g, alpha, 1.0, 4);
          CHECK(std::abs(table.v_at(0, s, g) - rhs) <= 1e-9);
        }
    }
  }
  SECTION("discounted truncation stays below the fixed point") {
    const SoftValueTable table = soft_value_iteration(chain, uniform, 1.0, 0.9, 0);
    for (int s = 0; s < chain.num_states; ++s)
      for (int g = 0; g < chain.goal_count; ++g) {
        const double rhs = empirical_soft_value(chain, uniform, s, g, 1.0, 0.9, 0);
        CHECK(table.v_at(0, s, g) >= rhs - 1e-9);
      }
  }
  SECTION("enumeration past the cap is an explicit error") {
    CHECK_THROWS_AS(empirical_soft_value(chain, uniform, 0, 0, 1.0, 1.0, 30, 1000),
                    EnumerationCapError);
  }
}

TEST_CASE("hit-time law and the distance-side value") {
  const MdpSpec chain = make_env("chain-5");

  SECTION("point mass at k=1 maps to value zero") {
    CategoricalDistance p;
    p.probs = {1.0, 0.0};
    p.support = {1, 0};
    CHECK(distance_soft_value(p, 1.0, 0.9) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("two-point law evaluates the return mixture directly") {
    CategoricalDistance p;
    p.probs = {0.5, 0.0, 0.5};  // k = 1 and k = 3
    p.support = {1, 0, 1};
    const double expected = std::log(0.5 + 0.5 * std::exp(-1.9));
    CHECK(distance_soft_value(p, 1.0, 0.9) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(distance_soft_value(p, 1.0, 0.9) ==
          Catch::Approx(-0.55375969981).margin(1e-9));
  }
  SECTION("hit-time law of the stay-at-goal expert is the bfs distance") {
    const TabularBehavior expert =
        analytic_behavior(chain, BehaviorSpec::noisy_expert(0.0));
    const HitTimeDistribution law =
        hit_time_distribution(chain, expert, 0, chain.phi(3), 20);
    CHECK(law.p[2] == 1.0);  // three steps
    CHECK(law.never == 0.0);
  }
  SECTION("change of variables against trajectory enumeration") {
    const TabularBehavior pi = analytic_behavior(chain, BehaviorSpec::noisy_expert(0.4));
    const int horizon = 6;
    for (double alpha : {0.5, 1.0}) {
      for (int s = 0; s < chain.num_states; ++s)
        for (int g = 0; g < chain.goal_count; ++g) {
          const HitTimeDistribution law = hit_time_distribution(chain, pi, s, g, horizon);
          const double lhs = distance_soft_value(law, alpha, 1.0, horizon);
          const double rhs = empirical_soft_value(chain, pi, s, g, alpha, 1.0, horizon);
          CHECK(std::abs(lhs - rhs) <= 1e-12);
        }
    }
  }
}

TEST_CASE("optimal kl policy") {
  const MdpSpec chain = make_env("chain-5");
  const TabularBehavior pi = analytic_behavior(chain, BehaviorSpec::noisy_expert(0.5));

  SECTION("alpha to infinity recovers the behavior") {
    const SoftValueTable table = soft_value_iteration(chain, pi, 1e6, 1.0, 0);
    const KlPolicy kl = optimal_kl_policy(table, pi);
    for (int s = 0; s < chain.num_states; ++s)
      for (int g = 0; g < chain.goal_count; ++g) {
        const auto probs = kl.probs_at(0, s, g);
        const auto row = pi.row(s, g);
        for (int a = 0; a < chain.num_actions; ++a)
          CHECK(probs[a] == Catch::Approx(row[a]).margin(1e-5));
      }
  }
  SECTION("alpha to zero goes greedy within the support") {
    const SoftValueTable table = soft_value_iteration(chain, pi, 0.01, 1.0, 0);
    const KlPolicy kl = optimal_kl_policy(table, pi);
    // From 0 toward phi(4) the right action dominates.
    CHECK(kl.probs_at(0, 0, chain.phi(4))[1] >= 0.999);
  }
  SECTION("an all-masked behavior has no defined entry") {
    const SoftValueTable table = soft_value_iteration(chain, pi, 1.0, 0.9, 0);
    TabularBehavior zero = TabularBehavior::empty(chain);
    CHECK_THROWS(optimal_kl_policy(table, zero));
  }
}

TEST_CASE("policy extraction exactness at desk scale") {
  const MdpSpec chain = make_env("chain-3").with_horizon(6);
  const BehaviorSpec behavior = BehaviorSpec::noisy_expert(0.35);
  const Dataset data = collect(chain, behavior, 25, 1);
  const ExtractionResult result =
      extraction_check(chain, data, analytic_behavior(chain, behavior), 1.0, 300);
  CHECK(result.pairs > 0);
  CHECK(result.max_tv <= 1e-6);
}

TEST_CASE("expectation distance is the first moment of the behavior value") {
  // Under a goal-persistent behavior the plain (non-soft) value is the mean
  // of the per-hit-time returns: V(s,g) = E_k[-(k-1)] = 1 - E[k]. The linear
  // backward recursion below never touches the distance machinery.
  const MdpSpec chain = make_env("chain-5");
  const TabularBehavior pi = analytic_behavior(chain, BehaviorSpec::noisy_expert(0.3));
  const int horizon = 400;
  const DistanceModel exact = exact_distance_model(chain, pi, horizon);
  for (int g = 0; g < chain.goal_count; ++g) {
    std::vector<double> value(chain.num_states, 0.0), next(chain.num_states);
    for (int t = 0; t < horizon; ++t) {
      for (int s = 0; s < chain.num_states; ++s) {
        const auto row = pi.row(s, g);
        double acc = 0.0;
        for (int a = 0; a < chain.num_actions; ++a) {
          const int sn = chain.f(s, a);
          acc += row[a] * ((chain.phi(sn) == g ? 0.0 : -1.0) + value[sn]);
        }
        next[s] = acc;
      }
      std::swap(value, next);
    }
    for (int s = 0; s < chain.num_states; ++s) {
      const double mean_k =
          *expectation_distance(exact, chain, s, g) * exact.binning.num_bins;
      CHECK(std::abs(value[s] - (1.0 - mean_k)) <= 1e-9);
    }
  }
}

TEST_CASE("a failing check fails the report") {
  VerifyReport report;
  report.checks.push_back({"x", "", 1.0, 0.5, "fail", ""});
  report.checks.push_back({"y", "", 0.0, 0.5, "pass", ""});
  CHECK_FALSE(report.all_passed());
  CHECK(report.failures() == 1);
  report.checks[0].status = "skip";
  CHECK(report.all_passed());
}

TEST_CASE("goal-persistence gate") {
  const MdpSpec chain = make_env("chain-5").with_horizon(8);
  CHECK(dataset_goal_persistent(collect(chain, BehaviorSpec::noisy_expert(0.3), 30, 2),
                                chain));
  CHECK_FALSE(
      dataset_goal_persistent(collect(chain, BehaviorSpec::random(), 30, 2), chain));
}

TEST_CASE("verify suite") {
  const MdpSpec chain = make_env("chain-5").with_horizon(8);

  SECTION("goal-persistent dataset passes every check") {
    const Dataset data = collect(chain, BehaviorSpec::noisy_expert(0.2), 30, 1);
    VerifyOptions options;
    options.extraction_max_steps = 300;
    const VerifyReport report = verify_suite(chain, data, {1.0}, {0.5, 0.9}, options);
    CHECK(report.all_passed());
    bool saw_corollary = false, saw_extraction = false;
    for (const CheckRecord& c : report.checks) {
      INFO(c.check_id << " " << c.params << " residual " << c.residual);
      CHECK(c.status == "pass");
      saw_corollary |= c.check_id == "corollary_change_of_variables";
      saw_extraction |= c.check_id == "policy_extraction";
    }
    CHECK(saw_corollary);
    CHECK(saw_extraction);
  }
  SECTION("random-behavior dataset skips the persistence-gated checks") {
    const Dataset data = collect(chain, BehaviorSpec::random(), 30, 1);
    const VerifyReport report = verify_suite(chain, data, {1.0}, {0.9});
    CHECK(report.all_passed());
    int skips = 0;
    for (const CheckRecord& c : report.checks)
      if (c.status == "skip") {
        ++skips;
        CHECK_FALSE(c.note.empty());
      }
    CHECK(skips >= 2);
  }
  SECTION("reports serialize one record per line") {
    const Dataset data = collect(chain, BehaviorSpec::noisy_expert(0.2), 10, 1);
    VerifyOptions options;
    options.suite = "finite";
    const VerifyReport report = verify_suite(chain, data, {1.0}, {}, options);
    std::ostringstream os;
    write_report(os, report);
    std::istringstream is(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
      ++lines;
      CHECK(line.find("check=") == 0);
      CHECK(line.find("status=") != std::string::npos);
      CHECK(line.find("residual=") != std::string::npos);
      CHECK(line.find("tolerance=") != std::string::npos);
    }
    CHECK(lines == static_cast<int>(report.checks.size()));
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "dwsl/eval.hpp"
#include "dwsl/oracle.hpp"

using namespace dwsl;

namespace {

// Tabular policy that plays the analytic law of a scripted behavior.
PolicyModel policy_from_behavior(const MdpSpec& spec, const BehaviorSpec& behavior) {
  const TabularBehavior law = analytic_behavior(spec, behavior);
  PolicyModel policy;
  policy.backend = PolicyBackend::kTabular;
  policy.env_id = spec.env_id;
  policy.num_actions = spec.num_actions;
  policy.goal_count = spec.goal_count;
  for (int s = 0; s < spec.num_states; ++s)
    for (int g = 0; g < spec.goal_count; ++g) {
      const auto row = law.row(s, g);
      policy.table[pair_key(s, g, spec.goal_count)] =
          std::vector<double>(row.begin(), row.end());
    }
  return policy;
}

}  // namespace

TEST_CASE("sample_eval_goal") {
  const MdpSpec chain = make_env("chain-5");

  SECTION("dataset_states draws goals from the dataset's phi image") {
    Dataset data;
    data.header = {1, chain.env_id, 2, 1, "manual", 0};
    data.trajectories.push_back({{1, 2, 3}, {1, 1}});
    Rng rng(4);
    std::set<int> seen;
    for (int i = 0; i < 200; ++i)
      seen.insert(sample_eval_goal(chain, GoalStrategy::kDatasetStates, rng, &data).second);
    CHECK(seen == std::set<int>{chain.phi(1), chain.phi(2), chain.phi(3)});
  }
  SECTION("all_reachable covers every goal on the chain") {
    Rng rng(4);
    std::set<int> seen;
    for (int i = 0; i < 300; ++i)
      seen.insert(sample_eval_goal(chain, GoalStrategy::kAllReachable, rng).second);
    CHECK(seen.size() == 5);
  }
  SECTION("draws are reproducible per seed") {
    Rng r1(9), r2(9);
    for (int i = 0; i < 50; ++i)
      CHECK(sample_eval_goal(chain, GoalStrategy::kAllReachable, r1) ==
            sample_eval_goal(chain, GoalStrategy::kAllReachable, r2));
  }
  SECTION("dataset_states without a dataset is an error") {
    Rng rng(0);
    CHECK_THROWS_AS(sample_eval_goal(chain, GoalStrategy::kDatasetStates, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("rollout") {
  const MdpSpec chain = make_env("chain-5");
  const PolicyModel expert = policy_from_behavior(chain, BehaviorSpec::noisy_expert(0.0));

  SECTION("an optimal policy hits at the bfs distance and stays") {
    Rng rng(0);
    const int start = 0, goal = chain.phi(3);
    const auto [traj, frag] =
        rollout(chain, expert, start, goal, chain.horizon, ActMode::kGreedy, rng);
    REQUIRE(frag.success);
    CHECK(*frag.first_hit == 3);
    CHECK(frag.steps_at_goal == chain.horizon - 3);
    CHECK(static_cast<int>(traj.actions.size()) == chain.horizon);
  }
  SECTION("a stay-only policy off the goal never succeeds") {
    PolicyModel stay;
    stay.backend = PolicyBackend::kTabular;
    stay.env_id = chain.env_id;
    stay.num_actions = 3;
    stay.goal_count = 5;
    for (int s = 0; s < 5; ++s)
      for (int g = 0; g < 5; ++g) stay.table[pair_key(s, g, 5)] = {0.0, 0.0, 1.0};
    Rng rng(0);
    const auto [traj, frag] = rollout(chain, stay, 1, chain.phi(4), 10, ActMode::kGreedy, rng);
    CHECK_FALSE(frag.success);
    CHECK(frag.steps_at_goal == 0);
  }
  SECTION("stochastic rollouts are reproducible per seed") {
    const PolicyModel noisy = policy_from_behavior(chain, BehaviorSpec::noisy_expert(0.6));
    Rng r1(31), r2(31);
    const auto a = rollout(chain, noisy, 0, 4, 12, ActMode::kSample, r1);
    const auto b = rollout(chain, noisy, 0, 4, 12, ActMode::kSample, r2);
    CHECK(a.first == b.first);
  }
  SECTION("per-episode accounting invariant") {
    const PolicyModel noisy = policy_from_behavior(chain, BehaviorSpec::noisy_expert(0.8));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const auto [traj, frag] = rollout(chain, noisy, 0, 4, 9, ActMode::kSample, rng);
      if (frag.success) CHECK(frag.steps_at_goal + *frag.first_hit <= 9 + 1);
    }
  }
}

TEST_CASE("evaluate") {
  const MdpSpec chain = make_env("chain-5");
  const PolicyModel expert = policy_from_behavior(chain, BehaviorSpec::noisy_expert(0.0));

  SECTION("the optimal policy succeeds everywhere") {
    const EvalReport report =
        evaluate(chain, expert, 100, GoalStrategy::kAllReachable, 5);
    CHECK(report.success_rate == 1.0);
    CHECK(report.fallback_count == 0);
    CHECK(report.mean_steps_at_goal <= chain.horizon);
  }
  SECTION("a random policy on four-rooms trails the optimal one") {
    const MdpSpec rooms = make_env("four-rooms");
    const PolicyModel random_policy = policy_from_behavior(rooms, BehaviorSpec::random());
    const PolicyModel optimal = policy_from_behavior(rooms, BehaviorSpec::noisy_expert(0.0));
    const EvalReport r1 =
        evaluate(rooms, random_policy, 200, GoalStrategy::kAllReachable, 3, nullptr,
                 ActMode::kSample);
    const EvalReport r2 = evaluate(rooms, optimal, 200, GoalStrategy::kAllReachable, 3);
    CHECK(r2.success_rate == 1.0);
    CHECK(r1.success_rate < r2.success_rate);
  }
  SECTION("evaluate is a pure function of its arguments") {
    const PolicyModel noisy = policy_from_behavior(chain, BehaviorSpec::noisy_expert(0.5));
    const EvalReport a =
        evaluate(chain, noisy, 64, GoalStrategy::kAllReachable, 17, nullptr,
                 ActMode::kSample);
    const EvalReport b =
        evaluate(chain, noisy, 64, GoalStrategy::kAllReachable, 17, nullptr,
                 ActMode::kSample);
    CHECK(a.success_rate == b.success_rate);
    CHECK(a.mean_steps_at_goal == b.mean_steps_at_goal);
    CHECK(a.mean_first_hit == b.mean_first_hit);
  }
  SECTION("two seeds agree within binomial noise") {
    const MdpSpec rooms = make_env("four-rooms");
    const PolicyModel noisy = policy_from_behavior(rooms, BehaviorSpec::noisy_expert(0.7));
    const int n = 400;
    const EvalReport a = evaluate(rooms, noisy, n, GoalStrategy::kAllReachable, 100,
                                  nullptr, ActMode::kSample);
    const EvalReport b = evaluate(rooms, noisy, n, GoalStrategy::kAllReachable, 900,
                                  nullptr, ActMode::kSample);
    const double pbar = 0.5 * (a.success_rate + b.success_rate);
    const double sigma = std::sqrt(std::max(pbar * (1 - pbar) * 2.0 / n, 1e-9));
    CHECK(std::abs(a.success_rate - b.success_rate) <= 3 * sigma);
  }
  SECTION("an empty policy falls back on every step") {
    PolicyModel empty;
    empty.backend = PolicyBackend::kTabular;
    empty.env_id = chain.env_id;
    empty.num_actions = 3;
    empty.goal_count = 5;
    const EvalReport report = evaluate(chain, empty, 10, GoalStrategy::kAllReachable, 2);
    CHECK(report.fallback_count == 10L * chain.horizon);
  }
}

TEST_CASE("emit_curves") {
  SECTION("empty history writes only the header") {
    std::ostringstream os;
    emit_curves(os, {});
    CHECK(os.str() == "step,success_rate,mean_steps_at_goal,mean_first_hit,fallback_count\n");
  }
  SECTION("k points write k+1 lines and round-trip to full precision") {
    std::vector<CurvePoint> history;
    for (int i = 0; i < 4; ++i) {
      EvalReport r;
      r.episodes = 10;
      r.success_rate = 1.0 / (i + 3);
      r.mean_steps_at_goal = 17.0 / (i + 1);
      r.mean_first_hit = std::sqrt(2.0 + i);
      r.fallback_count = 3 * i;
      history.push_back({2000L * i, r});
    }
    std::ostringstream os;
    emit_curves(os, history);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) {
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      long step = 0, fallback = 0;
      double sr = 0, steps_at = 0, hit = 0;
      ls >> step >> sr >> steps_at >> hit >> fallback;
      const CurvePoint& p = history[rows];
      CHECK(step == p.step);
      CHECK(sr == p.report.success_rate);
      CHECK(steps_at == p.report.mean_steps_at_goal);
      CHECK(hit == p.report.mean_first_hit);
      CHECK(fallback == p.report.fallback_count);
      ++rows;
    }
    CHECK(rows == 4);
  }
}

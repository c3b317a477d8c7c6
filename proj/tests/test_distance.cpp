#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dwsl/datagen.hpp"
#include "dwsl/distance.hpp"

using namespace dwsl;

namespace {

Dataset one_trajectory(const MdpSpec& spec, std::vector<int> states,
                       std::vector<int> actions) {
  Dataset data;
  data.header = {1, spec.env_id, static_cast<int>(actions.size()), 1, "manual", 0};
  data.trajectories.push_back({std::move(states), std::move(actions)});
  return data;
}

// Exact-rational tabular fit: pair weights 1/(T-i) are accumulated as integer
// numerators over the common denominator lcm(1..T). No floating point until
// the final comparison.
std::map<long long, std::vector<long long>> rational_fit(const Dataset& data,
                                                         const MdpSpec& spec,
                                                         const BinningConfig& cfg) {
  long long denom = 1;
  for (long long d = 1; d <= data.header.horizon; ++d) denom = std::lcm(denom, d);
  std::map<long long, std::vector<long long>> numerators;
  for (const Trajectory& traj : data.trajectories) {
    const int horizon = traj.horizon();
    for (int i = 0; i < horizon; ++i)
      for (int j = i + 1; j <= horizon; ++j) {
        const int g = spec.phi(traj.states[j]);
        auto& cell = numerators[pair_key(traj.states[i], g, spec.goal_count)];
        if (cell.empty()) cell.assign(cfg.num_bins, 0);
        cell[cfg.bin_of(j - i)] += denom / (horizon - i);
      }
  }
  return numerators;
}

}  // namespace

TEST_CASE("tabular fit equals hand-enumerated pair weights") {
  const MdpSpec chain = make_env("chain-5");
  // s0 -> s1 -> s1 (stay): the pairs (0,1) k=1 and (0,2) k=2 share i=0 and
  // split the mass at (s0, phi(s1)) evenly.
  const Dataset data = one_trajectory(chain, {0, 1, 1}, {1, 2});
  const BinningConfig cfg = BinningConfig::for_horizon(2, 1);
  const DistanceModel model = fit_tabular(data, chain, cfg);
  const auto d = model.distribution(chain, 0, chain.phi(1));
  REQUIRE(d.has_value());
  CHECK(d->probs[0] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(d->probs[1] == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("tabular fit matches the exact rational oracle") {
  const MdpSpec chain = make_env("chain-5").with_horizon(8);
  const BehaviorPolicy behavior(chain, BehaviorSpec::mixture(0.5, 0.3));
  const Dataset data = collect_dataset(chain, behavior, 30, 17);
  const BinningConfig cfg = BinningConfig::for_horizon(8, 2);
  const DistanceModel model = fit_tabular(data, chain, cfg);
  const auto oracle = rational_fit(data, chain, cfg);
  REQUIRE(model.table.size() == oracle.size());
  for (const auto& [key, nums] : oracle) {
    const auto it = model.table.find(key);
    REQUIRE(it != model.table.end());
    const long long total = std::accumulate(nums.begin(), nums.end(), 0LL);
    for (int b = 0; b < cfg.num_bins; ++b) {
      const double expected = static_cast<double>(nums[b]) / static_cast<double>(total);
      CHECK(std::abs(it->second.probs[b] - expected) <= 1e-12);
      CHECK((it->second.support[b] != 0) == (nums[b] > 0));
    }
  }
}

TEST_CASE("point support and unsupported pairs") {
  const MdpSpec chain = make_env("chain-5");
  // s=0 reaches phi(3) only ever in exactly 3 steps.
  const Dataset data = one_trajectory(chain, {0, 1, 2, 3}, {1, 1, 1});
  const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
  const DistanceModel model = fit_tabular(data, chain, cfg);
  const auto d = model.distribution(chain, 0, chain.phi(3));
  REQUIRE(d.has_value());
  CHECK(d->probs[2] == 1.0);
  CHECK_FALSE(model.distribution(chain, 3, chain.phi(0)).has_value());
  CHECK_FALSE(logsumexp_distance(model, chain, 3, chain.phi(0), 1.0).has_value());
  CHECK_FALSE(expectation_distance(model, chain, 3, chain.phi(0)).has_value());
}

TEST_CASE("logsumexp distance") {
  const MdpSpec chain = make_env("chain-5");

  SECTION("point mass at bin b gives (b+1)/B for any alpha") {
    const Dataset data = one_trajectory(chain, {0, 1, 2, 3}, {1, 1, 1});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    const DistanceModel model = fit_tabular(data, chain, cfg);
    for (double alpha : {0.01, 1.0, 100.0})
      CHECK(*logsumexp_distance(model, chain, 0, chain.phi(3), alpha) ==
            Catch::Approx(3.0 / 3).epsilon(1e-12));
  }
  SECTION("raw two-point value matches the direct evaluation") {
    // probs {0.5 at k=1, 0.5 at k=3}, unnormalized distances, alpha=1
    const std::vector<double> values = {1.0, 3.0};
    const std::vector<double> probs = {0.5, 0.5};
    CHECK(soft_min(values, probs, 1.0) ==
          Catch::Approx(-std::log(0.5 * std::exp(-1.0) + 0.5 * std::exp(-3.0)))
              .epsilon(1e-12));
    CHECK(soft_min(values, probs, 1.0) == Catch::Approx(1.5662191695).margin(1e-9));
  }
  SECTION("alpha -> 0 approaches the minimum supported distance") {
    const Dataset data = one_trajectory(chain, {0, 1, 1, 1}, {1, 2, 2});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    const DistanceModel model = fit_tabular(data, chain, cfg);
    // (0, phi(1)) has mass 1/3 on each of k = 1, 2, 3.
    const double d = *logsumexp_distance(model, chain, 0, chain.phi(1), 1e-4);
    CHECK(std::abs(d - 1.0 / 3) <= 1e-3);
  }
  SECTION("nondecreasing in alpha and bounded by min-support and mean") {
    const Dataset data = one_trajectory(chain, {0, 1, 1, 1, 1}, {1, 2, 2, 2});
    const BinningConfig cfg = BinningConfig::for_horizon(4, 1);
    const DistanceModel model = fit_tabular(data, chain, cfg);
    const int g = chain.phi(1);
    double prev = 0.0;
    for (double alpha : {1e-3, 0.01, 0.1, 1.0, 10.0}) {
      const double d = *logsumexp_distance(model, chain, 0, g, alpha);
      CHECK(d >= prev);
      prev = d;
      CHECK(d >= 1.0 / 4 - 1e-12);
      CHECK(d <= *expectation_distance(model, chain, 0, g) + 1e-12);
    }
  }
  SECTION("log-space evaluation survives small alpha and many bins") {
    CategoricalDistance cell;
    cell.probs.assign(1000, 0.001);
    cell.support.assign(1000, 1);
    DistanceModel model;
    model.backend = DistanceBackend::kTabular;
    model.binning = {1, 1000};
    model.env_id = "chain-5";
    model.goal_count = 5;
    model.table[pair_key(0, 0, 5)] = cell;
    const double d = *logsumexp_distance(model, chain, 0, 0, 1e-4);
    CHECK(std::isfinite(d));
    // soft-min sits above the minimum by about alpha * ln(1/p_min)
    CHECK(std::abs(d - 1.0 / 1000) <= 1e-4 * std::log(1000.0) + 1e-9);
  }
}

TEST_CASE("expectation distance") {
  const MdpSpec chain = make_env("chain-5");
  // {0.5, 0.5} over bins 0 and 2 with B = 3
  CategoricalDistance cell;
  cell.probs = {0.5, 0.0, 0.5};
  cell.support = {1, 0, 1};
  DistanceModel model;
  model.backend = DistanceBackend::kTabular;
  model.binning = {1, 3};
  model.env_id = "chain-5";
  model.goal_count = 5;
  model.table[pair_key(1, 0, 5)] = cell;
  CHECK(*expectation_distance(model, chain, 1, 0) == Catch::Approx(2.0 / 3));
  // Jensen direction: soft-min never exceeds the mean.
  for (double alpha : {0.1, 1.0, 10.0})
    CHECK(*logsumexp_distance(model, chain, 1, 0, alpha) <= 2.0 / 3 + 1e-12);
}

TEST_CASE("distance to return") {
  CHECK(distance_to_return(1, 0.9) == 0.0);
  CHECK(distance_to_return(3, 0.9) == Catch::Approx(-1.9).epsilon(1e-12));
  CHECK(distance_to_return(1, 1.0, 10) == 0.0);
  CHECK(distance_to_return(5, 1.0, 10) == -4.0);
  CHECK(distance_to_return(50, 1.0, 10) == -10.0);  // capped by the horizon
  CHECK_THROWS_AS(distance_to_return(0, 0.9), std::invalid_argument);
  double prev = 1.0;
  for (int k = 1; k <= 50; ++k) {
    const double r = distance_to_return(k, 0.98);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("classifier training") {
  const MdpSpec chain = make_env("chain-5");
  TrainConfig train;
  train.steps = 1500;
  train.batch = 64;
  train.lr = 3e-3;
  train.seed = 9;
  train.hidden = {32, 32};

  SECTION("a degenerate (s,g,k) pattern is learned to high confidence") {
    const Dataset data = one_trajectory(chain, {0, 1, 2, 2}, {1, 1, 2});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    const DistanceModel model = train_classifier(data, chain, cfg, train);
    // (s=2, g=phi(2)) only ever appears with k = 1.
    const auto d = model.distribution(chain, 2, chain.phi(2));
    REQUIRE(d.has_value());
    CHECK(d->probs[0] >= 0.99);
  }
  SECTION("an untrained classifier is near uniform") {
    const Dataset data = one_trajectory(chain, {0, 1, 2, 2}, {1, 1, 2});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    TrainConfig zero = train;
    zero.steps = 1;
    zero.lr = 0.0;
    const DistanceModel model = train_classifier(data, chain, cfg, zero);
    Rng rng(1);
    const RelabeledSample sample = sample_relabeled(data, chain, cfg, rng);
    const auto logits =
        forward(model.net, state_goal_features(chain, sample.s, sample.goal));
    CHECK(softmax_cross_entropy(logits, sample.bin).loss ==
          Catch::Approx(std::log(3.0)).margin(0.15));
  }
  SECTION("classifier converges to the tabular fit in total variation") {
    const MdpSpec spec = chain.with_horizon(4);
    const BehaviorPolicy behavior(spec, BehaviorSpec::noisy_expert(0.4));
    const Dataset data = collect_dataset(spec, behavior, 10, 3);
    const BinningConfig cfg = BinningConfig::for_horizon(4, 1);
    const DistanceModel tabular = fit_tabular(data, spec, cfg);
    TrainConfig big = train;
    big.steps = 15000;
    big.batch = 128;
    big.lr = 5e-3;
    big.hidden = {64, 64};
    const DistanceModel classifier = train_classifier(data, spec, cfg, big);
    for (const auto& [key, cell] : tabular.table) {
      const int s = static_cast<int>(key / spec.goal_count);
      const int g = static_cast<int>(key % spec.goal_count);
      const auto learned = classifier.distribution(spec, s, g);
      double tv = 0.0;
      for (int b = 0; b < cfg.num_bins; ++b)
        tv += std::abs(cell.probs[b] - learned->probs[b]);
      INFO("pair (" << s << ", " << g << ")");
      CHECK(0.5 * tv <= 0.05);
    }
  }
  SECTION("classification needs at least two bins") {
    const Dataset data = one_trajectory(chain, {0, 1, 2, 2}, {1, 1, 2});
    CHECK_THROWS_AS(train_classifier(data, chain, BinningConfig{3, 1}, train),
                    std::invalid_argument);
  }
}

TEST_CASE("regression training") {
  const MdpSpec grid = make_env("grid-5x5");
  TrainConfig train;
  train.steps = 4000;
  train.batch = 64;
  train.lr = 5e-3;
  train.seed = 4;
  train.hidden = {32, 32};

  SECTION("degenerate target is fit to 1e-3") {
    const MdpSpec chain = make_env("chain-5");
    const Dataset data = one_trajectory(chain, {0, 1, 2, 3}, {1, 1, 1});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    const DistanceModel model =
        train_regression(data, chain, cfg, train, RegressionMode::kMse);
    // (s=2, g=phi(3)) only ever has k = 1, normalized 1/3.
    CHECK(*predicted_distance(model, chain, 2, chain.phi(3)) ==
          Catch::Approx(1.0 / 3).margin(1e-3));
  }
  SECTION("mse fits the mean of a symmetric two-point target") {
    // Two 3-step paths from cell 0 to cell 1, lengths 1 and 3, each pair
    // carrying sampler weight 1/3: the target at (0, phi(1)) is {1, 3} with
    // equal mass. Normalized mean (1/3 + 3/3)/2 = 2/3.
    Dataset data;
    data.header = {1, grid.env_id, 3, 2, "manual", 0};
    data.trajectories.push_back({{0, 1, 2, 3}, {1, 1, 1}});
    data.trajectories.push_back({{0, 5, 6, 1}, {3, 1, 2}});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    const DistanceModel tabular = fit_tabular(data, grid, cfg);
    const auto cell = tabular.distribution(grid, 0, grid.phi(1));
    REQUIRE(cell.has_value());
    CHECK(cell->probs[0] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(cell->probs[2] == Catch::Approx(0.5).epsilon(1e-12));

    TrainConfig longer = train;
    longer.steps = 6000;
    const DistanceModel mse =
        train_regression(data, grid, cfg, longer, RegressionMode::kMse);
    CHECK(*predicted_distance(mse, grid, 0, grid.phi(1)) ==
          Catch::Approx(2.0 / 3).margin(0.03));

    // Expectile tau = 0.9 on negated distances leans toward the minimum; the
    // two-point expectile solves tau w_b (b - m) + (1-tau) w_a (a - m) = 0.
    const DistanceModel expectile =
        train_regression(data, grid, cfg, longer, RegressionMode::kExpectile, 0.9);
    const double tau = 0.9, b = -1.0 / 3, a = -3.0 / 3;
    const double m = (tau * 0.5 * b + (1 - tau) * 0.5 * a) /
                     (tau * 0.5 + (1 - tau) * 0.5);
    const double predicted = *predicted_distance(expectile, grid, 0, grid.phi(1));
    CHECK(predicted == Catch::Approx(-m).margin(0.03));
    CHECK(predicted < 2.0 / 3);  // soft-min direction
  }
  SECTION("expectile tau is validated") {
    const MdpSpec chain = make_env("chain-5");
    const Dataset data = one_trajectory(chain, {0, 1, 2, 3}, {1, 1, 1});
    const BinningConfig cfg = BinningConfig::for_horizon(3, 1);
    CHECK_THROWS_AS(
        train_regression(data, chain, cfg, train, RegressionMode::kExpectile, 0.4),
        std::invalid_argument);
  }
}

TEST_CASE("distance checkpoint round trip") {
  const MdpSpec chain = make_env("chain-5").with_horizon(6);
  const BehaviorPolicy behavior(chain, BehaviorSpec::noisy_expert(0.5));
  const Dataset data = collect_dataset(chain, behavior, 8, 21);
  const BinningConfig cfg = BinningConfig::for_horizon(6, 2);

  SECTION("tabular") {
    const DistanceModel model = fit_tabular(data, chain, cfg);
    std::ostringstream os;
    write_distance_model(os, model);
    std::istringstream is(os.str());
    const DistanceModel back = read_distance_model(is);
    REQUIRE(back.table.size() == model.table.size());
    for (const auto& [key, cell] : model.table) {
      CHECK(back.table.at(key).probs == cell.probs);
      CHECK(back.table.at(key).support == cell.support);
    }
    CHECK(back.binning == model.binning);
  }
  SECTION("mlp") {
    TrainConfig train;
    train.steps = 50;
    train.batch = 16;
    train.hidden = {8};
    const DistanceModel model = train_classifier(data, chain, cfg, train);
    std::ostringstream os;
    write_distance_model(os, model);
    std::istringstream is(os.str());
    const DistanceModel back = read_distance_model(is);
    CHECK(back.net.weights == model.net.weights);
    CHECK(back.backend == model.backend);
  }
}

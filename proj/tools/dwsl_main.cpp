// Command-line surface for the engine: dataset generation, training,
// evaluation, theory verification, and dataset statistics.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dwsl/config.hpp"
#include "dwsl/datagen.hpp"
#include "dwsl/eval.hpp"
#include "dwsl/pipeline.hpp"
#include "dwsl/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw dwsl::ConfigError("empty grid: " + text);
  return out;
}

void print_stats(const std::string& label, const dwsl::ReturnStats& stats) {
  std::printf("%s: mean %.3f median %g p75 %g p90 %g\n", label.c_str(), stats.mean,
              stats.median, stats.p75, stats.p90);
}

int cmd_gen_data(const std::string& env_id, const std::string& behavior_text, int traj,
                 std::uint64_t seed, const std::string& out_path, int horizon) {
  dwsl::MdpSpec spec;
  try {
    spec = dwsl::make_env(env_id);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\nknown environments:\n", e.what());
    for (const auto& fam : dwsl::registered_env_families())
      std::fprintf(stderr, "  %s\n", fam.c_str());
    return kExitUsage;
  }
  if (horizon > 0) spec = spec.with_horizon(horizon);
  const dwsl::BehaviorSpec behavior = dwsl::parse_behavior(behavior_text);
  const dwsl::BehaviorPolicy policy(spec, behavior);
  std::vector<int> commanded_returns;
  const dwsl::Dataset data =
      dwsl::collect_dataset(spec, policy, traj, seed, &commanded_returns);
  dwsl::write_dataset(out_path, data);
  std::printf("wrote %d trajectories of horizon %d to %s\n", traj, spec.horizon,
              out_path.c_str());
  std::vector<double> returns(commanded_returns.begin(), commanded_returns.end());
  print_stats("commanded-goal return", dwsl::summarize_returns(std::move(returns)));
  return kExitOk;
}

int cmd_stats(const std::string& data_path, int goal) {
  const dwsl::Dataset data = dwsl::read_dataset(data_path);
  const dwsl::MdpSpec spec =
      dwsl::make_env(data.header.env_id).with_horizon(data.header.horizon);
  std::printf("env=%s horizon=%d trajectories=%d behavior=%s seed=%llu\n",
              data.header.env_id.c_str(), data.header.horizon,
              data.header.num_trajectories, data.header.behavior.c_str(),
              static_cast<unsigned long long>(data.header.seed));
  if (goal >= 0) {
    print_stats("returns vs goal " + std::to_string(goal),
                dwsl::dataset_stats(data, spec, goal));
    return kExitOk;
  }
  // Default summary: per-trajectory return against the goal each trajectory
  // finally achieved.
  std::vector<double> returns;
  for (const dwsl::Trajectory& traj : data.trajectories) {
    const int g = spec.phi(traj.states.back());
    int r = 0;
    for (std::size_t t = 1; t < traj.states.size(); ++t)
      if (spec.phi(traj.states[t]) == g) ++r;
    returns.push_back(r);
  }
  print_stats("returns vs final achieved goal", dwsl::summarize_returns(std::move(returns)));
  return kExitOk;
}

int cmd_train(const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
  const dwsl::RunConfig cfg = config_path.empty()
                                  ? [&] {
                                      auto kv = overrides;
                                      dwsl::RunConfig c = dwsl::resolve_config(kv);
                                      dwsl::validate_config(c);
                                      return c;
                                    }()
                                  : dwsl::load_config(config_path, overrides);
  const dwsl::TrainOutputs out = dwsl::run_training(cfg);
  std::printf("policy checkpoint: %s\n", out.policy_ckpt.c_str());
  if (!out.distance_ckpt.empty())
    std::printf("distance checkpoint: %s\n", out.distance_ckpt.c_str());
  std::printf("curves: %s\n", out.curve_file.c_str());
  std::printf("final eval: success_rate=%.4f mean_steps_at_goal=%.3f "
              "mean_first_hit=%.3f fallback_count=%ld\n",
              out.final_eval.success_rate, out.final_eval.mean_steps_at_goal,
              out.final_eval.mean_first_hit, out.final_eval.fallback_count);
  if (out.train_report.unsupported_next > 0)
    std::printf("unsupported next-state distance queries during training: %ld\n",
                out.train_report.unsupported_next);
  return kExitOk;
}

int cmd_eval(const std::string& policy_path, const std::string& data_path, int episodes,
             std::uint64_t seed, const std::string& strategy, const std::string& mode,
             int horizon, const std::string& out_path) {
  std::ifstream is(policy_path);
  if (!is) {
    std::fprintf(stderr, "error: missing checkpoint: %s\n", policy_path.c_str());
    return kExitUsage;
  }
  const dwsl::PolicyModel policy = dwsl::read_policy_model(is);
  dwsl::MdpSpec spec = dwsl::make_env(policy.env_id);
  std::optional<dwsl::Dataset> data;
  if (!data_path.empty()) {
    data = dwsl::read_dataset(data_path);
    spec = spec.with_horizon(data->header.horizon);
  }
  if (horizon > 0) spec = spec.with_horizon(horizon);
  const dwsl::GoalStrategy goal_strategy = strategy == "dataset_states"
                                               ? dwsl::GoalStrategy::kDatasetStates
                                               : dwsl::GoalStrategy::kAllReachable;
  const dwsl::ActMode act_mode =
      mode == "sample" ? dwsl::ActMode::kSample : dwsl::ActMode::kGreedy;
  const dwsl::EvalReport report = dwsl::evaluate(
      spec, policy, episodes, goal_strategy, seed, data ? &*data : nullptr, act_mode);
  std::ostringstream record;
  record << "episodes=" << report.episodes << " seed=" << seed << " strategy=" << strategy
         << " mode=" << mode << " env=" << policy.env_id << " horizon=" << spec.horizon
         << " success_rate=" << report.success_rate
         << " mean_steps_at_goal=" << report.mean_steps_at_goal
         << " mean_first_hit=" << report.mean_first_hit
         << " fallback_count=" << report.fallback_count;
  std::printf("%s\n", record.str().c_str());
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << record.str() << "\n";
  }
  return kExitOk;
}

int cmd_verify(const std::string& env_id, const std::string& data_path,
               const std::string& suite, const std::string& alphas,
               const std::string& gammas, int traj, std::uint64_t seed,
               const std::string& out_path) {
  dwsl::MdpSpec spec;
  try {
    spec = dwsl::make_env(env_id);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  dwsl::Dataset data;
  if (!data_path.empty()) {
    data = dwsl::read_dataset(data_path);
    if (data.header.env_id != spec.env_id) {
      std::fprintf(stderr, "error: dataset env %s does not match %s\n",
                   data.header.env_id.c_str(), spec.env_id.c_str());
      return kExitUsage;
    }
    spec = spec.with_horizon(data.header.horizon);
  } else {
    // Self-generated goal-persistent dataset, the default subject of the
    // theory checks.
    const dwsl::BehaviorPolicy policy(spec, dwsl::BehaviorSpec::noisy_expert(0.2));
    data = dwsl::collect_dataset(spec, policy, traj, seed);
  }
  dwsl::VerifyOptions options;
  options.suite = suite;
  const dwsl::VerifyReport report =
      dwsl::verify_suite(spec, data, parse_grid(alphas), parse_grid(gammas), options);
  dwsl::write_report(std::cout, report);
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    dwsl::write_report(os, report);
  }
  return report.all_passed() ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distance-weighted supervised learning engine"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "collect an offline dataset");
  std::string gen_env, gen_behavior = "random", gen_out;
  int gen_traj = 100, gen_horizon = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--env", gen_env, "environment id")->required();
  gen->add_option("--behavior", gen_behavior,
                  "random | noisy_expert:<eps> | mixture:<rho>,<eps>");
  gen->add_option("--traj", gen_traj, "number of trajectories");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--horizon", gen_horizon, "override the env default horizon");
  gen->add_option("--out", gen_out, "output dataset file")->required();

  auto* stats = app.add_subcommand("stats", "dataset return statistics");
  std::string stats_data;
  int stats_goal = -1;
  stats->add_option("--data", stats_data, "dataset file")->required();
  stats->add_option("--goal", stats_goal, "goal id (default: final achieved goal)");

  auto* train = app.add_subcommand("train", "two-phase training run");
  std::string train_config;
  train->add_option("--config", train_config, "config file (sections run/binning/train/eval)");
  std::map<std::string, std::string> overrides;
  std::string ov_data, ov_alg, ov_backend, ov_out, ov_alpha, ov_beta, ov_steps, ov_seed,
      ov_nstep;
  train->add_option("--data", ov_data, "override run.data");
  train->add_option("--algorithm", ov_alg, "override run.algorithm");
  train->add_option("--backend", ov_backend, "override run.backend");
  train->add_option("--out-dir", ov_out, "override run.out_dir");
  train->add_option("--alpha", ov_alpha, "override train.alpha");
  train->add_option("--beta", ov_beta, "override train.beta");
  train->add_option("--steps", ov_steps, "override train.steps");
  train->add_option("--seed", ov_seed, "override train.seed");
  train->add_option("--n-step", ov_nstep, "override binning.n_step");

  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  std::string eval_policy, eval_data, eval_strategy = "all_reachable", eval_mode = "greedy",
              eval_out;
  int eval_episodes = 100, eval_horizon = 0;
  std::uint64_t eval_seed = 0;
  eval->add_option("--policy", eval_policy, "policy checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset (for dataset_states goals and horizon)");
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--strategy", eval_strategy, "all_reachable | dataset_states");
  eval->add_option("--mode", eval_mode, "greedy | sample");
  eval->add_option("--horizon", eval_horizon, "override horizon");
  eval->add_option("--out", eval_out, "write the summary record here");

  auto* verify = app.add_subcommand("verify", "run the theory verification suite");
  std::string verify_env, verify_data, verify_suite_name = "all",
              verify_alphas = "0.5,1,2", verify_gammas = "0.5,0.9,0.99", verify_out;
  int verify_traj = 40;
  std::uint64_t verify_seed = 1;
  verify->add_option("--env", verify_env, "environment id")->required();
  verify->add_option("--data", verify_data, "dataset file (default: self-generated)");
  verify->add_option("--suite", verify_suite_name,
                     "all | fixed_point | finite | prop1 | corollary | extraction");
  verify->add_option("--alphas", verify_alphas, "comma-separated alpha grid");
  verify->add_option("--gammas", verify_gammas, "comma-separated gamma grid");
  verify->add_option("--traj", verify_traj, "trajectories for the generated dataset");
  verify->add_option("--seed", verify_seed, "seed for the generated dataset");
  verify->add_option("--out", verify_out, "write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_env, gen_behavior, gen_traj, gen_seed, gen_out, gen_horizon);
    if (stats->parsed()) return cmd_stats(stats_data, stats_goal);
    if (train->parsed()) {
      if (!ov_data.empty()) overrides["run.data"] = ov_data;
      if (!ov_alg.empty()) overrides["run.algorithm"] = ov_alg;
      if (!ov_backend.empty()) overrides["run.backend"] = ov_backend;
      if (!ov_out.empty()) overrides["run.out_dir"] = ov_out;
      if (!ov_alpha.empty()) overrides["train.alpha"] = ov_alpha;
      if (!ov_beta.empty()) overrides["train.beta"] = ov_beta;
      if (!ov_steps.empty()) overrides["train.steps"] = ov_steps;
      if (!ov_seed.empty()) overrides["train.seed"] = ov_seed;
      if (!ov_nstep.empty()) overrides["binning.n_step"] = ov_nstep;
      return cmd_train(train_config, overrides);
    }
    if (eval->parsed())
      return cmd_eval(eval_policy, eval_data, eval_episodes, eval_seed, eval_strategy,
                      eval_mode, eval_horizon, eval_out);
    if (verify->parsed())
      return cmd_verify(verify_env, verify_data, verify_suite_name, verify_alphas,
                        verify_gammas, verify_traj, verify_seed, verify_out);
  } catch (const dwsl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const dwsl::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

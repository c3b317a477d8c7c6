#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dwsl/config.hpp"
#include "dwsl/datagen.hpp"
#include "dwsl/distance.hpp"
#include "dwsl/eval.hpp"
#include "dwsl/mdp.hpp"
#include "dwsl/policy.hpp"

namespace dwsl {

struct TrainOutputs {
  std::string distance_ckpt;  // empty when the algorithm has no distance phase
  std::string policy_ckpt;
  std::string curve_file;
  std::string meta_file;
  EvalReport final_eval;
  PolicyTrainReport train_report;
};

// Runs the two-phase pipeline: fit or train the distance model, then train
// the policy by weighted imitation, evaluating at the configured cadence.
// Tabular runs are closed form and produce a single evaluation point.
// Deterministic per config and seed.
inline TrainOutputs run_training(const RunConfig& cfg) {
  validate_config(cfg);
  const Dataset data = read_dataset(cfg.dataset_path);
  if (!cfg.env_id.empty() && cfg.env_id != data.header.env_id)
    throw ConfigError("config env " + cfg.env_id + " does not match dataset env " +
                      data.header.env_id);
  const MdpSpec spec = make_env(data.header.env_id).with_horizon(data.header.horizon);
  const BinningConfig binning = BinningConfig::for_horizon(spec.horizon, cfg.n_step);
  const PolicyBackend backend =
      cfg.backend == "tabular" ? PolicyBackend::kTabular : PolicyBackend::kMlp;

  TrainConfig train;
  train.alpha = cfg.alpha;
  train.beta = cfg.beta;
  train.clip = cfg.clip;
  train.steps = cfg.steps;
  train.batch = cfg.batch;
  train.lr = cfg.lr;
  train.seed = cfg.seed;
  train.hidden = cfg.hidden;

  // Phase 1: distance model (skipped by the imitation baseline).
  std::optional<DistanceModel> model;
  switch (cfg.algorithm) {
    case Algorithm::kGcsl:
      break;
    case Algorithm::kDwsl:
    case Algorithm::kAwr:
      model = backend == PolicyBackend::kTabular
                  ? fit_tabular(data, spec, binning)
                  : train_classifier(data, spec, binning, train);
      break;
    case Algorithm::kExpectile:
      model = train_regression(data, spec, binning, train, RegressionMode::kExpectile,
                               cfg.tau);
      break;
    case Algorithm::kDwslB:
      model = train_dwsl_b(data, spec, binning, train, cfg.target_update_period,
                           cfg.polyak, backend);
      break;
  }

  // Phase 2: policy.
  const GoalStrategy strategy = cfg.eval_strategy == "dataset_states"
                                    ? GoalStrategy::kDatasetStates
                                    : GoalStrategy::kAllReachable;
  std::vector<CurvePoint> history;
  auto eval_point = [&](long step, const PolicyModel& policy) {
    history.push_back({step, evaluate(spec, policy, cfg.eval_episodes, strategy,
                                      cfg.eval_seed, &data)});
  };

  DistanceFn distance;
  if (cfg.algorithm == Algorithm::kAwr) distance = expectation_distance_fn(*model, spec);
  else if (model) distance = soft_min_distance_fn(*model, spec, cfg.alpha);

  TrainOutputs out;
  PolicyModel policy = train_weighted_imitation(
      data, spec, binning, distance, train, backend, &out.train_report,
      backend == PolicyBackend::kMlp ? cfg.eval_cadence : 0, eval_point);
  if (history.empty() || history.back().step != (backend == PolicyBackend::kMlp ? cfg.steps : 0))
    eval_point(backend == PolicyBackend::kMlp ? cfg.steps : 0, policy);
  out.final_eval = history.back().report;

  // Outputs.
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = [&](const std::string& name) {
    return (std::filesystem::path(cfg.out_dir) / name).string();
  };
  if (model) {
    out.distance_ckpt = path("distance.ckpt");
    std::ofstream os(out.distance_ckpt);
    write_distance_model(os, *model);
  }
  out.policy_ckpt = path("policy.ckpt");
  {
    std::ofstream os(out.policy_ckpt);
    write_policy_model(os, policy);
  }
  out.curve_file = path("curves.csv");
  emit_curves(out.curve_file, history);
  out.meta_file = path("run_meta.txt");
  {
    std::ofstream os(out.meta_file);
    os << "# resolved configuration\n" << cfg.echo();
    os << "[dataset]\nenv = " << data.header.env_id << "\nhorizon = " << data.header.horizon
       << "\ntrajectories = " << data.header.num_trajectories
       << "\nbehavior = " << data.header.behavior << "\nseed = " << data.header.seed << "\n";
    os << "[result]\nsuccess_rate = " << out.final_eval.success_rate
       << "\nmean_steps_at_goal = " << out.final_eval.mean_steps_at_goal
       << "\nmean_first_hit = " << out.final_eval.mean_first_hit
       << "\nfallback_count = " << out.final_eval.fallback_count
       << "\nunsupported_next = " << out.train_report.unsupported_next << "\n";
  }
  return out;
}

}  // namespace dwsl

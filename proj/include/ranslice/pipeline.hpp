#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ranslice/agent.hpp"
#include "ranslice/kto.hpp"
#include "ranslice/metrics.hpp"
#include "ranslice/policy.hpp"
#include "ranslice/reflector.hpp"
#include "ranslice/sim.hpp"

namespace ranslice {

/// Runs one trajectory on a fresh environment built from the scenario.
Trajectory generate_trajectory(Policy& policy, const SimConfig& scenario,
                               const RunOptions& options);

/// Rebuilds the environment a trajectory came from and re-executes its
/// recorded actions, leaving it ready for counterfactual replay.
SimEnv rebuild_env(const Trajectory& trajectory);

struct EvalRow {
  std::uint64_t seed = 0;
  double mean_se = 0.0;
  int reconfigs = 0;
  int violations = 0;
  double total_utility = 0.0;
};

/// Evaluates a policy over seeds: one trajectory per seed, summarized with
/// the four comparison columns (mean SE, reconfigurations, violations,
/// utility).
std::vector<EvalRow> evaluate_policy(Policy& policy, SimConfig scenario,
                                     const std::vector<std::uint64_t>& seeds,
                                     const UtilityWeights& weights, const RunOptions& options);

EvalRow summarize_trajectory(const Trajectory& trajectory, const UtilityWeights& weights);

/// Per-column medians over the rows (seed field is left at zero).
EvalRow median_rows(const std::vector<EvalRow>& rows);

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path);

struct SelfTrainOptions {
  SimConfig scenario;
  std::vector<std::uint64_t> seeds;
  int outer_rounds = 1;
  RunOptions run;
  OracleParams oracle;
  KtoConfig kto;
  UtilityWeights weights;
  std::string out_dir;  // empty: keep everything in memory
  bool resume = true;
  std::uint64_t policy_seed = 1;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalRow before;
  EvalRow after;
  TrainReport report;  // last round's report
};

struct SelfTrainResult {
  std::vector<SeedOutcome> seeds;
};

/// The full in-process loop per seed: run a trajectory with a fresh toy
/// policy, label it with the hindsight oracle, fine-tune, and evaluate the
/// trained policy on the same seed. With outer_rounds > 1 the loop repeats
/// with fresh traffic per round; with 0 rounds only the untrained policy is
/// evaluated. Artifacts are persisted under out_dir and reused on resume.
SelfTrainResult selftrain(const SelfTrainOptions& options);

}  // namespace ranslice

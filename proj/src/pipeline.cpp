#include "ranslice/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "ranslice/errors.hpp"
#include "ranslice/rng.hpp"

namespace ranslice {

namespace fs = std::filesystem;

Trajectory generate_trajectory(Policy& policy, const SimConfig& scenario,
                               const RunOptions& options) {
  SimEnv env = init_env(scenario);
  return run_trajectory(policy, env, options);
}

SimEnv rebuild_env(const Trajectory& trajectory) {
  SimEnv env = init_env(trajectory.config);
  for (const HistoryEntry& entry : trajectory.entries) {
    env.step(entry.action);
  }
  return env;
}

EvalRow summarize_trajectory(const Trajectory& trajectory, const UtilityWeights& weights) {
  const WindowMetrics window = trajectory_window(trajectory, weights);
  EvalRow row;
  row.seed = trajectory.seed;
  row.mean_se = window.mean_se;
  row.reconfigs = window.total_reconfigs;
  row.violations = window.total_violations;
  row.total_utility = window.total_utility;
  return row;
}

std::vector<EvalRow> evaluate_policy(Policy& policy, SimConfig scenario,
                                     const std::vector<std::uint64_t>& seeds,
                                     const UtilityWeights& weights, const RunOptions& options) {
  std::vector<EvalRow> rows;
  rows.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    scenario.seed = seed;
    Trajectory trajectory = generate_trajectory(policy, scenario, options);
    if (trajectory.aborted) {
      throw TransportError("evaluation trajectory aborted: " + trajectory.abort_reason);
    }
    rows.push_back(summarize_trajectory(trajectory, weights));
  }
  return rows;
}

namespace {

double median_of(std::vector<double> values) {
  if (values.empty()) {
    return 0.0;
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

EvalRow median_rows(const std::vector<EvalRow>& rows) {
  EvalRow median;
  std::vector<double> se, c, v, u;
  for (const EvalRow& row : rows) {
    se.push_back(row.mean_se);
    c.push_back(row.reconfigs);
    v.push_back(row.violations);
    u.push_back(row.total_utility);
  }
  median.mean_se = median_of(se);
  median.reconfigs = static_cast<int>(median_of(c));
  median.violations = static_cast<int>(median_of(v));
  median.total_utility = median_of(u);
  return median;
}

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write evaluation file: " + path);
  }
  out << "seed,avg_se,reconf_times,pqos_vio,utility\n";
  for (const EvalRow& row : rows) {
    out << fmt::format("{},{:.9g},{},{},{:.9g}\n", row.seed, row.mean_se, row.reconfigs,
                       row.violations, row.total_utility);
  }
  const EvalRow median = median_rows(rows);
  out << fmt::format("median,{:.9g},{},{},{:.9g}\n", median.mean_se, median.reconfigs,
                     median.violations, median.total_utility);
}

namespace {

ToySoftmaxPolicy fresh_toy_policy(const SimConfig& scenario, std::uint64_t policy_seed,
                                  std::uint64_t scenario_seed) {
  ToyFeatureScale scale;
  scale.total_prbs = scenario.total_prbs;
  scale.se_scale = scenario.radio.efficiency_cap_bps_hz;
  scale.tau_s = scenario.decision_interval_s;
  return ToySoftmaxPolicy(scenario.action_lower_bound(), scenario.action_upper_bound(), scale,
                          derive_seed(policy_seed, "toy-policy", scenario_seed));
}

}  // namespace

SelfTrainResult selftrain(const SelfTrainOptions& options) {
  options.scenario.validate();
  options.kto.validate();
  options.oracle.validate();
  if (options.seeds.empty()) {
    throw ConfigError("selftrain requires at least one seed");
  }

  const bool persist = !options.out_dir.empty();
  if (persist) {
    fs::create_directories(options.out_dir);
  }

  SelfTrainResult result;
  for (std::uint64_t seed : options.seeds) {
    SimConfig scenario = options.scenario;
    scenario.seed = seed;

    ToySoftmaxPolicy policy = fresh_toy_policy(scenario, options.policy_seed, seed);

    const fs::path seed_dir = fs::path(options.out_dir) / fmt::format("seed_{}", seed);
    if (persist) {
      fs::create_directories(seed_dir);
    }

    SeedOutcome outcome;
    outcome.seed = seed;

    for (int round = 1; round <= options.outer_rounds; ++round) {
      SimConfig round_scenario = scenario;
      // Fresh traffic per round, reproducible per (seed, round).
      round_scenario.seed = round == 1 ? seed : derive_seed(seed, "round", round);

      const fs::path round_dir = seed_dir / fmt::format("round_{}", round);
      if (persist) {
        fs::create_directories(round_dir);
      }
      const fs::path trajectory_path = round_dir / "trajectory.jsonl";
      const fs::path labeled_path = round_dir / "labeled.jsonl";
      const fs::path metrics_path = round_dir / "metrics.csv";
      const fs::path policy_path = round_dir / "policy.json";
      const fs::path report_path = round_dir / "train_report.csv";

      Trajectory trajectory;
      if (persist && options.resume && fs::exists(trajectory_path)) {
        trajectory = load_trajectory(trajectory_path.string());
      } else {
        trajectory = generate_trajectory(policy, round_scenario, options.run);
        if (persist) {
          persist_trajectory(trajectory, trajectory_path.string());
          write_metrics_csv(trajectory, options.weights, metrics_path.string());
        }
      }
      if (round == 1) {
        outcome.before = summarize_trajectory(trajectory, options.weights);
      }

      LabeledTrajectory labeled;
      if (persist && options.resume && fs::exists(labeled_path)) {
        labeled = load_labeled_trajectory(labeled_path.string());
      } else {
        SimEnv env = rebuild_env(trajectory);
        labeled = oracle_reflect(env, trajectory, options.oracle);
        if (persist) {
          persist_labeled_trajectory(labeled, labeled_path.string());
        }
      }

      if (persist && options.resume && fs::exists(policy_path)) {
        auto loaded = load_toy_policy(policy_path.string());
        policy.set_theta(loaded->theta());
      } else {
        KtoConfig kto = options.kto;
        kto.seed = derive_seed(seed, "kto", round);
        outcome.report = run_rfr(policy, labeled, kto);
        if (persist) {
          save_toy_policy(policy, policy_path.string());
          write_train_report_csv(outcome.report, report_path.string());
          SaturationState export_saturation;
          // Datasets are rebuilt per iteration during training; persist the
          // first iteration's dataset for external fine-tuning.
          const auto dataset =
              build_dataset_iteration(labeled, policy, kto, export_saturation, 1);
          export_dataset(dataset, (round_dir / "dataset_iter1.jsonl").string());
        }
      }
    }

    // Matched-seed evaluation of the trained policy.
    if (options.outer_rounds >= 1) {
      Trajectory trained = generate_trajectory(policy, scenario, options.run);
      outcome.after = summarize_trajectory(trained, options.weights);
      if (persist) {
        persist_trajectory(trained, (seed_dir / "trained_eval.jsonl").string());
        save_toy_policy(policy, (seed_dir / "policy_final.json").string());
      }
    } else {
      Trajectory untrained = generate_trajectory(policy, scenario, options.run);
      outcome.before = summarize_trajectory(untrained, options.weights);
      outcome.after = outcome.before;
    }
    result.seeds.push_back(std::move(outcome));
  }

  if (persist) {
    std::ofstream summary(fs::path(options.out_dir) / "summary.csv");
    summary << "seed,c_before,c_after,v_before,v_after,se_before,se_after,utility_before,"
               "utility_after\n";
    for (const SeedOutcome& outcome : result.seeds) {
      summary << fmt::format("{},{},{},{},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", outcome.seed,
                             outcome.before.reconfigs, outcome.after.reconfigs,
                             outcome.before.violations, outcome.after.violations,
                             outcome.before.mean_se, outcome.after.mean_se,
                             outcome.before.total_utility, outcome.after.total_utility);
    }
  }
  return result;
}

}  // namespace ranslice

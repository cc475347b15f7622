// ranslice command line: scenario execution, reflection, preference
// fine-tuning, evaluation, and the full self-finetuning loop.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ranslice/agent.hpp"
#include "ranslice/errors.hpp"
#include "ranslice/kto.hpp"
#include "ranslice/llm_client.hpp"
#include "ranslice/metrics.hpp"
#include "ranslice/pipeline.hpp"
#include "ranslice/policy.hpp"
#include "ranslice/reflector.hpp"
#include "ranslice/rng.hpp"
#include "ranslice/sim.hpp"

namespace fs = std::filesystem;
using namespace ranslice;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct PolicyFlags {
  std::string backend = "toy";  // toy | hold | llm
  std::string policy_file;
  std::uint64_t policy_seed = 1;
  std::string llm_url;
  std::string llm_model;
  std::string llm_token_env = "RANSLICE_LLM_TOKEN";
  double act_temperature = 0.0;
  double rollout_temperature = 0.8;
  double llm_timeout_s = 60.0;
  int llm_retries = 2;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--policy", backend, "Policy backend: toy, hold, or llm")
        ->check(CLI::IsMember({"toy", "hold", "llm"}));
    cmd->add_option("--policy-file", policy_file, "Toy policy weights to load");
    cmd->add_option("--policy-seed", policy_seed, "Seed for toy policy sampling streams");
    cmd->add_option("--llm-url", llm_url, "Chat-completion base URL (http)");
    cmd->add_option("--llm-model", llm_model, "Model name sent to the endpoint");
    cmd->add_option("--llm-token-env", llm_token_env,
                    "Environment variable holding the bearer token");
    cmd->add_option("--act-temperature", act_temperature, "Acting temperature");
    cmd->add_option("--rollout-temperature", rollout_temperature, "Rollout temperature");
    cmd->add_option("--llm-timeout", llm_timeout_s, "Endpoint timeout in seconds");
    cmd->add_option("--llm-retries", llm_retries, "Endpoint retry budget");
  }

  LlmEndpointConfig endpoint_config() const {
    LlmEndpointConfig config;
    config.base_url = llm_url;
    config.model = llm_model;
    config.auth_env_var = llm_token_env;
    config.act_temperature = act_temperature;
    config.rollout_temperature = rollout_temperature;
    config.timeout_s = llm_timeout_s;
    config.max_retries = llm_retries;
    return config;
  }

  std::unique_ptr<Policy> make(const SimConfig& scenario) const {
    if (backend == "hold") {
      return make_hold_policy();
    }
    if (backend == "llm") {
      return std::make_unique<LlmEndpointPolicy>(endpoint_config());
    }
    if (!policy_file.empty()) {
      return load_toy_policy(policy_file);
    }
    ToyFeatureScale scale;
    scale.total_prbs = scenario.total_prbs;
    scale.se_scale = scenario.radio.efficiency_cap_bps_hz;
    scale.tau_s = scenario.decision_interval_s;
    return std::make_unique<ToySoftmaxPolicy>(scenario.action_lower_bound(),
                                              scenario.action_upper_bound(), scale,
                                              derive_seed(policy_seed, "toy-policy"),
                                              act_temperature);
  }
};

struct WeightFlags {
  UtilityWeights weights;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--alpha", weights.alpha, "Utility weight on spectrum efficiency");
    cmd->add_option("--p-reconf", weights.p_reconf, "Utility penalty per reconfiguration");
    cmd->add_option("--p-qos", weights.p_qos, "Utility penalty per violated interval");
  }
};

struct KtoFlags {
  KtoConfig config;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--beta", config.beta, "KTO sensitivity");
    cmd->add_option("--rollouts", config.rollouts_per_step, "Rollouts per False step (m)");
    cmd->add_option("--iterations", config.iterations, "KTO iterations (n)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--rho", config.rho, "Rollout saturation threshold");
    cmd->add_option("--learning-rate", config.learning_rate, "Gradient step size");
    cmd->add_option("--train-steps", config.steps_per_iteration, "Gradient steps per iteration");
    cmd->add_option("--batch-size", config.batch_size, "Mini-batch size");
    cmd->add_option("--kto-seed", config.seed, "Shuffling seed");
  }
};

struct OracleFlags {
  int delta_range = 4;
  int lookahead = 2;
  double margin = -1.0;  // negative: derive from weights

  void add_to(CLI::App* cmd) {
    cmd->add_option("--delta-range", delta_range, "Oracle candidate offsets: -K..+K")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--lookahead", lookahead, "Oracle replay lookahead in steps");
    cmd->add_option("--margin", margin, "Oracle score margin (default 0.05 * p_reconf)");
  }

  OracleParams make(const UtilityWeights& weights) const {
    OracleParams params;
    params.candidate_deltas.clear();
    for (int d = -delta_range; d <= delta_range; ++d) {
      params.candidate_deltas.push_back(d);
    }
    params.lookahead = lookahead;
    params.weights = weights;
    if (margin >= 0.0) {
      params.margin = margin;
    }
    return params;
  }
};

SimConfig load_scenario_checked(const std::string& path, std::uint64_t seed_override,
                                bool has_seed) {
  if (!fs::exists(path)) {
    throw ConfigError("scenario file does not exist: " + path);
  }
  SimConfig config = load_scenario(path);
  if (has_seed) {
    config.seed = seed_override;
  }
  return config;
}

void print_window_summary(const std::string& tag, const Trajectory& trajectory,
                          const UtilityWeights& weights) {
  const WindowMetrics w = trajectory_window(trajectory, weights);
  fmt::print("{}: steps={} mean_se={:.4f} violations={} reconfigs={} utility={:.2f}\n", tag,
             trajectory.entries.size(), w.mean_se, w.total_violations, w.total_reconfigs,
             w.total_utility);
}

int cmd_run_trajectory(const std::string& scenario_path, std::uint64_t seed, bool has_seed,
                       int horizon, int window, int retries, const PolicyFlags& policy_flags,
                       const WeightFlags& weight_flags, const std::string& out_dir,
                       bool with_trace) {
  SimConfig scenario = load_scenario_checked(scenario_path, seed, has_seed);
  if (horizon > 0) {
    scenario.horizon_steps = horizon;
  }
  auto policy = policy_flags.make(scenario);

  SimEnv env = init_env(scenario);
  RunOptions options;
  options.horizon = scenario.horizon_steps;
  options.window = window;
  options.retries = retries;
  Trajectory trajectory = run_trajectory(*policy, env, options);

  fs::create_directories(out_dir);
  persist_trajectory(trajectory, (fs::path(out_dir) / "trajectory.jsonl").string());
  write_metrics_csv(trajectory, weight_flags.weights,
                    (fs::path(out_dir) / "metrics.csv").string());
  if (with_trace) {
    env.write_trace_csv((fs::path(out_dir) / "trace.csv").string());
  }
  print_window_summary("trajectory", trajectory, weight_flags.weights);
  if (trajectory.aborted) {
    fmt::print(stderr, "trajectory aborted: {}\n", trajectory.abort_reason);
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_reflect(const std::string& trajectory_path, const std::string& backend,
                const OracleFlags& oracle_flags, const WeightFlags& weight_flags,
                const PolicyFlags& policy_flags, int chunk_size, int chunk_overlap,
                const std::string& out_path) {
  if (!fs::exists(trajectory_path)) {
    throw ConfigError("trajectory file does not exist: " + trajectory_path);
  }
  Trajectory trajectory = load_trajectory(trajectory_path);

  LabeledTrajectory labeled;
  if (backend == "oracle") {
    SimEnv env = rebuild_env(trajectory);
    labeled = oracle_reflect(env, trajectory, oracle_flags.make(weight_flags.weights));
  } else {
    LlmReflectorConfig config;
    config.endpoint = policy_flags.endpoint_config();
    config.chunk_size = chunk_size;
    config.chunk_overlap = chunk_overlap;
    labeled = llm_reflect(trajectory, config);
  }
  persist_labeled_trajectory(labeled, out_path);

  int true_count = 0;
  for (const auto& e : labeled.entries) {
    true_count += e.label ? 1 : 0;
  }
  const int false_count = static_cast<int>(labeled.entries.size()) - true_count;
  fmt::print("labels: {} True, {} False ({} steps)\n", true_count, false_count,
             labeled.entries.size());
  return kExitOk;
}

int cmd_train(const std::string& labeled_path, const PolicyFlags& policy_flags,
              const KtoFlags& kto_flags, const std::string& out_dir, bool export_only) {
  if (!fs::exists(labeled_path)) {
    throw ConfigError("labeled trajectory file does not exist: " + labeled_path);
  }
  LabeledTrajectory labeled = load_labeled_trajectory(labeled_path);
  fs::create_directories(out_dir);

  auto policy = policy_flags.make(labeled.config);

  if (export_only || policy_flags.backend == "llm") {
    if (!export_only) {
      fmt::print(stderr,
                 "llm backends cannot be fine-tuned in-process; exporting the dataset "
                 "instead (use an external trainer)\n");
    }
    SaturationState saturation;
    const auto dataset =
        build_dataset_iteration(labeled, *policy, kto_flags.config, saturation, 1);
    const std::string path = (fs::path(out_dir) / "dataset_iter1.jsonl").string();
    export_dataset(dataset, path);
    fmt::print("exported {} examples to {} (no training)\n", dataset.size(), path);
    return kExitOk;
  }

  RunRfrHooks hooks;
  hooks.on_dataset = [&](int iteration, std::span<const PreferenceExample> dataset) {
    export_dataset(dataset,
                   (fs::path(out_dir) / fmt::format("dataset_iter{}.jsonl", iteration)).string());
  };
  const TrainReport report = run_rfr(*policy, labeled, kto_flags.config, &hooks);
  write_train_report_csv(report, (fs::path(out_dir) / "train_report.csv").string());
  auto* toy = dynamic_cast<ToySoftmaxPolicy*>(policy.get());
  save_toy_policy(*toy, (fs::path(out_dir) / "policy.json").string());

  for (const auto& row : report.rows) {
    fmt::print("iter {}: pos={} neg={} chosen_r={:+.4f} rejected_r={:+.4f} loss={:.4f} "
               "rolled_out={} saturated={}\n",
               row.iteration, row.n_pos, row.n_neg, row.mean_chosen_reward,
               row.mean_rejected_reward, row.mean_loss, row.rolled_out_steps,
               row.saturated_steps);
  }
  if (!report.completed) {
    fmt::print(stderr, "training aborted: {}\n", report.error);
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& scenario_path, const std::vector<std::uint64_t>& seeds,
                 int horizon, const PolicyFlags& policy_flags, const WeightFlags& weight_flags,
                 const std::string& out_path) {
  SimConfig scenario = load_scenario_checked(scenario_path, 0, false);
  if (horizon > 0) {
    scenario.horizon_steps = horizon;
  }
  auto policy = policy_flags.make(scenario);
  RunOptions options;
  options.horizon = scenario.horizon_steps;

  const auto rows = evaluate_policy(*policy, scenario, seeds, weight_flags.weights, options);
  if (!out_path.empty()) {
    write_eval_csv(rows, out_path);
  }
  fmt::print("{:>12} {:>10} {:>14} {:>10} {:>12}\n", "seed", "avg_se", "reconf_times", "pqos_vio",
             "utility");
  for (const auto& row : rows) {
    fmt::print("{:>12} {:>10.4f} {:>14} {:>10} {:>12.2f}\n", row.seed, row.mean_se, row.reconfigs,
               row.violations, row.total_utility);
  }
  const EvalRow median = median_rows(rows);
  fmt::print("{:>12} {:>10.4f} {:>14} {:>10} {:>12.2f}\n", "median", median.mean_se,
             median.reconfigs, median.violations, median.total_utility);
  return kExitOk;
}

int cmd_selftrain(const std::string& scenario_path, const std::vector<std::uint64_t>& seeds,
                  int rounds, int horizon, int window, int retries,
                  const PolicyFlags& policy_flags, const OracleFlags& oracle_flags,
                  const KtoFlags& kto_flags, const WeightFlags& weight_flags,
                  const std::string& out_dir, bool no_resume) {
  SelfTrainOptions options;
  options.scenario = load_scenario_checked(scenario_path, 0, false);
  if (horizon > 0) {
    options.scenario.horizon_steps = horizon;
  }
  options.seeds = seeds;
  options.outer_rounds = rounds;
  options.run.horizon = options.scenario.horizon_steps;
  options.run.window = window;
  options.run.retries = retries;
  options.oracle = oracle_flags.make(weight_flags.weights);
  options.kto = kto_flags.config;
  options.weights = weight_flags.weights;
  options.out_dir = out_dir;
  options.resume = !no_resume;
  options.policy_seed = policy_flags.policy_seed;

  const SelfTrainResult result = selftrain(options);
  fmt::print("{:>12} {:>9} {:>9} {:>8} {:>8} {:>12} {:>12}\n", "seed", "C_before", "C_after",
             "V_before", "V_after", "U_before", "U_after");
  for (const auto& outcome : result.seeds) {
    fmt::print("{:>12} {:>9} {:>9} {:>8} {:>8} {:>12.2f} {:>12.2f}\n", outcome.seed,
               outcome.before.reconfigs, outcome.after.reconfigs, outcome.before.violations,
               outcome.after.violations, outcome.before.total_utility,
               outcome.after.total_utility);
  }
  std::vector<EvalRow> before_rows, after_rows;
  for (const auto& outcome : result.seeds) {
    before_rows.push_back(outcome.before);
    after_rows.push_back(outcome.after);
  }
  const EvalRow mb = median_rows(before_rows);
  const EvalRow ma = median_rows(after_rows);
  fmt::print("{:>12} {:>9} {:>9} {:>8} {:>8} {:>12.2f} {:>12.2f}\n", "median", mb.reconfigs,
             ma.reconfigs, mb.violations, ma.violations, mb.total_utility, ma.total_utility);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic RAN-slicing control testbed with a reflective agent loop and "
               "KTO preference fine-tuning"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::uint64_t seed = 0;
  int horizon = 0;
  int window = 8;
  int retries = 2;
  std::string out_dir = "out";
  std::string out_path;
  std::string trajectory_path;
  std::string labeled_path;
  std::string backend = "oracle";
  std::vector<std::uint64_t> seeds;
  int rounds = 1;
  int chunk_size = 100;
  int chunk_overlap = 2;
  bool with_trace = false;
  bool export_only = false;
  bool no_resume = false;

  PolicyFlags policy_flags;
  WeightFlags weight_flags;
  KtoFlags kto_flags;
  OracleFlags oracle_flags;

  auto* run = app.add_subcommand("run-trajectory", "Run one seeded trajectory and export logs");
  run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--horizon", horizon, "Override the horizon in steps");
  run->add_option("--window", window, "Prompt history window");
  run->add_option("--retries", retries, "Re-queries after parse errors");
  run->add_option("--out-dir", out_dir, "Output directory");
  run->add_flag("--trace", with_trace, "Also export the per-TTI trace");
  policy_flags.add_to(run);
  weight_flags.add_to(run);

  auto* reflect = app.add_subcommand("reflect", "Label a trajectory with a reflector backend");
  reflect->add_option("--trajectory", trajectory_path, "Trajectory file")->required();
  reflect->add_option("--backend", backend, "oracle or llm")
      ->check(CLI::IsMember({"oracle", "llm"}));
  reflect->add_option("--out", out_path, "Labeled trajectory output file")->required();
  reflect->add_option("--chunk-size", chunk_size, "LLM reflector chunk size");
  reflect->add_option("--chunk-overlap", chunk_overlap, "LLM reflector chunk overlap");
  oracle_flags.add_to(reflect);
  weight_flags.add_to(reflect);
  policy_flags.add_to(reflect);

  auto* train = app.add_subcommand("train", "Preference fine-tuning from a labeled trajectory");
  train->add_option("--labeled", labeled_path, "Labeled trajectory file")->required();
  train->add_option("--out-dir", out_dir, "Output directory");
  train->add_flag("--export-only", export_only, "Build and export the dataset, skip training");
  policy_flags.add_to(train);
  kto_flags.add_to(train);

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy over seeds");
  evaluate->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  evaluate->add_option("--seeds", seeds, "Evaluation seeds")->required()->delimiter(',');
  evaluate->add_option("--horizon", horizon, "Override the horizon in steps");
  evaluate->add_option("--out", out_path, "Comparison table CSV");
  policy_flags.add_to(evaluate);
  weight_flags.add_to(evaluate);

  auto* self = app.add_subcommand("selftrain", "Trajectory, reflection, training, evaluation");
  self->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  self->add_option("--seeds", seeds, "Seeds, one independent run each")->required()->delimiter(',');
  self->add_option("--rounds", rounds, "Outer self-finetuning rounds");
  self->add_option("--horizon", horizon, "Override the horizon in steps");
  self->add_option("--window", window, "Prompt history window");
  self->add_option("--retries", retries, "Re-queries after parse errors");
  self->add_option("--out-dir", out_dir, "Artifact directory");
  self->add_flag("--no-resume", no_resume, "Recompute even when artifacts exist");
  policy_flags.add_to(self);
  oracle_flags.add_to(self);
  kto_flags.add_to(self);
  weight_flags.add_to(self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run->parsed()) {
      return cmd_run_trajectory(scenario_path, seed, seed_opt->count() > 0, horizon, window,
                                retries, policy_flags, weight_flags, out_dir, with_trace);
    }
    if (reflect->parsed()) {
      return cmd_reflect(trajectory_path, backend, oracle_flags, weight_flags, policy_flags,
                         chunk_size, chunk_overlap, out_path);
    }
    if (train->parsed()) {
      return cmd_train(labeled_path, policy_flags, kto_flags, out_dir, export_only);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(scenario_path, seeds, horizon, policy_flags, weight_flags, out_path);
    }
    if (self->parsed()) {
      return cmd_selftrain(scenario_path, seeds, rounds, horizon, window, retries, policy_flags,
                           oracle_flags, kto_flags, weight_flags, out_dir, no_resume);
    }
  } catch (const ConfigError& ex) {
    fmt::print(stderr, "configuration error: {}\n", ex.what());
    return kExitUsage;
  } catch (const FormatError& ex) {
    fmt::print(stderr, "format error: {}\n", ex.what());
    return kExitRuntime;
  } catch (const Error& ex) {
    fmt::print(stderr, "error: {}\n", ex.what());
    return kExitRuntime;
  } catch (const std::exception& ex) {
    fmt::print(stderr, "unexpected error: {}\n", ex.what());
    return kExitRuntime;
  }
  return kExitOk;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ranslice/metrics.hpp"
#include "ranslice/sim.hpp"

namespace ranslice {

class Policy;

/// One step of the interaction history: the observed state, the prompt sent
/// to the policy, the raw output, the extracted pieces, and the feedback.
struct HistoryEntry {
  StateVector state;
  int action = 0;
  std::string reflection;  // psi
  std::string analysis;    // phi
  FeedbackVector feedback;
  std::string prompt;
  std::string raw_output;
};

struct Trajectory {
  std::string scenario_id;
  std::uint64_t seed = 0;
  SimConfig config;
  std::vector<HistoryEntry> entries;
  bool aborted = false;
  std::string abort_reason;
};

struct ActorTriplet {
  std::string reflection;
  int action = 0;
  std::string analysis;
};

/// Canonical actor output template. The toy and scripted backends emit it,
/// and synthetic preference completions for improved actions reuse it.
std::string render_actor_output(int action);

/// Parses `<reflection>..</reflection><action>INT</action><analysis>..</analysis>`.
/// Whitespace-tolerant. Missing or duplicate tags raise ParseError; a
/// non-integer or out-of-bounds action raises ActionError (never clamped).
ActorTriplet extract_triplet(const std::string& raw, int lower_bound, int upper_bound);

/// Deterministic prompt: task header, the last min(window, t) history
/// entries, then the current state. Prompt size is bounded by the window,
/// never by the trajectory length.
std::string build_prompt(const Trajectory& history, const StateVector& current, int window);

struct RunOptions {
  int horizon = 300;
  int window = 8;
  int retries = 2;  // re-queries after a parse/action error before falling back
};

/// Runs the interaction loop: observe, prompt, act, extract, step, append.
/// Parse and action errors re-query up to `retries` times and then fall back
/// to the previous action; only transport failures abort, preserving the
/// partial history in the returned trajectory (aborted flag set).
Trajectory run_trajectory(Policy& policy, SimEnv& env, const RunOptions& options);

/// Line-delimited persistence; unknown fields are ignored on load and a
/// malformed line reports its line number.
std::string trajectory_to_jsonl(const Trajectory& trajectory);
Trajectory trajectory_from_jsonl(const std::string& text);
void persist_trajectory(const Trajectory& trajectory, const std::string& path);
Trajectory load_trajectory(const std::string& path);

/// Step metrics for every entry, in order.
std::vector<StepMetrics> trajectory_metrics(const Trajectory& trajectory,
                                            const UtilityWeights& weights);
WindowMetrics trajectory_window(const Trajectory& trajectory, const UtilityWeights& weights);

/// Metric export: one row per step with columns step,se,v,c,b_t,utility_term.
void write_metrics_csv(const Trajectory& trajectory, const UtilityWeights& weights,
                       const std::string& path);

}  // namespace ranslice

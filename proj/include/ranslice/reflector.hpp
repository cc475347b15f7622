#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ranslice/agent.hpp"
#include "ranslice/llm_client.hpp"
#include "ranslice/metrics.hpp"
#include "ranslice/sim.hpp"

namespace ranslice {

/// A history entry plus the reflector's verdict. A False label always
/// carries an improved action different from the recorded one; a True label
/// never does.
struct LabeledEntry {
  HistoryEntry entry;
  bool label = true;
  std::optional<int> improved_action;
  std::string rationale;
};

struct LabeledTrajectory {
  std::string scenario_id;
  std::uint64_t seed = 0;
  SimConfig config;
  std::string reflector_kind;    // "oracle" or "llm"
  std::string reflector_params;  // printable parameter summary
  std::vector<LabeledEntry> entries;
};

/// Hindsight oracle parameters: candidate allocations are offsets around the
/// recorded action, scored by counterfactual replay over `lookahead` steps
/// with the utility weights. The margin absorbs ties so near-optimal actions
/// stay labeled True.
struct OracleParams {
  std::vector<int> candidate_deltas = {-4, -3, -2, -1, 0, 1, 2, 3, 4};
  int lookahead = 2;
  UtilityWeights weights;
  std::optional<double> margin;  // default 0.05 * weights.p_reconf

  double margin_value() const;
  void validate() const;
};

struct OracleVerdict {
  bool label = true;
  std::optional<int> improved_action;
  std::string rationale;
};

/// Scores candidate allocations at step t by replaying the recorded traces
/// and picks the best as the improved action when the recorded one falls
/// short by more than the margin. Ties prefer the candidate closest to the
/// previous allocation, then the smallest.
OracleVerdict oracle_hindsight_label(const SimEnv& env, int step_index, int action,
                                     const OracleParams& params);

/// Labels every step of the trajectory with the hindsight oracle. The
/// environment must have executed exactly the trajectory's actions.
LabeledTrajectory oracle_reflect(const SimEnv& env, const Trajectory& trajectory,
                                 const OracleParams& params);

struct LlmReflectorConfig {
  LlmEndpointConfig endpoint;
  int chunk_size = 100;
  int chunk_overlap = 2;
};

/// One parsed verdict line of the reflector response grammar
/// `STEP t: label; action=INT; reason=...`.
struct VerdictLine {
  int step = 0;
  bool label = true;
  std::optional<int> improved_action;
  std::string reason;
};

std::optional<VerdictLine> parse_verdict_line(const std::string& line);

/// Renders the labeling request for a step range (inclusive bounds).
std::string build_reflection_prompt(const Trajectory& trajectory, int first_step, int last_step);

/// Trajectory-level LLM reflection: the full history is rendered (chunked
/// with overlap when long), verdicts are parsed per step, duplicates resolve
/// to the later chunk, and steps that stay unparseable after one re-query
/// are neutrally labeled True.
LabeledTrajectory llm_reflect(const Trajectory& trajectory, const LlmReflectorConfig& config);

void persist_labeled_trajectory(const LabeledTrajectory& labeled, const std::string& path);
LabeledTrajectory load_labeled_trajectory(const std::string& path);
std::string labeled_trajectory_to_jsonl(const LabeledTrajectory& labeled);
LabeledTrajectory labeled_trajectory_from_jsonl(const std::string& text);

}  // namespace ranslice

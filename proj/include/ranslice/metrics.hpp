#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ranslice/sim.hpp"

namespace ranslice {

/// Per-step metrics: spectrum efficiency, violation and reconfiguration
/// indicators, and the scalar utility term used for baselines and oracles.
struct StepMetrics {
  double se = 0.0;
  int v = 0;
  int c = 0;
  double utility_term = 0.0;
};

struct WindowMetrics {
  double mean_se = 0.0;
  int total_violations = 0;   // V
  int total_reconfigs = 0;    // C
  double total_utility = 0.0;
};

/// Weights of the scalar utility. Never a training signal for the agent;
/// used for evaluation tables and the hindsight oracle only.
struct UtilityWeights {
  double alpha = 1.0;
  double p_reconf = 2.0;
  double p_qos = 5.0;
};

/// (served_bits / tau) / bandwidth. Throws DomainError on non-positive
/// tau or bandwidth.
double spectrum_efficiency(std::uint64_t served_bits, double tau_s, double bandwidth_hz);

/// 1 iff any delay strictly exceeds the threshold. Values at the threshold
/// do not violate.
int qos_violation(std::span<const double> packet_delays_s, double threshold_s);

/// 1 iff a previous allocation exists and differs; the first step never
/// counts as a reconfiguration.
int reconfig_flag(int b_t, std::optional<int> b_prev);

/// State observed by the agent at decision time: previous action plus the
/// last interval's feedback.
struct StateVector {
  int prev_action = 0;
  double se = 0.0;
  double arrival_throughput_bps = 0.0;   // mu
  std::int64_t queued_delta_bytes = 0;   // delta
  std::uint64_t dropped_bytes = 0;       // epsilon
};

bool operator==(const StateVector& a, const StateVector& b);

StateVector state_vector(const FeedbackVector& feedback, int prev_action);

StepMetrics step_metrics_from(const FeedbackVector& feedback, const UtilityWeights& weights);

/// Sum over steps of alpha*SE - c*P_reconf - v*P_QoS.
double utility(std::span<const StepMetrics> steps, const UtilityWeights& weights);

WindowMetrics aggregate_window(std::span<const StepMetrics> steps);

}  // namespace ranslice

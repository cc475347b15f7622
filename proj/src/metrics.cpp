#include "ranslice/metrics.hpp"

#include "ranslice/errors.hpp"

namespace ranslice {

double spectrum_efficiency(std::uint64_t served_bits, double tau_s, double bandwidth_hz) {
  if (tau_s <= 0.0) {
    throw DomainError("spectrum_efficiency requires tau > 0");
  }
  if (bandwidth_hz <= 0.0) {
    throw DomainError("spectrum_efficiency requires bandwidth > 0");
  }
  return (static_cast<double>(served_bits) / tau_s) / bandwidth_hz;
}

int qos_violation(std::span<const double> packet_delays_s, double threshold_s) {
  if (threshold_s <= 0.0) {
    throw DomainError("qos_violation requires threshold > 0");
  }
  for (double delay : packet_delays_s) {
    if (delay > threshold_s) {
      return 1;
    }
  }
  return 0;
}

int reconfig_flag(int b_t, std::optional<int> b_prev) {
  return b_prev.has_value() && *b_prev != b_t ? 1 : 0;
}

bool operator==(const StateVector& a, const StateVector& b) {
  return a.prev_action == b.prev_action && a.se == b.se &&
         a.arrival_throughput_bps == b.arrival_throughput_bps &&
         a.queued_delta_bytes == b.queued_delta_bytes && a.dropped_bytes == b.dropped_bytes;
}

StateVector state_vector(const FeedbackVector& feedback, int prev_action) {
  StateVector s;
  s.prev_action = prev_action;
  s.se = feedback.se;
  s.arrival_throughput_bps = feedback.arrival_throughput_bps;
  s.queued_delta_bytes = feedback.queued_delta_bytes;
  s.dropped_bytes = feedback.dropped_bytes;
  return s;
}

StepMetrics step_metrics_from(const FeedbackVector& feedback, const UtilityWeights& weights) {
  StepMetrics m;
  m.se = feedback.se;
  m.v = feedback.violated ? 1 : 0;
  m.c = feedback.reconfigured ? 1 : 0;
  m.utility_term = weights.alpha * m.se - m.c * weights.p_reconf - m.v * weights.p_qos;
  return m;
}

double utility(std::span<const StepMetrics> steps, const UtilityWeights& weights) {
  double total = 0.0;
  for (const StepMetrics& m : steps) {
    total += weights.alpha * m.se - m.c * weights.p_reconf - m.v * weights.p_qos;
  }
  return total;
}

WindowMetrics aggregate_window(std::span<const StepMetrics> steps) {
  WindowMetrics w;
  double se_sum = 0.0;
  for (const StepMetrics& m : steps) {
    se_sum += m.se;
    w.total_violations += m.v;
    w.total_reconfigs += m.c;
    w.total_utility += m.utility_term;
  }
  w.mean_se = steps.empty() ? 0.0 : se_sum / static_cast<double>(steps.size());
  return w;
}

}  // namespace ranslice

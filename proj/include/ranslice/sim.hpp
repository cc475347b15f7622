#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "ranslice/sim_config.hpp"

namespace ranslice {

struct Packet {
  std::int32_t size_bytes = 0;
  std::int32_t remaining_bytes = 0;
  double arrival_time_s = 0.0;
};

/// Managed-slice metric vector for one decision interval.
struct FeedbackVector {
  double se = 0.0;                       // bits/s/Hz over the allocated bandwidth
  bool violated = false;                 // any packet breached the delay bound
  bool reconfigured = false;             // allocation changed vs previous step
  std::uint64_t arrived_bits = 0;
  std::uint64_t served_bits = 0;
  std::uint64_t dropped_bytes = 0;       // epsilon
  std::int64_t queued_delta_bytes = 0;   // delta (negative while draining)
  double arrival_throughput_bps = 0.0;   // mu
  double max_delay_s = 0.0;
};

bool operator==(const FeedbackVector& a, const FeedbackVector& b);

/// Static per-UE attributes fixed at placement time.
struct UeInfo {
  int slice_index = 0;
  double distance_m = 0.0;
  double pathloss_db = 0.0;
};

/// Mutable per-UE state carried across TTIs.
struct UeState {
  std::deque<Packet> queue;
  std::int64_t queued_bytes = 0;
  double avg_rate_bps = 1.0;  // PF fairness average, strictly positive
};

/// One per-TTI trace record; the unit of the exported trace log.
struct TraceRecord {
  std::int64_t tti_index = 0;
  int ue_id = 0;
  std::int64_t arrived_bytes = 0;
  double fading_db = 0.0;
  std::int64_t served_bytes = 0;
};

/// Deterministic packet-level simulation of network slices sharing one PRB
/// budget. Traffic arrivals and fading are pre-generated over the full
/// horizon at construction, so any step can be re-simulated bit-exactly
/// under a counterfactual allocation.
class SimEnv {
 public:
  explicit SimEnv(SimConfig config);

  /// Applies `allocation` PRBs to the managed slice for one decision
  /// interval, advances all TTIs, and returns the managed-slice feedback.
  FeedbackVector step(int allocation);

  /// Replays steps [step_index, step_index + lookahead) from the recorded
  /// snapshot with `alt_allocation` applied at step_index and the original
  /// allocations afterwards. Side-effect free.
  std::vector<FeedbackVector> replay_counterfactual(int step_index, int alt_allocation,
                                                    int lookahead) const;

  const SimConfig& config() const { return config_; }
  int current_step() const { return step_index_; }
  int current_allocation() const { return current_allocation_; }
  int ue_count() const { return static_cast<int>(ue_info_.size()); }
  const std::vector<int>& action_history() const { return action_history_; }
  const std::vector<FeedbackVector>& feedback_history() const { return feedback_history_; }
  const UeInfo& ue_info(int ue_id) const { return ue_info_.at(ue_id); }

  /// Bits deliverable to one UE in one TTI with the given PRB count; exactly
  /// linear in the PRB count, zero PRBs yield zero bits.
  double link_rate_bits(int ue_id, int prbs_for_ue, std::int64_t tti) const;

  /// Per-UE bytes served so far, summed from the per-TTI trace.
  std::vector<std::int64_t> served_bytes_per_ue() const;

  /// Per-TTI trace over everything simulated so far.
  std::vector<TraceRecord> trace() const;
  void write_trace_csv(const std::string& path) const;

 private:
  struct MutableState {
    std::vector<UeState> ues;
    std::optional<int> prev_allocation;
  };

  struct IntervalStats {
    std::int64_t arrived_bytes = 0;   // managed slice, drops included
    std::int64_t served_bytes = 0;
    std::int64_t dropped_bytes = 0;
    std::int64_t queued_start = 0;
    std::int64_t queued_end = 0;
    double max_delay_s = 0.0;
    bool any_violation = false;
  };

  void simulate_interval(MutableState& state, int allocation, int step_index,
                         IntervalStats& stats, std::vector<std::uint32_t>* trace_out) const;
  FeedbackVector make_feedback(int allocation, std::optional<int> prev_allocation,
                               const IntervalStats& stats) const;
  int prbs_for_slice(int slice_index, int allocation) const;

  SimConfig config_;
  int ttis_per_step_ = 0;
  std::int64_t horizon_ttis_ = 0;
  int managed_slice_ = 0;
  double managed_threshold_s_ = 0.0;

  std::vector<UeInfo> ue_info_;

  // Pre-generated, allocation-independent traces.
  std::vector<std::vector<std::uint16_t>> arrivals_pkts_;  // [ue][tti] packet count
  std::vector<std::vector<double>> fading_db_;             // [ue][coherence block]
  std::vector<std::vector<double>> per_prb_bits_;          // [ue][coherence block]

  // Live state plus one snapshot per executed step boundary.
  MutableState state_;
  std::vector<MutableState> snapshots_;
  int step_index_ = 0;
  int current_allocation_ = 0;
  std::vector<int> action_history_;
  std::vector<FeedbackVector> feedback_history_;
  std::vector<std::uint32_t> served_bytes_trace_;  // [ue * horizon_ttis + tti]
};

/// Builds a fully provisioned environment: deterministic UE placement,
/// pre-generated traffic and fading, initial allocation total_prbs / 2.
SimEnv init_env(const SimConfig& config);

}  // namespace ranslice

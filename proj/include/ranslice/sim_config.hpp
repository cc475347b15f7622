#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ranslice {

/// Simplified radio model: log-distance pathloss with lognormal block
/// shadowing, fixed transmit power shared evenly across the cell's PRBs.
struct RadioConfig {
  double tx_power_dbm = 30.0;
  double antenna_gain_db = 0.0;
  double noise_figure_db = 5.0;
  double carrier_frequency_mhz = 2120.0;
  double shadowing_sigma_db = 4.0;
  int coherence_ttis = 10;
  double efficiency_cap_bps_hz = 6.0;
  double min_distance_m = 50.0;
  double max_distance_m = 500.0;
};

/// Per-slice traffic model and QoS contract.
struct SliceSpec {
  std::string name;
  int ue_count = 0;
  double bit_rate_bps = 0.0;
  int packet_size_bytes = 0;
  double mean_on_s = 0.0;
  double mean_off_s = 0.0;
  double delay_threshold_s = 0.0;  // Theta
  bool is_managed = false;
};

struct SimConfig {
  int total_prbs = 50;
  double prb_bandwidth_hz = 180000.0;
  double tti_s = 0.001;
  double decision_interval_s = 0.1;  // tau
  std::vector<SliceSpec> slices;
  std::uint64_t seed = 0;
  std::int64_t queue_capacity_bytes = 200000;
  int horizon_steps = 300;
  RadioConfig radio;
  std::string scenario_id = "default";

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  int ttis_per_step() const;
  int action_lower_bound() const { return 1; }
  int action_upper_bound() const { return total_prbs - 1; }
  int managed_slice_index() const;
};

/// The Table-1/Table-2 desk-scale scenario: 20 managed GBR UEs at 0.5 Mb/s
/// (10 ms delay bound) plus 4 best-effort UEs at 2 Mb/s (50 ms bound).
SimConfig default_scenario();

SimConfig scenario_from_json(const std::string& json_text);
std::string scenario_to_json(const SimConfig& config);
SimConfig load_scenario(const std::string& path);
void save_scenario(const SimConfig& config, const std::string& path);

}  // namespace ranslice

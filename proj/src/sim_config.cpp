#include "ranslice/sim_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ranslice/errors.hpp"

namespace ranslice {

using nlohmann::json;

void SimConfig::validate() const {
  if (total_prbs < 2) {
    throw ConfigError("total_prbs must be >= 2, got " + std::to_string(total_prbs));
  }
  if (prb_bandwidth_hz <= 0.0) {
    throw ConfigError("prb_bandwidth_hz must be > 0");
  }
  if (tti_s <= 0.0) {
    throw ConfigError("tti_s must be > 0");
  }
  double ratio = decision_interval_s / tti_s;
  if (decision_interval_s <= 0.0 || std::abs(ratio - std::llround(ratio)) > 1e-9 ||
      std::llround(ratio) < 1) {
    throw ConfigError("decision_interval_s must be a positive integer multiple of tti_s");
  }
  if (horizon_steps < 1) {
    throw ConfigError("horizon_steps must be >= 1");
  }
  if (queue_capacity_bytes <= 0) {
    throw ConfigError("queue_capacity_bytes must be > 0");
  }
  if (slices.empty()) {
    throw ConfigError("at least one slice is required");
  }
  int managed = 0;
  for (const auto& s : slices) {
    if (s.is_managed) {
      ++managed;
    }
    if (s.ue_count < 0) {
      throw ConfigError("slice '" + s.name + "': ue_count must be >= 0");
    }
    if (s.bit_rate_bps <= 0.0) {
      throw ConfigError("slice '" + s.name + "': bit_rate_bps must be > 0");
    }
    if (s.packet_size_bytes <= 0) {
      throw ConfigError("slice '" + s.name + "': packet_size_bytes must be > 0");
    }
    if (s.mean_on_s <= 0.0 || s.mean_off_s <= 0.0) {
      throw ConfigError("slice '" + s.name + "': on/off duration means must be > 0");
    }
    if (s.delay_threshold_s <= 0.0) {
      throw ConfigError("slice '" + s.name + "': delay_threshold_s must be > 0");
    }
  }
  if (managed != 1) {
    throw ConfigError("exactly one slice must have is_managed = true, found " +
                      std::to_string(managed));
  }
  if (radio.coherence_ttis < 1) {
    throw ConfigError("radio.coherence_ttis must be >= 1");
  }
  if (radio.min_distance_m <= 0.0 || radio.max_distance_m < radio.min_distance_m) {
    throw ConfigError("radio distances must satisfy 0 < min <= max");
  }
  if (radio.efficiency_cap_bps_hz <= 0.0) {
    throw ConfigError("radio.efficiency_cap_bps_hz must be > 0");
  }
}

int SimConfig::ttis_per_step() const {
  return static_cast<int>(std::llround(decision_interval_s / tti_s));
}

int SimConfig::managed_slice_index() const {
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].is_managed) {
      return static_cast<int>(i);
    }
  }
  throw ConfigError("no managed slice configured");
}

SimConfig default_scenario() {
  SimConfig config;
  config.scenario_id = "gbr-vs-besteffort";
  config.slices = {
      SliceSpec{"gbr", 20, 0.5e6, 512, 15.0, 15.0, 0.010, true},
      SliceSpec{"best_effort", 4, 2.0e6, 512, 15.0, 15.0, 0.050, false},
  };
  return config;
}

namespace {

void radio_from_json(const json& j, RadioConfig& r) {
  r.tx_power_dbm = j.value("tx_power_dbm", r.tx_power_dbm);
  r.antenna_gain_db = j.value("antenna_gain_db", r.antenna_gain_db);
  r.noise_figure_db = j.value("noise_figure_db", r.noise_figure_db);
  r.carrier_frequency_mhz = j.value("carrier_frequency_mhz", r.carrier_frequency_mhz);
  r.shadowing_sigma_db = j.value("shadowing_sigma_db", r.shadowing_sigma_db);
  r.coherence_ttis = j.value("coherence_ttis", r.coherence_ttis);
  r.efficiency_cap_bps_hz = j.value("efficiency_cap_bps_hz", r.efficiency_cap_bps_hz);
  r.min_distance_m = j.value("min_distance_m", r.min_distance_m);
  r.max_distance_m = j.value("max_distance_m", r.max_distance_m);
}

json radio_to_json(const RadioConfig& r) {
  return json{{"tx_power_dbm", r.tx_power_dbm},
              {"antenna_gain_db", r.antenna_gain_db},
              {"noise_figure_db", r.noise_figure_db},
              {"carrier_frequency_mhz", r.carrier_frequency_mhz},
              {"shadowing_sigma_db", r.shadowing_sigma_db},
              {"coherence_ttis", r.coherence_ttis},
              {"efficiency_cap_bps_hz", r.efficiency_cap_bps_hz},
              {"min_distance_m", r.min_distance_m},
              {"max_distance_m", r.max_distance_m}};
}

SliceSpec slice_from_json(const json& j) {
  SliceSpec s;
  s.name = j.value("name", std::string{});
  s.ue_count = j.at("ue_count").get<int>();
  s.bit_rate_bps = j.at("bit_rate_bps").get<double>();
  s.packet_size_bytes = j.at("packet_size_bytes").get<int>();
  s.mean_on_s = j.at("mean_on_s").get<double>();
  s.mean_off_s = j.at("mean_off_s").get<double>();
  s.delay_threshold_s = j.at("delay_threshold_s").get<double>();
  s.is_managed = j.value("is_managed", false);
  return s;
}

json slice_to_json(const SliceSpec& s) {
  return json{{"name", s.name},
              {"ue_count", s.ue_count},
              {"bit_rate_bps", s.bit_rate_bps},
              {"packet_size_bytes", s.packet_size_bytes},
              {"mean_on_s", s.mean_on_s},
              {"mean_off_s", s.mean_off_s},
              {"delay_threshold_s", s.delay_threshold_s},
              {"is_managed", s.is_managed}};
}

}  // namespace

SimConfig scenario_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("scenario is not valid JSON: ") + ex.what());
  }
  SimConfig config;
  try {
    config.total_prbs = j.value("total_prbs", config.total_prbs);
    config.prb_bandwidth_hz = j.value("prb_bandwidth_hz", config.prb_bandwidth_hz);
    config.tti_s = j.value("tti_s", config.tti_s);
    config.decision_interval_s = j.value("decision_interval_s", config.decision_interval_s);
    config.seed = j.value("seed", config.seed);
    config.queue_capacity_bytes = j.value("queue_capacity_bytes", config.queue_capacity_bytes);
    config.horizon_steps = j.value("horizon_steps", config.horizon_steps);
    config.scenario_id = j.value("scenario_id", config.scenario_id);
    if (j.contains("radio")) {
      radio_from_json(j.at("radio"), config.radio);
    }
    if (!j.contains("slices") || !j.at("slices").is_array()) {
      throw ConfigError("scenario must define a 'slices' array");
    }
    for (const auto& sj : j.at("slices")) {
      config.slices.push_back(slice_from_json(sj));
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("scenario field error: ") + ex.what());
  }
  config.validate();
  return config;
}

std::string scenario_to_json(const SimConfig& config) {
  json j{{"scenario_id", config.scenario_id},
         {"total_prbs", config.total_prbs},
         {"prb_bandwidth_hz", config.prb_bandwidth_hz},
         {"tti_s", config.tti_s},
         {"decision_interval_s", config.decision_interval_s},
         {"seed", config.seed},
         {"queue_capacity_bytes", config.queue_capacity_bytes},
         {"horizon_steps", config.horizon_steps},
         {"radio", radio_to_json(config.radio)}};
  j["slices"] = json::array();
  for (const auto& s : config.slices) {
    j["slices"].push_back(slice_to_json(s));
  }
  return j.dump(2);
}

SimConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open scenario file: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return scenario_from_json(buffer.str());
}

void save_scenario(const SimConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write scenario file: " + path);
  }
  out << scenario_to_json(config) << "\n";
}

}  // namespace ranslice

#pragma once

// Internal JSON helpers shared by the persistence code. Not installed.

#include <nlohmann/json.hpp>

#include "ranslice/metrics.hpp"
#include "ranslice/sim.hpp"

namespace ranslice::detail {

using nlohmann::json;

inline json to_json(const StateVector& s) {
  return json{{"prev_action", s.prev_action},
              {"se", s.se},
              {"arrival_throughput_bps", s.arrival_throughput_bps},
              {"queued_delta_bytes", s.queued_delta_bytes},
              {"dropped_bytes", s.dropped_bytes}};
}

inline StateVector state_from_json(const json& j) {
  StateVector s;
  s.prev_action = j.at("prev_action").get<int>();
  s.se = j.at("se").get<double>();
  s.arrival_throughput_bps = j.at("arrival_throughput_bps").get<double>();
  s.queued_delta_bytes = j.at("queued_delta_bytes").get<std::int64_t>();
  s.dropped_bytes = j.at("dropped_bytes").get<std::uint64_t>();
  return s;
}

inline json to_json(const FeedbackVector& f) {
  return json{{"se", f.se},
              {"violated", f.violated},
              {"reconfigured", f.reconfigured},
              {"arrived_bits", f.arrived_bits},
              {"served_bits", f.served_bits},
              {"dropped_bytes", f.dropped_bytes},
              {"queued_delta_bytes", f.queued_delta_bytes},
              {"arrival_throughput_bps", f.arrival_throughput_bps},
              {"max_delay_s", f.max_delay_s}};
}

inline FeedbackVector feedback_from_json(const json& j) {
  FeedbackVector f;
  f.se = j.at("se").get<double>();
  f.violated = j.at("violated").get<bool>();
  f.reconfigured = j.at("reconfigured").get<bool>();
  f.arrived_bits = j.at("arrived_bits").get<std::uint64_t>();
  f.served_bits = j.at("served_bits").get<std::uint64_t>();
  f.dropped_bytes = j.at("dropped_bytes").get<std::uint64_t>();
  f.queued_delta_bytes = j.at("queued_delta_bytes").get<std::int64_t>();
  f.arrival_throughput_bps = j.at("arrival_throughput_bps").get<double>();
  f.max_delay_s = j.at("max_delay_s").get<double>();
  return f;
}

}  // namespace ranslice::detail

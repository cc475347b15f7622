#include "ranslice/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "ranslice/errors.hpp"
#include "ranslice/rng.hpp"

namespace ranslice {

namespace {

constexpr double kThermalNoiseDbmHz = -174.0;

double pathloss_db(double distance_m) {
  // Urban log-distance model at ~2 GHz.
  return 128.1 + 37.6 * std::log10(distance_m / 1000.0);
}

}  // namespace

bool operator==(const FeedbackVector& a, const FeedbackVector& b) {
  return a.se == b.se && a.violated == b.violated && a.reconfigured == b.reconfigured &&
         a.arrived_bits == b.arrived_bits && a.served_bits == b.served_bits &&
         a.dropped_bytes == b.dropped_bytes && a.queued_delta_bytes == b.queued_delta_bytes &&
         a.arrival_throughput_bps == b.arrival_throughput_bps && a.max_delay_s == b.max_delay_s;
}

SimEnv::SimEnv(SimConfig config) : config_(std::move(config)) {
  config_.validate();
  ttis_per_step_ = config_.ttis_per_step();
  horizon_ttis_ = static_cast<std::int64_t>(config_.horizon_steps) * ttis_per_step_;
  managed_slice_ = config_.managed_slice_index();
  managed_threshold_s_ = config_.slices[managed_slice_].delay_threshold_s;
  current_allocation_ = config_.total_prbs / 2;

  const std::int64_t n_blocks =
      (horizon_ttis_ + config_.radio.coherence_ttis - 1) / config_.radio.coherence_ttis;

  // Noise in one PRB of bandwidth; transmit power split evenly across the
  // cell's PRBs so per-UE rate is exactly linear in assigned PRBs.
  const double noise_dbm = kThermalNoiseDbmHz + 10.0 * std::log10(config_.prb_bandwidth_hz) +
                           config_.radio.noise_figure_db;
  const double tx_per_prb_dbm =
      config_.radio.tx_power_dbm - 10.0 * std::log10(static_cast<double>(config_.total_prbs));

  for (std::size_t slice_idx = 0; slice_idx < config_.slices.size(); ++slice_idx) {
    const SliceSpec& slice = config_.slices[slice_idx];
    for (int u = 0; u < slice.ue_count; ++u) {
      DeterministicStream placement(
          derive_seed(config_.seed, "placement", slice_idx, static_cast<std::uint64_t>(u)));
      UeInfo info;
      info.slice_index = static_cast<int>(slice_idx);
      info.distance_m =
          placement.uniform(config_.radio.min_distance_m, config_.radio.max_distance_m);
      info.pathloss_db = pathloss_db(info.distance_m);
      ue_info_.push_back(info);

      // Traffic: exponential on-off phases, constant bit rate while on,
      // whole packets materialized at TTI granularity.
      DeterministicStream traffic(
          derive_seed(config_.seed, "traffic", slice_idx, static_cast<std::uint64_t>(u)));
      std::vector<std::uint16_t> arrivals(horizon_ttis_, 0);
      const double on_fraction = slice.mean_on_s / (slice.mean_on_s + slice.mean_off_s);
      bool on = traffic.uniform01() < on_fraction;
      double phase_remaining =
          std::max(sample_onoff(traffic, on ? slice.mean_on_s : slice.mean_off_s), 1e-12);
      double bit_accum = 0.0;
      const double packet_bits = 8.0 * slice.packet_size_bytes;
      for (std::int64_t tti = 0; tti < horizon_ttis_; ++tti) {
        double left = config_.tti_s;
        while (left > 0.0) {
          const double used = std::min(left, phase_remaining);
          if (on) {
            bit_accum += slice.bit_rate_bps * used;
          }
          left -= used;
          phase_remaining -= used;
          if (phase_remaining <= 0.0) {
            on = !on;
            phase_remaining =
                std::max(sample_onoff(traffic, on ? slice.mean_on_s : slice.mean_off_s), 1e-12);
          }
        }
        std::uint16_t pkts = 0;
        while (bit_accum >= packet_bits) {
          bit_accum -= packet_bits;
          ++pkts;
        }
        arrivals[tti] = pkts;
      }
      arrivals_pkts_.push_back(std::move(arrivals));

      // Block-fading trace and the per-PRB rate it implies.
      DeterministicStream fading(
          derive_seed(config_.seed, "fading", slice_idx, static_cast<std::uint64_t>(u)));
      std::vector<double> fade(n_blocks);
      std::vector<double> rate(n_blocks);
      for (std::int64_t blk = 0; blk < n_blocks; ++blk) {
        fade[blk] = fading.normal(0.0, config_.radio.shadowing_sigma_db);
        const double snr_db = tx_per_prb_dbm + config_.radio.antenna_gain_db -
                              info.pathloss_db + fade[blk] - noise_dbm;
        const double snr_linear = std::pow(10.0, snr_db / 10.0);
        const double efficiency =
            std::min(config_.radio.efficiency_cap_bps_hz, std::log2(1.0 + snr_linear));
        rate[blk] = config_.prb_bandwidth_hz * config_.tti_s * efficiency;
      }
      fading_db_.push_back(std::move(fade));
      per_prb_bits_.push_back(std::move(rate));
    }
  }

  state_.ues.resize(ue_info_.size());
  served_bytes_trace_.assign(ue_info_.size() * static_cast<std::size_t>(horizon_ttis_), 0);
}

SimEnv init_env(const SimConfig& config) { return SimEnv(config); }

int SimEnv::prbs_for_slice(int slice_index, int allocation) const {
  return slice_index == managed_slice_ ? allocation : config_.total_prbs - allocation;
}

void SimEnv::simulate_interval(MutableState& state, int allocation, int step_index,
                               IntervalStats& stats,
                               std::vector<std::uint32_t>* trace_out) const {
  const int n_ues = static_cast<int>(ue_info_.size());
  const double tti_s = config_.tti_s;
  const std::int64_t tti0 = static_cast<std::int64_t>(step_index) * ttis_per_step_;

  for (int ue = 0; ue < n_ues; ++ue) {
    if (ue_info_[ue].slice_index == managed_slice_) {
      stats.queued_start += state.ues[ue].queued_bytes;
    }
  }

  struct Candidate {
    int ue;
    double rate1_bits;
    double metric;
    double projected_bits;
    int assigned;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(n_ues);
  std::vector<std::int64_t> served_bits_tti(n_ues);

  for (std::int64_t tti = tti0; tti < tti0 + ttis_per_step_; ++tti) {
    const std::int64_t block = tti / config_.radio.coherence_ttis;
    const double now_s = static_cast<double>(tti) * tti_s;
    const double completion_s = static_cast<double>(tti + 1) * tti_s;

    // Arrivals, drop-tail on per-UE queue overflow.
    for (int ue = 0; ue < n_ues; ++ue) {
      const int pkts = arrivals_pkts_[ue][tti];
      if (pkts == 0) {
        continue;
      }
      const SliceSpec& slice = config_.slices[ue_info_[ue].slice_index];
      const bool managed = ue_info_[ue].slice_index == managed_slice_;
      UeState& u = state.ues[ue];
      for (int p = 0; p < pkts; ++p) {
        if (managed) {
          stats.arrived_bytes += slice.packet_size_bytes;
        }
        if (u.queued_bytes + slice.packet_size_bytes > config_.queue_capacity_bytes) {
          if (managed) {
            stats.dropped_bytes += slice.packet_size_bytes;
            // A dropped packet is accounted as exceeding the delay bound.
            stats.any_violation = true;
            stats.max_delay_s = std::max(stats.max_delay_s, managed_threshold_s_ + tti_s);
          }
          continue;
        }
        u.queue.push_back(Packet{slice.packet_size_bytes, slice.packet_size_bytes, now_s});
        u.queued_bytes += slice.packet_size_bytes;
      }
    }

    std::fill(served_bits_tti.begin(), served_bits_tti.end(), 0);

    // Per-slice proportional fair scheduling over the slice's own PRBs.
    for (std::size_t slice_idx = 0; slice_idx < config_.slices.size(); ++slice_idx) {
      const int prbs = prbs_for_slice(static_cast<int>(slice_idx), allocation);
      candidates.clear();
      for (int ue = 0; ue < n_ues; ++ue) {
        if (ue_info_[ue].slice_index != static_cast<int>(slice_idx)) {
          continue;
        }
        UeState& u = state.ues[ue];
        if (u.queued_bytes > 0) {
          const double rate1 = per_prb_bits_[ue][block];
          candidates.push_back(Candidate{ue, rate1, rate1 / u.avg_rate_bps,
                                         static_cast<double>(u.queued_bytes) * 8.0, 0});
        }
      }

      // Greedy per-PRB assignment to the best instantaneous/average ratio;
      // a candidate leaves once its backlog is covered. Ties go to the
      // lowest ue_id (candidates are in ascending ue order).
      for (int prb = 0; prb < prbs; ++prb) {
        Candidate* best = nullptr;
        for (auto& cand : candidates) {
          if (cand.projected_bits <= 0.0) {
            continue;
          }
          if (best == nullptr || cand.metric > best->metric) {
            best = &cand;
          }
        }
        if (best == nullptr) {
          break;
        }
        best->assigned += 1;
        best->projected_bits -= best->rate1_bits;
      }

      // Serve whole bytes, head-first.
      for (const auto& cand : candidates) {
        if (cand.assigned == 0) {
          continue;
        }
        UeState& u = state.ues[cand.ue];
        std::int64_t budget =
            static_cast<std::int64_t>(std::floor(cand.assigned * cand.rate1_bits / 8.0));
        budget = std::min(budget, u.queued_bytes);
        std::int64_t served = 0;
        while (budget > 0 && !u.queue.empty()) {
          Packet& head = u.queue.front();
          const std::int64_t take = std::min<std::int64_t>(budget, head.remaining_bytes);
          head.remaining_bytes -= static_cast<std::int32_t>(take);
          budget -= take;
          served += take;
          if (head.remaining_bytes == 0) {
            if (static_cast<int>(slice_idx) == managed_slice_) {
              const double delay = completion_s - head.arrival_time_s;
              stats.max_delay_s = std::max(stats.max_delay_s, delay);
              if (delay > managed_threshold_s_) {
                stats.any_violation = true;
              }
            }
            u.queue.pop_front();
          }
        }
        u.queued_bytes -= served;
        served_bits_tti[cand.ue] = served * 8;
        if (static_cast<int>(slice_idx) == managed_slice_) {
          stats.served_bytes += served;
        }
        if (trace_out != nullptr) {
          (*trace_out)[static_cast<std::size_t>(cand.ue) * horizon_ttis_ + tti] =
              static_cast<std::uint32_t>(served);
        }
      }

      // PF average update for every UE in the slice, scheduled or not.
      for (int ue = 0; ue < n_ues; ++ue) {
        if (ue_info_[ue].slice_index != static_cast<int>(slice_idx)) {
          continue;
        }
        UeState& u = state.ues[ue];
        u.avg_rate_bps =
            0.99 * u.avg_rate_bps + 0.01 * (static_cast<double>(served_bits_tti[ue]) / tti_s);
      }
    }
  }

  for (int ue = 0; ue < n_ues; ++ue) {
    if (ue_info_[ue].slice_index == managed_slice_) {
      stats.queued_end += state.ues[ue].queued_bytes;
    }
  }
}

FeedbackVector SimEnv::make_feedback(int allocation, std::optional<int> prev_allocation,
                                     const IntervalStats& stats) const {
  FeedbackVector fb;
  const double tau = config_.decision_interval_s;
  fb.arrived_bits = static_cast<std::uint64_t>(stats.arrived_bytes) * 8;
  fb.served_bits = static_cast<std::uint64_t>(stats.served_bytes) * 8;
  fb.dropped_bytes = static_cast<std::uint64_t>(stats.dropped_bytes);
  fb.queued_delta_bytes = stats.queued_end - stats.queued_start;
  fb.arrival_throughput_bps = static_cast<double>(fb.arrived_bits) / tau;
  fb.max_delay_s = stats.max_delay_s;
  fb.violated = stats.any_violation;
  fb.reconfigured = prev_allocation.has_value() && *prev_allocation != allocation;
  fb.se = (static_cast<double>(fb.served_bits) / tau) /
          (static_cast<double>(allocation) * config_.prb_bandwidth_hz);
  return fb;
}

FeedbackVector SimEnv::step(int allocation) {
  if (allocation < config_.action_lower_bound() || allocation > config_.action_upper_bound()) {
    throw ActionError(fmt::format("allocation {} outside [{}, {}]", allocation,
                                  config_.action_lower_bound(), config_.action_upper_bound()));
  }
  if (step_index_ >= config_.horizon_steps) {
    throw Error("environment horizon exhausted");
  }

  snapshots_.push_back(state_);
  const std::optional<int> prev = state_.prev_allocation;
  IntervalStats stats;
  simulate_interval(state_, allocation, step_index_, stats, &served_bytes_trace_);
  state_.prev_allocation = allocation;

  FeedbackVector fb = make_feedback(allocation, prev, stats);
  action_history_.push_back(allocation);
  feedback_history_.push_back(fb);
  current_allocation_ = allocation;
  ++step_index_;
  return fb;
}

std::vector<FeedbackVector> SimEnv::replay_counterfactual(int step_index, int alt_allocation,
                                                          int lookahead) const {
  if (step_index < 0 || step_index >= step_index_) {
    throw ReplayError(fmt::format("step_index {} beyond recorded history of {} steps",
                                  step_index, step_index_));
  }
  if (lookahead < 1) {
    throw ReplayError("lookahead must be >= 1");
  }
  if (step_index + lookahead > step_index_) {
    throw ReplayError(fmt::format("replay window [{}, {}) exceeds recorded trace of {} steps",
                                  step_index, step_index + lookahead, step_index_));
  }
  if (alt_allocation < config_.action_lower_bound() ||
      alt_allocation > config_.action_upper_bound()) {
    throw ActionError(fmt::format("alt_allocation {} outside [{}, {}]", alt_allocation,
                                  config_.action_lower_bound(), config_.action_upper_bound()));
  }

  MutableState scratch = snapshots_[step_index];
  std::vector<FeedbackVector> out;
  out.reserve(lookahead);
  for (int k = 0; k < lookahead; ++k) {
    const int alloc = k == 0 ? alt_allocation : action_history_[step_index + k];
    const std::optional<int> prev = scratch.prev_allocation;
    IntervalStats stats;
    simulate_interval(scratch, alloc, step_index + k, stats, nullptr);
    scratch.prev_allocation = alloc;
    out.push_back(make_feedback(alloc, prev, stats));
  }
  return out;
}

double SimEnv::link_rate_bits(int ue_id, int prbs_for_ue, std::int64_t tti) const {
  if (prbs_for_ue < 0) {
    throw DomainError("prbs_for_ue must be >= 0");
  }
  if (tti < 0 || tti >= horizon_ttis_) {
    throw DomainError("tti outside the pre-generated horizon");
  }
  const std::int64_t block = tti / config_.radio.coherence_ttis;
  return static_cast<double>(prbs_for_ue) * per_prb_bits_.at(ue_id)[block];
}

std::vector<std::int64_t> SimEnv::served_bytes_per_ue() const {
  std::vector<std::int64_t> totals(ue_info_.size(), 0);
  const std::int64_t simulated = static_cast<std::int64_t>(step_index_) * ttis_per_step_;
  for (std::size_t ue = 0; ue < ue_info_.size(); ++ue) {
    for (std::int64_t tti = 0; tti < simulated; ++tti) {
      totals[ue] += served_bytes_trace_[ue * horizon_ttis_ + tti];
    }
  }
  return totals;
}

std::vector<TraceRecord> SimEnv::trace() const {
  std::vector<TraceRecord> records;
  const std::int64_t simulated = static_cast<std::int64_t>(step_index_) * ttis_per_step_;
  records.reserve(static_cast<std::size_t>(simulated) * ue_info_.size());
  for (std::int64_t tti = 0; tti < simulated; ++tti) {
    const std::int64_t block = tti / config_.radio.coherence_ttis;
    for (std::size_t ue = 0; ue < ue_info_.size(); ++ue) {
      TraceRecord rec;
      rec.tti_index = tti;
      rec.ue_id = static_cast<int>(ue);
      rec.arrived_bytes = static_cast<std::int64_t>(arrivals_pkts_[ue][tti]) *
                          config_.slices[ue_info_[ue].slice_index].packet_size_bytes;
      rec.fading_db = fading_db_[ue][block];
      rec.served_bytes = served_bytes_trace_[ue * horizon_ttis_ + tti];
      records.push_back(rec);
    }
  }
  return records;
}

void SimEnv::write_trace_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write trace file: " + path);
  }
  out << "tti,ue_id,arrived_bytes,fading_db,served_bytes\n";
  for (const TraceRecord& rec : trace()) {
    out << fmt::format("{},{},{},{:.6f},{}\n", rec.tti_index, rec.ue_id, rec.arrived_bytes,
                       rec.fading_db, rec.served_bytes);
  }
}

}  // namespace ranslice

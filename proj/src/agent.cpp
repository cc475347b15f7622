#include "ranslice/agent.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json_util.hpp"
#include "ranslice/errors.hpp"
#include "ranslice/policy.hpp"

namespace ranslice {

using detail::json;

std::string render_actor_output(int action) {
  return fmt::format(
      "<reflection>previous interval reviewed</reflection>"
      "<action>{}</action>"
      "<analysis>allocate {} PRBs next interval</analysis>",
      action, action);
}

namespace {

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

/// Extracts the unique <tag>...</tag> body, throwing on missing/duplicate tags.
std::string tag_body(const std::string& raw, const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  const auto open_pos = raw.find(open);
  if (open_pos == std::string::npos) {
    throw ParseError("missing <" + tag + "> tag");
  }
  if (raw.find(open, open_pos + open.size()) != std::string::npos) {
    throw ParseError("duplicate <" + tag + "> tag");
  }
  const auto body_pos = open_pos + open.size();
  const auto close_pos = raw.find(close, body_pos);
  if (close_pos == std::string::npos) {
    throw ParseError("missing </" + tag + "> tag");
  }
  if (raw.find(close, close_pos + close.size()) != std::string::npos) {
    throw ParseError("duplicate </" + tag + "> tag");
  }
  return raw.substr(body_pos, close_pos - body_pos);
}

std::string render_state_line(const StateVector& s) {
  return fmt::format("prev_prbs={} se={:.4f} arrival_bps={} queue_delta_bytes={} dropped_bytes={}",
                     s.prev_action, s.se,
                     static_cast<std::int64_t>(std::llround(s.arrival_throughput_bps)),
                     s.queued_delta_bytes, s.dropped_bytes);
}

std::string render_feedback_line(const FeedbackVector& f) {
  return fmt::format("se={:.4f} violated={} reconfigured={} served_bits={} max_delay_ms={:.1f}",
                     f.se, f.violated ? 1 : 0, f.reconfigured ? 1 : 0, f.served_bits,
                     f.max_delay_s * 1000.0);
}

}  // namespace

ActorTriplet extract_triplet(const std::string& raw, int lower_bound, int upper_bound) {
  ActorTriplet triplet;
  triplet.reflection = tag_body(raw, "reflection");
  const std::string action_text = tag_body(raw, "action");
  triplet.analysis = tag_body(raw, "analysis");

  const std::string_view trimmed = trim(action_text);
  int action = 0;
  const auto [ptr, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), action);
  if (ec != std::errc{} || ptr != trimmed.data() + trimmed.size()) {
    throw ActionError("action is not an integer: '" + std::string(trimmed) + "'");
  }
  if (action < lower_bound || action > upper_bound) {
    throw ActionError(fmt::format("action {} outside [{}, {}]", action, lower_bound, upper_bound));
  }
  triplet.action = action;
  return triplet;
}

std::string build_prompt(const Trajectory& history, const StateVector& current, int window) {
  if (window < 1) {
    throw DomainError("prompt window must be >= 1");
  }
  const SimConfig& config = history.config;
  std::string prompt = fmt::format(
      "You manage the downlink PRB allocation of one network slice.\n"
      "Each decision interval lasts {} ms. Before every interval you choose how many PRBs the "
      "managed slice receives; the other slice gets the remainder.\n"
      "Objectives: keep spectrum efficiency high, avoid packet delay violations, and avoid "
      "changing the allocation when it is not needed.\n"
      "Valid actions: integers {} to {}.\n"
      "Reply exactly in this format: <reflection>short reflection on the previous "
      "step</reflection><action>INTEGER</action><analysis>short reason for this "
      "allocation</analysis>\n\n",
      static_cast<std::int64_t>(std::llround(config.decision_interval_s * 1000.0)),
      config.action_lower_bound(), config.action_upper_bound());

  const int t = static_cast<int>(history.entries.size());
  const int first = std::max(0, t - window);
  if (first == t) {
    prompt += "Recent history: none\n";
  } else {
    prompt += "Recent history:\n";
    for (int i = first; i < t; ++i) {
      const HistoryEntry& e = history.entries[i];
      prompt += fmt::format("[step {}] state: {}\n", i, render_state_line(e.state));
      prompt += fmt::format("[step {}] reflection: {}\n", i, e.reflection);
      prompt += fmt::format("[step {}] action: {}\n", i, e.action);
      prompt += fmt::format("[step {}] analysis: {}\n", i, e.analysis);
      prompt += fmt::format("[step {}] feedback: {}\n", i, render_feedback_line(e.feedback));
    }
  }
  prompt += fmt::format("\nCurrent [step {}] state: {}\nNext allocation?\n", t,
                        render_state_line(current));
  return prompt;
}

Trajectory run_trajectory(Policy& policy, SimEnv& env, const RunOptions& options) {
  if (env.current_step() != 0) {
    throw DomainError("run_trajectory requires a fresh environment");
  }
  const SimConfig& config = env.config();
  if (options.horizon < 1 || options.horizon > config.horizon_steps) {
    throw DomainError(
        fmt::format("horizon {} outside [1, {}]", options.horizon, config.horizon_steps));
  }

  Trajectory trajectory;
  trajectory.scenario_id = config.scenario_id;
  trajectory.seed = config.seed;
  trajectory.config = config;

  FeedbackVector prev_feedback;
  for (int t = 0; t < options.horizon; ++t) {
    const int prev_action = env.current_allocation();
    const StateVector state = state_vector(prev_feedback, prev_action);
    const std::string prompt = build_prompt(trajectory, state, options.window);

    HistoryEntry entry;
    entry.state = state;
    entry.prompt = prompt;

    bool extracted = false;
    std::string last_raw;
    for (int attempt = 0; attempt <= options.retries && !extracted; ++attempt) {
      try {
        last_raw = policy.act(prompt, state);
      } catch (const TransportError& ex) {
        trajectory.aborted = true;
        trajectory.abort_reason = fmt::format("transport failure at step {}: {}", t, ex.what());
        return trajectory;
      } catch (const EndpointError& ex) {
        trajectory.aborted = true;
        trajectory.abort_reason = fmt::format("endpoint failure at step {}: {}", t, ex.what());
        return trajectory;
      }
      try {
        ActorTriplet triplet =
            extract_triplet(last_raw, config.action_lower_bound(), config.action_upper_bound());
        entry.action = triplet.action;
        entry.reflection = triplet.reflection;
        entry.analysis = triplet.analysis;
        extracted = true;
      } catch (const Error&) {
        // parse/action error: re-query, then fall back to the previous action
      }
    }
    if (!extracted) {
      entry.action = prev_action;
      entry.reflection = "";
      entry.analysis = "(fallback: previous action retained)";
    }
    entry.raw_output = last_raw.empty() ? "(empty output)" : last_raw;

    prev_feedback = env.step(entry.action);
    entry.feedback = prev_feedback;
    trajectory.entries.push_back(std::move(entry));
  }
  return trajectory;
}

namespace {

json entry_to_json(const HistoryEntry& e, int step) {
  return json{{"record", "step"},
              {"step", step},
              {"state", detail::to_json(e.state)},
              {"action", e.action},
              {"reflection", e.reflection},
              {"analysis", e.analysis},
              {"feedback", detail::to_json(e.feedback)},
              {"prompt", e.prompt},
              {"raw_output", e.raw_output}};
}

HistoryEntry entry_from_json(const json& j) {
  HistoryEntry e;
  e.state = detail::state_from_json(j.at("state"));
  e.action = j.at("action").get<int>();
  e.reflection = j.at("reflection").get<std::string>();
  e.analysis = j.at("analysis").get<std::string>();
  e.feedback = detail::feedback_from_json(j.at("feedback"));
  e.prompt = j.at("prompt").get<std::string>();
  e.raw_output = j.at("raw_output").get<std::string>();
  return e;
}

}  // namespace

std::string trajectory_to_jsonl(const Trajectory& trajectory) {
  std::string out;
  json meta{{"record", "trajectory_meta"},
            {"format_version", 1},
            {"scenario_id", trajectory.scenario_id},
            {"seed", trajectory.seed},
            {"config", json::parse(scenario_to_json(trajectory.config))},
            {"aborted", trajectory.aborted},
            {"abort_reason", trajectory.abort_reason}};
  out += meta.dump();
  out += "\n";
  for (std::size_t i = 0; i < trajectory.entries.size(); ++i) {
    out += entry_to_json(trajectory.entries[i], static_cast<int>(i)).dump();
    out += "\n";
  }
  return out;
}

Trajectory trajectory_from_jsonl(const std::string& text) {
  Trajectory trajectory;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw FormatError(std::string("invalid JSON record: ") + ex.what(), line_no);
    }
    try {
      const std::string record = j.value("record", "");
      if (record == "trajectory_meta") {
        trajectory.scenario_id = j.value("scenario_id", "");
        trajectory.seed = j.value("seed", std::uint64_t{0});
        trajectory.config = scenario_from_json(j.at("config").dump());
        trajectory.aborted = j.value("aborted", false);
        trajectory.abort_reason = j.value("abort_reason", "");
        have_meta = true;
      } else if (record == "step") {
        const int step = j.at("step").get<int>();
        if (step != static_cast<int>(trajectory.entries.size())) {
          throw FormatError(fmt::format("step records out of order: expected {}, got {}",
                                        trajectory.entries.size(), step),
                            line_no);
        }
        trajectory.entries.push_back(entry_from_json(j));
      } else {
        throw FormatError("unknown record type '" + record + "'", line_no);
      }
    } catch (const FormatError&) {
      throw;
    } catch (const json::exception& ex) {
      throw FormatError(std::string("missing or mistyped field: ") + ex.what(), line_no);
    }
  }
  if (!have_meta) {
    throw FormatError("trajectory file has no trajectory_meta record", 0);
  }
  return trajectory;
}

void persist_trajectory(const Trajectory& trajectory, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write trajectory file: " + path);
  }
  out << trajectory_to_jsonl(trajectory);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open trajectory file: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return trajectory_from_jsonl(buffer.str());
}

std::vector<StepMetrics> trajectory_metrics(const Trajectory& trajectory,
                                            const UtilityWeights& weights) {
  std::vector<StepMetrics> out;
  out.reserve(trajectory.entries.size());
  for (const HistoryEntry& e : trajectory.entries) {
    out.push_back(step_metrics_from(e.feedback, weights));
  }
  return out;
}

WindowMetrics trajectory_window(const Trajectory& trajectory, const UtilityWeights& weights) {
  const auto metrics = trajectory_metrics(trajectory, weights);
  return aggregate_window(metrics);
}

void write_metrics_csv(const Trajectory& trajectory, const UtilityWeights& weights,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write metrics file: " + path);
  }
  out << "step,se,v,c,b_t,utility_term\n";
  const auto metrics = trajectory_metrics(trajectory, weights);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const StepMetrics& m = metrics[i];
    out << fmt::format("{},{:.9g},{},{},{},{:.9g}\n", i, m.se, m.v, m.c,
                       trajectory.entries[i].action, m.utility_term);
  }
}

}  // namespace ranslice

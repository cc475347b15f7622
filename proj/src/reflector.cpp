#include "ranslice/reflector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "json_util.hpp"
#include "ranslice/errors.hpp"

namespace ranslice {

using detail::json;

double OracleParams::margin_value() const {
  return margin.value_or(0.05 * weights.p_reconf);
}

void OracleParams::validate() const {
  if (std::find(candidate_deltas.begin(), candidate_deltas.end(), 0) == candidate_deltas.end()) {
    throw ConfigError("oracle candidate_deltas must contain 0");
  }
  if (lookahead < 1) {
    throw ConfigError("oracle lookahead must be >= 1");
  }
  if (margin_value() < 0.0) {
    throw ConfigError("oracle margin must be >= 0");
  }
}

namespace {

double replay_score(const SimEnv& env, int step_index, int allocation, int lookahead,
                    const UtilityWeights& weights) {
  const auto feedbacks = env.replay_counterfactual(step_index, allocation, lookahead);
  double score = 0.0;
  for (const FeedbackVector& fb : feedbacks) {
    const StepMetrics m = step_metrics_from(fb, weights);
    score += m.utility_term;
  }
  return score;
}

}  // namespace

OracleVerdict oracle_hindsight_label(const SimEnv& env, int step_index, int action,
                                     const OracleParams& params) {
  params.validate();
  const int lookahead = std::min(params.lookahead, env.current_step() - step_index);
  const int lo = env.config().action_lower_bound();
  const int hi = env.config().action_upper_bound();
  const int prev_action =
      step_index == 0 ? env.config().total_prbs / 2 : env.action_history()[step_index - 1];

  // Candidate set: clamped offsets around the recorded action, deduplicated.
  std::vector<int> candidates;
  for (int delta : params.candidate_deltas) {
    const int b = std::clamp(action + delta, lo, hi);
    if (std::find(candidates.begin(), candidates.end(), b) == candidates.end()) {
      candidates.push_back(b);
    }
  }

  std::map<int, double> scores;
  for (int b : candidates) {
    scores[b] = replay_score(env, step_index, b, lookahead, params.weights);
  }

  int best = action;
  double best_score = scores.at(action);
  for (const auto& [b, score] : scores) {
    const bool better = score > best_score;
    const bool tie = score == best_score;
    const bool closer = std::abs(b - prev_action) < std::abs(best - prev_action);
    const bool same_dist_smaller = std::abs(b - prev_action) == std::abs(best - prev_action) &&
                                   b < best;
    if (better || (tie && (closer || same_dist_smaller))) {
      best = b;
      best_score = score;
    }
  }

  OracleVerdict verdict;
  const double recorded_score = scores.at(action);
  if (best != action && recorded_score < best_score - params.margin_value()) {
    verdict.label = false;
    verdict.improved_action = best;
    verdict.rationale =
        fmt::format("replay over {} steps scored {} at {:.4f} vs {} at {:.4f}", lookahead, best,
                    best_score, action, recorded_score);
  } else {
    verdict.label = true;
    verdict.rationale = fmt::format(
        "recorded action {} within margin {:.4f} of best candidate score {:.4f}", action,
        params.margin_value(), best_score);
  }
  return verdict;
}

LabeledTrajectory oracle_reflect(const SimEnv& env, const Trajectory& trajectory,
                                 const OracleParams& params) {
  params.validate();
  if (env.current_step() != static_cast<int>(trajectory.entries.size())) {
    throw DomainError("environment step count does not match the trajectory");
  }
  for (std::size_t t = 0; t < trajectory.entries.size(); ++t) {
    if (env.action_history()[t] != trajectory.entries[t].action) {
      throw DomainError(fmt::format("environment action at step {} differs from trajectory", t));
    }
  }

  LabeledTrajectory labeled;
  labeled.scenario_id = trajectory.scenario_id;
  labeled.seed = trajectory.seed;
  labeled.config = trajectory.config;
  labeled.reflector_kind = "oracle";
  labeled.reflector_params =
      fmt::format("deltas=[{},{}] lookahead={} margin={:.4f} alpha={} p_reconf={} p_qos={}",
                  *std::min_element(params.candidate_deltas.begin(), params.candidate_deltas.end()),
                  *std::max_element(params.candidate_deltas.begin(), params.candidate_deltas.end()),
                  params.lookahead, params.margin_value(), params.weights.alpha,
                  params.weights.p_reconf, params.weights.p_qos);

  for (std::size_t t = 0; t < trajectory.entries.size(); ++t) {
    const OracleVerdict verdict =
        oracle_hindsight_label(env, static_cast<int>(t), trajectory.entries[t].action, params);
    LabeledEntry entry;
    entry.entry = trajectory.entries[t];
    entry.label = verdict.label;
    entry.improved_action = verdict.improved_action;
    entry.rationale = verdict.rationale;
    labeled.entries.push_back(std::move(entry));
  }
  return labeled;
}

namespace {

std::string_view trim_view(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

std::optional<int> parse_int_view(std::string_view text) {
  text = trim_view(text);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return value;
}

}  // namespace

std::optional<VerdictLine> parse_verdict_line(const std::string& line) {
  // Grammar: STEP t: label; action=INT; reason=...
  std::string_view view = trim_view(line);
  if (!view.starts_with("STEP ") && !view.starts_with("step ")) {
    return std::nullopt;
  }
  view.remove_prefix(5);
  const auto colon = view.find(':');
  if (colon == std::string_view::npos) {
    return std::nullopt;
  }
  const auto step = parse_int_view(view.substr(0, colon));
  if (!step.has_value()) {
    return std::nullopt;
  }
  view.remove_prefix(colon + 1);

  VerdictLine verdict;
  verdict.step = *step;

  const auto semi1 = view.find(';');
  const std::string_view label_text = trim_view(view.substr(0, semi1));
  if (iequals(label_text, "true")) {
    verdict.label = true;
  } else if (iequals(label_text, "false")) {
    verdict.label = false;
  } else {
    return std::nullopt;
  }
  if (semi1 == std::string_view::npos) {
    return verdict.label ? std::optional<VerdictLine>(verdict) : std::nullopt;
  }
  view.remove_prefix(semi1 + 1);

  const auto semi2 = view.find(';');
  std::string_view action_part = trim_view(view.substr(0, semi2));
  if (action_part.starts_with("action=")) {
    action_part.remove_prefix(7);
    const auto action = parse_int_view(action_part);
    if (action.has_value()) {
      verdict.improved_action = *action;
    } else if (!iequals(action_part, "none")) {
      return std::nullopt;
    }
  }
  if (semi2 != std::string_view::npos) {
    std::string_view reason_part = trim_view(view.substr(semi2 + 1));
    if (reason_part.starts_with("reason=")) {
      reason_part.remove_prefix(7);
    }
    verdict.reason = std::string(trim_view(reason_part));
  }
  if (!verdict.label && !verdict.improved_action.has_value()) {
    return std::nullopt;  // a False verdict must propose an action
  }
  return verdict;
}

std::string build_reflection_prompt(const Trajectory& trajectory, int first_step, int last_step) {
  const SimConfig& config = trajectory.config;
  std::string prompt = fmt::format(
      "You review a PRB allocation trajectory for one network slice and judge each step.\n"
      "The controller chooses an integer PRB count in [{}, {}] each {} ms interval.\n"
      "Good steps keep spectrum efficiency high, avoid delay violations, and avoid needless "
      "reallocations.\n"
      "For every step in the range below output one line, exactly:\n"
      "STEP <t>: True\n"
      "or, when the action was suboptimal and a better PRB count exists:\n"
      "STEP <t>: False; action=<better PRB count>; reason=<short reason>\n\n",
      config.action_lower_bound(), config.action_upper_bound(),
      static_cast<std::int64_t>(std::llround(config.decision_interval_s * 1000.0)));

  prompt += fmt::format("Trajectory steps {} to {}:\n", first_step, last_step);
  for (int t = first_step; t <= last_step; ++t) {
    const HistoryEntry& e = trajectory.entries[t];
    prompt += fmt::format(
        "[step {}] prev_prbs={} action={} se={:.4f} violated={} reconfigured={} "
        "arrival_bps={} queue_delta_bytes={} dropped_bytes={} max_delay_ms={:.1f}\n",
        t, e.state.prev_action, e.action, e.feedback.se, e.feedback.violated ? 1 : 0,
        e.feedback.reconfigured ? 1 : 0,
        static_cast<std::int64_t>(std::llround(e.state.arrival_throughput_bps)),
        e.feedback.queued_delta_bytes, e.feedback.dropped_bytes, e.feedback.max_delay_s * 1000.0);
  }
  prompt += fmt::format("\nVerdicts for steps {} to {}:\n", first_step, last_step);
  return prompt;
}

LabeledTrajectory llm_reflect(const Trajectory& trajectory, const LlmReflectorConfig& config) {
  if (config.chunk_size < 1 || config.chunk_overlap < 0 ||
      config.chunk_overlap >= config.chunk_size) {
    throw ConfigError("llm reflector chunking requires 0 <= overlap < chunk_size");
  }
  ChatClient client(config.endpoint);
  const int total = static_cast<int>(trajectory.entries.size());

  // Chunk boundaries with overlap; verdicts from later chunks win.
  std::map<int, VerdictLine> verdicts;
  int first = 0;
  while (first < total) {
    const int last = std::min(first + config.chunk_size, total) - 1;
    const std::string prompt = build_reflection_prompt(trajectory, first, last);

    auto harvest = [&](const std::string& response) {
      std::istringstream lines(response);
      std::string line;
      while (std::getline(lines, line)) {
        const auto verdict = parse_verdict_line(line);
        if (verdict.has_value() && verdict->step >= first && verdict->step <= last) {
          verdicts.insert_or_assign(verdict->step, *verdict);
        }
      }
    };
    harvest(client.complete({{"user", prompt}}, config.endpoint.act_temperature));

    bool missing = false;
    for (int t = first; t <= last; ++t) {
      if (verdicts.find(t) == verdicts.end()) {
        missing = true;
        break;
      }
    }
    if (missing) {
      // One re-query for the same range, then unlabeled steps go neutral.
      harvest(client.complete({{"user", prompt}}, config.endpoint.act_temperature));
    }

    if (last == total - 1) {
      break;
    }
    first = last + 1 - config.chunk_overlap;
  }

  LabeledTrajectory labeled;
  labeled.scenario_id = trajectory.scenario_id;
  labeled.seed = trajectory.seed;
  labeled.config = trajectory.config;
  labeled.reflector_kind = "llm";
  labeled.reflector_params = fmt::format("model={} chunk_size={} overlap={}",
                                         config.endpoint.model, config.chunk_size,
                                         config.chunk_overlap);

  for (int t = 0; t < total; ++t) {
    LabeledEntry entry;
    entry.entry = trajectory.entries[t];
    const auto it = verdicts.find(t);
    if (it == verdicts.end()) {
      entry.label = true;
      entry.rationale = "(no parseable verdict; neutral True)";
      fmt::print(stderr, "warning: step {} had no parseable reflector verdict\n", t);
    } else {
      const VerdictLine& v = it->second;
      const int lo = trajectory.config.action_lower_bound();
      const int hi = trajectory.config.action_upper_bound();
      if (!v.label && v.improved_action.has_value() &&
          *v.improved_action != trajectory.entries[t].action && *v.improved_action >= lo &&
          *v.improved_action <= hi) {
        entry.label = false;
        entry.improved_action = v.improved_action;
        entry.rationale = v.reason;
      } else {
        // Consistency rule: a False verdict proposing the recorded action
        // (or an out-of-range one) normalizes to True.
        entry.label = true;
        entry.rationale = v.label ? v.reason : "(normalized to True: verdict proposed no change)";
      }
    }
    labeled.entries.push_back(std::move(entry));
  }
  return labeled;
}

namespace {

json labeled_entry_to_json(const LabeledEntry& e, int step) {
  json j{{"record", "step"},
         {"step", step},
         {"state", detail::to_json(e.entry.state)},
         {"action", e.entry.action},
         {"reflection", e.entry.reflection},
         {"analysis", e.entry.analysis},
         {"feedback", detail::to_json(e.entry.feedback)},
         {"prompt", e.entry.prompt},
         {"raw_output", e.entry.raw_output},
         {"label", e.label},
         {"rationale", e.rationale}};
  if (e.improved_action.has_value()) {
    j["improved_action"] = *e.improved_action;
  } else {
    j["improved_action"] = nullptr;
  }
  return j;
}

}  // namespace

std::string labeled_trajectory_to_jsonl(const LabeledTrajectory& labeled) {
  std::string out;
  json meta{{"record", "labeled_trajectory_meta"},
            {"format_version", 1},
            {"scenario_id", labeled.scenario_id},
            {"seed", labeled.seed},
            {"config", json::parse(scenario_to_json(labeled.config))},
            {"reflector_kind", labeled.reflector_kind},
            {"reflector_params", labeled.reflector_params}};
  out += meta.dump();
  out += "\n";
  for (std::size_t i = 0; i < labeled.entries.size(); ++i) {
    out += labeled_entry_to_json(labeled.entries[i], static_cast<int>(i)).dump();
    out += "\n";
  }
  return out;
}

LabeledTrajectory labeled_trajectory_from_jsonl(const std::string& text) {
  LabeledTrajectory labeled;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) {
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
      if (record == "labeled_trajectory_meta") {
        labeled.scenario_id = j.value("scenario_id", "");
        labeled.seed = j.value("seed", std::uint64_t{0});
        labeled.config = scenario_from_json(j.at("config").dump());
        labeled.reflector_kind = j.value("reflector_kind", "");
        labeled.reflector_params = j.value("reflector_params", "");
        have_meta = true;
      } else if (record == "step") {
        const int step = j.at("step").get<int>();
        if (step != static_cast<int>(labeled.entries.size())) {
          throw FormatError(fmt::format("step records out of order: expected {}, got {}",
                                        labeled.entries.size(), step),
                            line_no);
        }
        LabeledEntry e;
        e.entry.state = detail::state_from_json(j.at("state"));
        e.entry.action = j.at("action").get<int>();
        e.entry.reflection = j.at("reflection").get<std::string>();
        e.entry.analysis = j.at("analysis").get<std::string>();
        e.entry.feedback = detail::feedback_from_json(j.at("feedback"));
        e.entry.prompt = j.at("prompt").get<std::string>();
        e.entry.raw_output = j.at("raw_output").get<std::string>();
        e.label = j.at("label").get<bool>();
        if (j.contains("improved_action") && !j.at("improved_action").is_null()) {
          e.improved_action = j.at("improved_action").get<int>();
        }
        e.rationale = j.value("rationale", "");
        if (!e.label && (!e.improved_action.has_value() ||
                         *e.improved_action == e.entry.action)) {
          throw FormatError("False label without a distinct improved_action", line_no);
        }
        if (e.label && e.improved_action.has_value()) {
          throw FormatError("True label with an improved_action", line_no);
        }
        labeled.entries.push_back(std::move(e));
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
    throw FormatError("labeled trajectory file has no meta record", 0);
  }
  return labeled;
}

void persist_labeled_trajectory(const LabeledTrajectory& labeled, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write labeled trajectory file: " + path);
  }
  out << labeled_trajectory_to_jsonl(labeled);
}

LabeledTrajectory load_labeled_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open labeled trajectory file: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return labeled_trajectory_from_jsonl(buffer.str());
}

}  // namespace ranslice

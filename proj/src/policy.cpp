#include "ranslice/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ranslice/agent.hpp"
#include "ranslice/errors.hpp"

namespace ranslice {

using nlohmann::json;

double Policy::logprob(const std::string&, const StateVector&, const std::string&) const {
  throw CapabilityError(name() + " backend has no exact log-probabilities");
}

ActionProbability Policy::action_prob(const std::string& prompt, const StateVector& state,
                                      int target_action, int m) {
  if (m < 1) {
    throw DomainError("action_prob on a sampling backend requires m >= 1");
  }
  const auto samples = sample_k(prompt, state, m);
  int hits = 0;
  for (const std::string& raw : samples) {
    try {
      ActorTriplet triplet = extract_triplet(raw, std::numeric_limits<int>::min(),
                                             std::numeric_limits<int>::max());
      if (triplet.action == target_action) {
        ++hits;
      }
    } catch (const Error&) {
      // unparseable sample: cannot match the target action
    }
  }
  return ActionProbability{static_cast<double>(hits) / static_cast<double>(m), false};
}

std::shared_ptr<const Policy> Policy::snapshot() const {
  throw CapabilityError(name() + " backend cannot be snapshotted as a reference model");
}

ScriptedPolicy::ScriptedPolicy(std::string rule_name, Rule rule)
    : rule_name_(std::move(rule_name)),
      text_rule_([rule = std::move(rule)](const StateVector& s) {
        return render_actor_output(rule(s));
      }) {}

ScriptedPolicy::ScriptedPolicy(std::string rule_name, TextRule text_rule)
    : rule_name_(std::move(rule_name)), text_rule_(std::move(text_rule)) {}

std::string ScriptedPolicy::act(const std::string&, const StateVector& state) {
  return text_rule_(state);
}

std::vector<std::string> ScriptedPolicy::sample_k(const std::string& prompt,
                                                  const StateVector& state, int m) {
  if (m < 1) {
    throw DomainError("sample_k requires m >= 1");
  }
  std::vector<std::string> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) {
    out.push_back(act(prompt, state));
  }
  return out;
}

std::unique_ptr<ScriptedPolicy> make_hold_policy() {
  return std::make_unique<ScriptedPolicy>("hold",
                                          [](const StateVector& s) { return s.prev_action; });
}

std::unique_ptr<ScriptedPolicy> make_malformed_policy() {
  return std::make_unique<ScriptedPolicy>(
      "malformed",
      ScriptedPolicy::TextRule{[](const StateVector&) { return std::string("keep it as is"); }});
}

const std::array<int, ToySoftmaxPolicy::kNumActions>& ToySoftmaxPolicy::action_deltas() {
  static const std::array<int, kNumActions> deltas{-2, -1, 0, 1, 2};
  return deltas;
}

ToySoftmaxPolicy::ToySoftmaxPolicy(int lower_bound, int upper_bound, ToyFeatureScale scale,
                                   std::uint64_t seed, double act_temperature,
                                   double rollout_temperature)
    : lower_bound_(lower_bound),
      upper_bound_(upper_bound),
      scale_(scale),
      seed_(seed),
      act_temperature_(act_temperature),
      rollout_temperature_(rollout_temperature),
      theta_(kNumActions * kNumFeatures, 0.0),
      act_stream_(derive_seed(seed, "toy-act")),
      rollout_stream_(derive_seed(seed, "toy-rollout")) {
  if (lower_bound_ < 1 || upper_bound_ <= lower_bound_) {
    throw ConfigError("toy policy bounds must satisfy 1 <= lower < upper");
  }
  if (act_temperature_ < 0.0 || rollout_temperature_ < 0.0) {
    throw ConfigError("temperatures must be >= 0");
  }
}

int ToySoftmaxPolicy::clamp_action(int action) const {
  return std::clamp(action, lower_bound_, upper_bound_);
}

std::array<double, ToySoftmaxPolicy::kNumFeatures> ToySoftmaxPolicy::features(
    const StateVector& state) const {
  std::array<double, kNumFeatures> f{};
  f[0] = 1.0;
  f[1] = static_cast<double>(state.prev_action) / static_cast<double>(scale_.total_prbs);
  f[2] = std::min(state.se / scale_.se_scale, 1.5);
  f[3] = state.queued_delta_bytes > 0 ? 1.0 : (state.queued_delta_bytes < 0 ? -1.0 : 0.0);
  // Fraction of the interval's arrivals that stayed queued.
  const double arrived_bytes = state.arrival_throughput_bps * scale_.tau_s / 8.0;
  f[4] = std::clamp(static_cast<double>(state.queued_delta_bytes) / (arrived_bytes + 1.0), -1.0,
                    1.0);
  f[5] = state.dropped_bytes > 0 ? 1.0 : 0.0;
  return f;
}

std::array<double, ToySoftmaxPolicy::kNumActions> ToySoftmaxPolicy::action_scores(
    const StateVector& state) const {
  const auto f = features(state);
  std::array<double, kNumActions> scores{};
  for (int k = 0; k < kNumActions; ++k) {
    double z = 0.0;
    for (int j = 0; j < kNumFeatures; ++j) {
      z += theta_[k * kNumFeatures + j] * f[j];
    }
    scores[k] = z;
  }
  return scores;
}

namespace {

std::array<double, ToySoftmaxPolicy::kNumActions> softmax(
    const std::array<double, ToySoftmaxPolicy::kNumActions>& scores) {
  const double zmax = *std::max_element(scores.begin(), scores.end());
  std::array<double, ToySoftmaxPolicy::kNumActions> p{};
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(scores[k] - zmax);
    sum += p[k];
  }
  for (double& x : p) {
    x /= sum;
  }
  return p;
}

}  // namespace

std::map<int, double> ToySoftmaxPolicy::action_distribution(const StateVector& state,
                                                            double temperature) const {
  if (temperature < 0.0) {
    throw DomainError("temperature must be >= 0");
  }
  std::map<int, double> merged;
  if (temperature == 0.0) {
    merged[greedy_action(state)] = 1.0;
    return merged;
  }
  auto scores = action_scores(state);
  for (double& z : scores) {
    z /= temperature;
  }
  const auto p = softmax(scores);
  for (int k = 0; k < kNumActions; ++k) {
    merged[clamp_action(state.prev_action + action_deltas()[k])] += p[k];
  }
  return merged;
}

bool ToySoftmaxPolicy::is_reachable(const StateVector& state, int absolute_action) const {
  for (int delta : action_deltas()) {
    if (clamp_action(state.prev_action + delta) == absolute_action) {
      return true;
    }
  }
  return false;
}

int ToySoftmaxPolicy::greedy_action(const StateVector& state) const {
  const auto dist = action_distribution(state, 1.0);
  int best = dist.begin()->first;
  double best_p = dist.begin()->second;
  for (const auto& [action, p] : dist) {
    if (p > best_p) {  // ties keep the lowest action (map is ordered)
      best = action;
      best_p = p;
    }
  }
  return best;
}

int ToySoftmaxPolicy::sample_action(const StateVector& state) {
  const auto dist = action_distribution(state, rollout_temperature_);
  double u = rollout_stream_.uniform01();
  double acc = 0.0;
  int last = dist.begin()->first;
  for (const auto& [action, p] : dist) {
    acc += p;
    last = action;
    if (u < acc) {
      return action;
    }
  }
  return last;
}

std::string ToySoftmaxPolicy::act(const std::string&, const StateVector& state) {
  if (act_temperature_ == 0.0) {
    return render_actor_output(greedy_action(state));
  }
  const auto dist = action_distribution(state, act_temperature_);
  double u = act_stream_.uniform01();
  double acc = 0.0;
  int pick = dist.begin()->first;
  for (const auto& [action, p] : dist) {
    acc += p;
    pick = action;
    if (u < acc) {
      break;
    }
  }
  return render_actor_output(pick);
}

std::vector<std::string> ToySoftmaxPolicy::sample_k(const std::string&, const StateVector& state,
                                                    int m) {
  if (m < 1) {
    throw DomainError("sample_k requires m >= 1");
  }
  std::vector<std::string> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) {
    out.push_back(render_actor_output(sample_action(state)));
  }
  return out;
}

int ToySoftmaxPolicy::parse_output_action(const std::string& output) const {
  ActorTriplet triplet = extract_triplet(output, lower_bound_, upper_bound_);
  return triplet.action;
}

double ToySoftmaxPolicy::logprob_action(const StateVector& state, int absolute_action) const {
  if (!is_reachable(state, absolute_action)) {
    throw ParseError(fmt::format("action {} is not reachable from previous action {}",
                                 absolute_action, state.prev_action));
  }
  const auto dist = action_distribution(state);
  return std::log(dist.at(absolute_action));
}

double ToySoftmaxPolicy::logprob(const std::string&, const StateVector& state,
                                 const std::string& output) const {
  return logprob_action(state, parse_output_action(output));
}

ActionProbability ToySoftmaxPolicy::action_prob(const std::string&, const StateVector& state,
                                                int target_action, int) {
  const auto dist = action_distribution(state, rollout_temperature_);
  const auto it = dist.find(target_action);
  return ActionProbability{it == dist.end() ? 0.0 : it->second, true};
}

std::shared_ptr<const Policy> ToySoftmaxPolicy::snapshot() const {
  return std::make_shared<const ToySoftmaxPolicy>(*this);
}

std::vector<double> ToySoftmaxPolicy::logprob_gradient(const StateVector& state,
                                                       int absolute_action) const {
  if (!is_reachable(state, absolute_action)) {
    throw ParseError(fmt::format("action {} is not reachable from previous action {}",
                                 absolute_action, state.prev_action));
  }
  const auto f = features(state);
  const auto p = softmax(action_scores(state));
  double mass = 0.0;
  std::array<bool, kNumActions> in_set{};
  for (int k = 0; k < kNumActions; ++k) {
    in_set[k] = clamp_action(state.prev_action + action_deltas()[k]) == absolute_action;
    if (in_set[k]) {
      mass += p[k];
    }
  }
  // d log P / d z_k = p_k * (1[k in set]/P - 1); chain through z = theta * f.
  std::vector<double> grad(kNumActions * kNumFeatures, 0.0);
  for (int k = 0; k < kNumActions; ++k) {
    const double dz = p[k] * ((in_set[k] ? 1.0 / mass : 0.0) - 1.0);
    for (int j = 0; j < kNumFeatures; ++j) {
      grad[k * kNumFeatures + j] = dz * f[j];
    }
  }
  return grad;
}

void ToySoftmaxPolicy::set_theta(std::vector<double> theta) {
  if (theta.size() != static_cast<std::size_t>(kNumActions * kNumFeatures)) {
    throw ConfigError(fmt::format("theta must have {} entries", kNumActions * kNumFeatures));
  }
  for (double w : theta) {
    if (!std::isfinite(w)) {
      throw ConfigError("theta entries must be finite");
    }
  }
  theta_ = std::move(theta);
}

void ToySoftmaxPolicy::apply_gradient(const std::vector<double>& gradient, double learning_rate) {
  if (gradient.size() != theta_.size()) {
    throw ConfigError("gradient size mismatch");
  }
  for (std::size_t i = 0; i < theta_.size(); ++i) {
    theta_[i] -= learning_rate * gradient[i];
  }
}

void save_toy_policy(const ToySoftmaxPolicy& policy, const std::string& path) {
  json j{{"backend", "toy_softmax"},
         {"lower_bound", policy.lower_bound()},
         {"upper_bound", policy.upper_bound()},
         {"seed", policy.seed()},
         {"act_temperature", policy.act_temperature()},
         {"rollout_temperature", policy.rollout_temperature()},
         {"feature_scale",
          {{"total_prbs", policy.feature_scale().total_prbs},
           {"se_scale", policy.feature_scale().se_scale},
           {"tau_s", policy.feature_scale().tau_s}}},
         {"theta", policy.theta()}};
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write policy file: " + path);
  }
  out << j.dump(2) << "\n";
}

std::unique_ptr<ToySoftmaxPolicy> load_toy_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open policy file: " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("policy file is not valid JSON: ") + ex.what());
  }
  try {
    if (j.at("backend").get<std::string>() != "toy_softmax") {
      throw FormatError("policy file backend is not toy_softmax");
    }
    ToyFeatureScale scale;
    scale.total_prbs = j.at("feature_scale").at("total_prbs").get<int>();
    scale.se_scale = j.at("feature_scale").at("se_scale").get<double>();
    scale.tau_s = j.at("feature_scale").at("tau_s").get<double>();
    auto policy = std::make_unique<ToySoftmaxPolicy>(
        j.at("lower_bound").get<int>(), j.at("upper_bound").get<int>(), scale,
        j.at("seed").get<std::uint64_t>(), j.value("act_temperature", 0.0),
        j.value("rollout_temperature", 1.0));
    policy->set_theta(j.at("theta").get<std::vector<double>>());
    return policy;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("policy file field error: ") + ex.what());
  }
}

}  // namespace ranslice

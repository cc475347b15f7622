#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ranslice/metrics.hpp"
#include "ranslice/rng.hpp"

namespace ranslice {

struct PolicyCapabilities {
  bool has_exact_logprob = false;
  bool supports_temperature = false;
};

struct ActionProbability {
  double value = 0.0;
  bool exact = false;
};

/// Uniform interface over the acting backends: a remote LLM endpoint,
/// deterministic scripted rules, and the differentiable toy softmax policy.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string name() const = 0;
  virtual PolicyCapabilities capabilities() const = 0;

  /// One completion for the prompt at the acting temperature.
  virtual std::string act(const std::string& prompt, const StateVector& state) = 0;

  /// m independent samples at the rollout temperature (multiset semantics).
  virtual std::vector<std::string> sample_k(const std::string& prompt, const StateVector& state,
                                            int m) = 0;

  /// Log probability of the action encoded in `output`. Only backends with
  /// exact log-probabilities support this.
  virtual double logprob(const std::string& prompt, const StateVector& state,
                         const std::string& output) const;

  /// Probability of emitting `target_action`: exact where available,
  /// otherwise the empirical frequency over m fresh samples.
  virtual ActionProbability action_prob(const std::string& prompt, const StateVector& state,
                                        int target_action, int m);

  /// Deep frozen copy usable as a KTO reference model.
  virtual std::shared_ptr<const Policy> snapshot() const;
};

/// Deterministic rule-based policy. An action rule returns an absolute PRB
/// count rendered through the canonical output template; a text rule emits
/// its string verbatim (useful for malformed-output tests).
class ScriptedPolicy : public Policy {
 public:
  using Rule = std::function<int(const StateVector&)>;
  using TextRule = std::function<std::string(const StateVector&)>;

  ScriptedPolicy(std::string rule_name, Rule rule);
  ScriptedPolicy(std::string rule_name, TextRule text_rule);

  std::string name() const override { return "scripted:" + rule_name_; }
  PolicyCapabilities capabilities() const override { return {false, false}; }
  std::string act(const std::string& prompt, const StateVector& state) override;
  std::vector<std::string> sample_k(const std::string& prompt, const StateVector& state,
                                    int m) override;

 private:
  std::string rule_name_;
  TextRule text_rule_;
};

/// Repeats the previous allocation forever.
std::unique_ptr<ScriptedPolicy> make_hold_policy();

/// Emits text that never parses; exercises the fallback path.
std::unique_ptr<ScriptedPolicy> make_malformed_policy();

/// Feature normalization constants for the toy policy, fixed at construction.
struct ToyFeatureScale {
  int total_prbs = 50;
  double se_scale = 6.0;
  double tau_s = 0.1;
};

/// Linear softmax policy over relative allocation deltas {-2,-1,0,+1,+2}.
/// Deltas are applied to the previous action and clamped to the bounds;
/// clamped duplicates merge their probability mass. Only the action token
/// carries probability; the reflection/analysis text is a fixed template.
class ToySoftmaxPolicy : public Policy {
 public:
  static constexpr int kNumActions = 5;
  static constexpr int kNumFeatures = 6;
  static const std::array<int, kNumActions>& action_deltas();

  ToySoftmaxPolicy(int lower_bound, int upper_bound, ToyFeatureScale scale, std::uint64_t seed,
                   double act_temperature = 0.0, double rollout_temperature = 1.0);

  std::string name() const override { return "toy_softmax"; }
  PolicyCapabilities capabilities() const override { return {true, true}; }
  std::string act(const std::string& prompt, const StateVector& state) override;
  std::vector<std::string> sample_k(const std::string& prompt, const StateVector& state,
                                    int m) override;
  double logprob(const std::string& prompt, const StateVector& state,
                 const std::string& output) const override;
  ActionProbability action_prob(const std::string& prompt, const StateVector& state,
                                int target_action, int m) override;
  std::shared_ptr<const Policy> snapshot() const override;

  /// Features: bias, normalized previous action, normalized SE, sign of the
  /// queue delta, queue-pressure ratio, drop indicator.
  std::array<double, kNumFeatures> features(const StateVector& state) const;

  std::array<double, kNumActions> action_scores(const StateVector& state) const;

  /// Probability over absolute actions with clamped deltas merged;
  /// normalized to 1 within 1e-12. Temperature 1 is the model distribution
  /// used for log-probabilities; temperature 0 is a point mass at the
  /// greedy action. sample_k and action_prob use the rollout temperature.
  std::map<int, double> action_distribution(const StateVector& state,
                                            double temperature = 1.0) const;

  bool is_reachable(const StateVector& state, int absolute_action) const;
  int greedy_action(const StateVector& state) const;
  int sample_action(const StateVector& state);

  double logprob_action(const StateVector& state, int absolute_action) const;

  /// Gradient of logprob_action with respect to theta (row-major K x F).
  std::vector<double> logprob_gradient(const StateVector& state, int absolute_action) const;

  const std::vector<double>& theta() const { return theta_; }
  void set_theta(std::vector<double> theta);
  /// theta -= learning_rate * gradient
  void apply_gradient(const std::vector<double>& gradient, double learning_rate);

  int lower_bound() const { return lower_bound_; }
  int upper_bound() const { return upper_bound_; }
  const ToyFeatureScale& feature_scale() const { return scale_; }
  double act_temperature() const { return act_temperature_; }
  double rollout_temperature() const { return rollout_temperature_; }
  std::uint64_t seed() const { return seed_; }

 private:
  int clamp_action(int action) const;
  int parse_output_action(const std::string& output) const;

  int lower_bound_;
  int upper_bound_;
  ToyFeatureScale scale_;
  std::uint64_t seed_;
  double act_temperature_;
  double rollout_temperature_;
  std::vector<double> theta_;  // K x F row-major
  DeterministicStream act_stream_;
  DeterministicStream rollout_stream_;  // dedicated stream for sample_k
};

void save_toy_policy(const ToySoftmaxPolicy& policy, const std::string& path);
std::unique_ptr<ToySoftmaxPolicy> load_toy_policy(const std::string& path);

}  // namespace ranslice

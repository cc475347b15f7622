#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "ranslice/agent.hpp"
#include "ranslice/errors.hpp"
#include "ranslice/kto.hpp"
#include "ranslice/policy.hpp"
#include "ranslice/rng.hpp"

using namespace ranslice;

namespace {

constexpr int kLo = 1;
constexpr int kHi = 49;

ToySoftmaxPolicy make_toy(std::uint64_t seed = 1) {
  return ToySoftmaxPolicy(kLo, kHi, ToyFeatureScale{50, 6.0, 0.1}, seed);
}

StateVector state_with(int prev, double se = 1.0, std::int64_t delta = 0,
                       std::uint64_t dropped = 0) {
  StateVector s;
  s.prev_action = prev;
  s.se = se;
  s.arrival_throughput_bps = 4e6;
  s.queued_delta_bytes = delta;
  s.dropped_bytes = dropped;
  return s;
}

PreferenceExample example_for(const StateVector& context, int action, bool positive,
                              ExampleSource source = ExampleSource::Reflector, int step = 0) {
  PreferenceExample e;
  e.prompt = "prompt step " + std::to_string(step);
  e.completion = render_actor_output(action);
  e.positive = positive;
  e.source = source;
  e.step = step;
  e.iteration = 1;
  e.context = context;
  e.action = action;
  return e;
}

std::vector<double> random_theta(DeterministicStream& stream, double span = 1.0) {
  std::vector<double> theta(ToySoftmaxPolicy::kNumActions * ToySoftmaxPolicy::kNumFeatures);
  for (double& w : theta) {
    w = stream.uniform(-span, span);
  }
  return theta;
}

/// Synthetic labeled trajectory over two state archetypes: calm steps hold
/// (True), pressure steps should have gone up (False, improved = prev + 2).
LabeledTrajectory synthetic_labeled(int total_steps, const std::vector<int>& false_steps) {
  LabeledTrajectory labeled;
  labeled.scenario_id = "synthetic";
  labeled.seed = 0;
  labeled.config = default_scenario();
  labeled.reflector_kind = "oracle";
  for (int t = 0; t < total_steps; ++t) {
    const bool is_false =
        std::find(false_steps.begin(), false_steps.end(), t) != false_steps.end();
    LabeledEntry e;
    const int prev = 25;
    e.entry.state = is_false ? state_with(prev, 0.8, 4000, 512) : state_with(prev, 1.2, -200, 0);
    e.entry.prompt = "prompt step " + std::to_string(t);
    e.entry.action = is_false ? prev : prev;  // recorded action: hold
    e.entry.raw_output = render_actor_output(e.entry.action);
    e.entry.reflection = "r";
    e.entry.analysis = "a";
    e.label = !is_false;
    if (is_false) {
      e.improved_action = prev + 2;
      e.rationale = "pressure called for more PRBs";
    }
    labeled.entries.push_back(std::move(e));
  }
  return labeled;
}

}  // namespace

TEST_CASE("kto weights: balanced, skewed, one-sided") {
  const KtoWeights balanced = kto_weights(10, 10);
  CHECK(balanced.lambda_d == 1.0);
  CHECK(balanced.lambda_u == 1.0);
  const KtoWeights skewed = kto_weights(3, 9);
  CHECK(skewed.lambda_d == 3.0);
  CHECK(skewed.lambda_u == 1.0);
  CHECK_THROWS_AS(kto_weights(0, 5), OneSidedDatasetError);
  CHECK_THROWS_AS(kto_weights(5, 0), OneSidedDatasetError);
  // Weight identity: lambda_d * n_pos == lambda_u * n_neg == max(n_pos, n_neg).
  for (auto [np, nn] : std::vector<std::pair<int, int>>{{1, 7}, {4, 4}, {9, 2}}) {
    const KtoWeights w = kto_weights(np, nn);
    CHECK(w.lambda_d * np == doctest::Approx(std::max(np, nn)).epsilon(1e-15));
    CHECK(w.lambda_u * nn == doctest::Approx(std::max(np, nn)).epsilon(1e-15));
  }
}

TEST_CASE("kto reward is zero against an identical reference and tracks the softmax shift") {
  ToySoftmaxPolicy policy = make_toy(2);
  const auto reference = policy.snapshot();
  const StateVector s = state_with(25);
  for (int action : {23, 24, 25, 26, 27}) {
    CHECK(kto_reward(policy, *reference, example_for(s, action, true)) == 0.0);
  }

  // Bump delta 0's bias by +1: hand-computed softmax ratio.
  std::vector<double> theta = policy.theta();
  theta[2 * ToySoftmaxPolicy::kNumFeatures + 0] += 1.0;
  policy.set_theta(theta);
  const double p_new = std::exp(1.0) / (std::exp(1.0) + 4.0);
  const double expected = std::log(p_new) - std::log(0.2);
  CHECK(kto_reward(policy, *reference, example_for(s, 25, true)) ==
        doctest::Approx(expected).epsilon(1e-12));

  // Only the action token carries probability: template text is irrelevant.
  PreferenceExample odd = example_for(s, 25, true);
  odd.completion = "<reflection>  totally different text </reflection>\n<action> 25 </action>"
                   "<analysis>whatever</analysis>";
  CHECK(kto_reward(policy, *reference, odd) ==
        kto_reward(policy, *reference, example_for(s, 25, true)));
}

TEST_CASE("z0: identity, clamp, and a hand-computed cyclic shift") {
  ToySoftmaxPolicy policy = make_toy(3);
  const auto reference = policy.snapshot();
  const StateVector s = state_with(25);
  std::vector<PreferenceExample> batch{example_for(s, 24, true), example_for(s, 25, false),
                                       example_for(s, 27, true)};
  CHECK(estimate_z0(policy, *reference, batch) == 0.0);

  DeterministicStream stream(derive_seed(3, "theta"));
  policy.set_theta(random_theta(stream));
  const double z0 = estimate_z0(policy, *reference, batch);
  CHECK(z0 >= 0.0);

  // Manual cyclic shift: prompt i with completion i+1 (mod 3).
  double manual = 0.0;
  const int actions[] = {24, 25, 27};
  for (int i = 0; i < 3; ++i) {
    const int completion_action = actions[(i + 1) % 3];
    const std::string completion = render_actor_output(completion_action);
    manual += policy.logprob("", s, completion) - reference->logprob("", s, completion);
  }
  manual = std::max(0.0, manual / 3.0);
  CHECK(z0 == doctest::Approx(manual).epsilon(1e-12));

  // Batch of one: defined as zero.
  std::vector<PreferenceExample> single{example_for(s, 24, true)};
  CHECK(estimate_z0(policy, *reference, single) == 0.0);
}

TEST_CASE("kto loss at initialization is exactly half the example weight") {
  ToySoftmaxPolicy policy = make_toy(4);
  const auto reference = policy.snapshot();
  const StateVector s = state_with(25);
  std::vector<PreferenceExample> batch{example_for(s, 24, true), example_for(s, 26, false)};
  const KtoWeights weights = kto_weights(1, 1);
  const KtoLossResult result = kto_loss(policy, *reference, batch, 0.37, weights);
  CHECK(std::abs(result.mean_loss - 0.5) < 1e-12);
  for (double v : result.v) {
    CHECK(std::abs(v - 0.5) < 1e-12);
  }

  // Unbalanced weights: per-example loss is 0.5 * lambda_y exactly.
  const KtoWeights skewed = kto_weights(1, 3);
  std::vector<PreferenceExample> skewed_batch{
      example_for(s, 24, true), example_for(s, 25, false), example_for(s, 26, false),
      example_for(s, 27, false)};
  const KtoLossResult skewed_result = kto_loss(policy, *reference, skewed_batch, 0.1, skewed);
  CHECK(std::abs(skewed_result.v[0] - 0.5 * skewed.lambda_d) < 1e-12);
  for (int i = 1; i < 4; ++i) {
    CHECK(std::abs(skewed_result.v[i] - 0.5 * skewed.lambda_u) < 1e-12);
  }
}

TEST_CASE("a hugely preferred positive saturates: v -> lambda_d, loss -> 0") {
  ToySoftmaxPolicy policy = make_toy(5);
  ToySoftmaxPolicy reference_policy = make_toy(5);
  // Reference despises action 25 (delta 0), so r_theta is very large.
  std::vector<double> theta(ToySoftmaxPolicy::kNumActions * ToySoftmaxPolicy::kNumFeatures, 0.0);
  theta[2 * ToySoftmaxPolicy::kNumFeatures + 0] = -40.0;
  reference_policy.set_theta(theta);
  const StateVector s = state_with(25);
  std::vector<PreferenceExample> batch{example_for(s, 25, true)};
  const KtoWeights weights{2.0, 1.0};
  const KtoLossResult result = kto_loss(policy, reference_policy, batch, 1.0, weights, 0.0);
  CHECK(std::abs(result.v[0] - weights.lambda_d) < 1e-6);
  CHECK(std::abs(result.mean_loss) < 1e-6);
}

TEST_CASE("kto loss matches an independent scalar re-implementation") {
  DeterministicStream stream(derive_seed(6, "theta"));
  for (int trial = 0; trial < 5; ++trial) {
    ToySoftmaxPolicy policy = make_toy(trial + 10);
    ToySoftmaxPolicy reference_policy = make_toy(trial + 10);
    policy.set_theta(random_theta(stream));
    reference_policy.set_theta(random_theta(stream));

    std::vector<PreferenceExample> batch;
    for (int i = 0; i < 4; ++i) {
      const int prev = 5 + static_cast<int>(stream.next_u64() % 40);
      StateVector s = state_with(prev, stream.uniform(0.0, 6.0),
                                 static_cast<std::int64_t>(stream.uniform(-4000.0, 4000.0)));
      const int delta_idx = static_cast<int>(stream.next_u64() % 5);
      const int action = std::clamp(prev + ToySoftmaxPolicy::action_deltas()[delta_idx], kLo, kHi);
      batch.push_back(example_for(s, action, stream.uniform01() < 0.5, ExampleSource::Rollout, i));
    }
    const KtoWeights weights = kto_weights(3, 7);
    const double beta = 0.25;
    const double z0 = estimate_z0(policy, reference_policy, batch);
    const KtoLossResult result = kto_loss(policy, reference_policy, batch, beta, weights, z0);

    // Duplicate formula, written independently from raw logprob calls.
    double manual_total = 0.0;
    for (const auto& e : batch) {
      const double r = policy.logprob_action(e.context, *e.action) -
                       reference_policy.logprob_action(e.context, *e.action);
      const double lam = e.positive ? weights.lambda_d : weights.lambda_u;
      const double arg = e.positive ? beta * (r - z0) : beta * (z0 - r);
      const double v = lam / (1.0 + std::exp(-arg));
      manual_total += lam - v;
    }
    CHECK(std::abs(result.mean_loss - manual_total / 4.0) < 1e-10);

    // Strict bounds: v and loss in (0, lambda_y).
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double lam = batch[i].positive ? weights.lambda_d : weights.lambda_u;
      CHECK(result.v[i] > 0.0);
      CHECK(result.v[i] < lam);
    }
  }
}

TEST_CASE("analytic kto gradient matches central finite differences") {
  DeterministicStream stream(derive_seed(7, "fd"));
  for (int trial = 0; trial < 8; ++trial) {
    ToySoftmaxPolicy policy = make_toy(trial + 20);
    ToySoftmaxPolicy reference_policy = make_toy(trial + 120);
    policy.set_theta(random_theta(stream));
    reference_policy.set_theta(random_theta(stream));

    std::vector<PreferenceExample> batch;
    for (int i = 0; i < 6; ++i) {
      const int prev = 3 + static_cast<int>(stream.next_u64() % 44);
      StateVector s = state_with(prev, stream.uniform(0.0, 6.0),
                                 static_cast<std::int64_t>(stream.uniform(-4000.0, 4000.0)),
                                 stream.uniform01() < 0.3 ? 512 : 0);
      const int delta_idx = static_cast<int>(stream.next_u64() % 5);
      const int action = std::clamp(prev + ToySoftmaxPolicy::action_deltas()[delta_idx], kLo, kHi);
      batch.push_back(example_for(s, action, stream.uniform01() < 0.5));
    }
    const KtoWeights weights = kto_weights(2, 5);
    const double beta = 0.1;
    const double z0 = estimate_z0(policy, reference_policy, batch);
    const KtoLossGradient analytic =
        kto_loss_gradient(policy, reference_policy, batch, beta, weights, z0);

    const double h = 1e-5;
    const std::vector<double> theta = policy.theta();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      ToySoftmaxPolicy perturbed = policy;
      std::vector<double> plus = theta;
      plus[i] += h;
      perturbed.set_theta(plus);
      const double up =
          kto_loss(perturbed, reference_policy, batch, beta, weights, z0).mean_loss;
      std::vector<double> minus = theta;
      minus[i] -= h;
      perturbed.set_theta(minus);
      const double down =
          kto_loss(perturbed, reference_policy, batch, beta, weights, z0).mean_loss;
      const double fd = (up - down) / (2.0 * h);
      const double rel = std::abs(fd - analytic.gradient[i]) /
                         std::max({std::abs(fd), std::abs(analytic.gradient[i]), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-4);
  }
}

namespace {

/// Emits a scripted cycle of raw outputs; sample_k pulls from the cycle.
class CyclingPolicy : public Policy {
 public:
  explicit CyclingPolicy(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {}
  std::string name() const override { return "cycling"; }
  PolicyCapabilities capabilities() const override { return {false, false}; }
  std::string act(const std::string&, const StateVector&) override {
    const std::string out = outputs_[cursor_ % outputs_.size()];
    ++cursor_;
    return out;
  }
  std::vector<std::string> sample_k(const std::string& prompt, const StateVector& state,
                                    int m) override {
    std::vector<std::string> out;
    for (int i = 0; i < m; ++i) {
      out.push_back(act(prompt, state));
    }
    return out;
  }

 private:
  std::vector<std::string> outputs_;
  std::size_t cursor_ = 0;
};

LabeledEntry false_entry(int prev, int action, int improved) {
  LabeledEntry e;
  e.entry.state = state_with(prev, 0.8, 4000, 0);
  e.entry.prompt = "p";
  e.entry.action = action;
  e.entry.raw_output = render_actor_output(action);
  e.label = false;
  e.improved_action = improved;
  return e;
}

}  // namespace

TEST_CASE("rollout_refine labels samples against the improved action") {
  CyclingPolicy cycling({render_actor_output(10), render_actor_output(8),
                         render_actor_output(10), render_actor_output(12)});
  const LabeledEntry entry = false_entry(10, 8, 10);
  const RolloutOutcome outcome = rollout_refine(cycling, entry, 4, 0.4, 1);
  REQUIRE(outcome.examples.size() == 4);
  CHECK(outcome.examples[0].positive);
  CHECK_FALSE(outcome.examples[1].positive);
  CHECK(outcome.examples[2].positive);
  CHECK_FALSE(outcome.examples[3].positive);
  CHECK(outcome.improved_action_prob == 0.5);
  CHECK(outcome.saturated);  // 0.5 > rho = 0.4

  CyclingPolicy strict({render_actor_output(10), render_actor_output(8),
                        render_actor_output(10), render_actor_output(12)});
  const RolloutOutcome unsaturated = rollout_refine(strict, entry, 4, 0.5, 1);
  CHECK_FALSE(unsaturated.saturated);  // 0.5 > 0.5 is false
}

TEST_CASE("unparseable rollouts count as negatives") {
  CyclingPolicy cycling({render_actor_output(10), "garbage with no tags"});
  const LabeledEntry entry = false_entry(10, 8, 10);
  const RolloutOutcome outcome = rollout_refine(cycling, entry, 2, 0.9, 1);
  CHECK(outcome.examples[0].positive);
  CHECK_FALSE(outcome.examples[1].positive);
  CHECK_FALSE(outcome.examples[1].action.has_value());
}

TEST_CASE("a policy already deterministic at the improved action saturates immediately") {
  ToySoftmaxPolicy policy = make_toy(8);
  std::vector<double> theta(ToySoftmaxPolicy::kNumActions * ToySoftmaxPolicy::kNumFeatures, 0.0);
  theta[4 * ToySoftmaxPolicy::kNumFeatures + 0] = 40.0;  // all mass on delta +2
  policy.set_theta(theta);
  const LabeledEntry entry = false_entry(25, 25, 27);
  const RolloutOutcome outcome = rollout_refine(policy, entry, 4, 0.5, 1);
  for (const auto& e : outcome.examples) {
    CHECK(e.positive);
  }
  CHECK(outcome.saturated);
  CHECK(outcome.improved_action_prob > 0.999);
}

TEST_CASE("dataset construction counts: base, synthetic positives, rollouts, saturation") {
  KtoConfig config;
  config.rollouts_per_step = 4;
  config.rho = 0.5;

  // All-True: T positives, no rollouts.
  LabeledTrajectory all_true = synthetic_labeled(10, {});
  ToySoftmaxPolicy policy = make_toy(9);
  SaturationState saturation;
  auto dataset = build_dataset_iteration(all_true, policy, config, saturation, 1);
  CHECK(dataset.size() == 10);
  for (const auto& e : dataset) {
    CHECK(e.positive);
    CHECK(e.source == ExampleSource::Reflector);
  }

  // Two False steps: (T + k) reflector examples plus k * m rollouts.
  LabeledTrajectory with_false = synthetic_labeled(10, {3, 7});
  SaturationState sat2;
  auto dataset2 = build_dataset_iteration(with_false, policy, config, sat2, 1);
  int reflector_count = 0;
  int rollout_count = 0;
  int synthetic_positives = 0;
  for (const auto& e : dataset2) {
    if (e.source == ExampleSource::Reflector) {
      ++reflector_count;
      if (e.positive && (e.step == 3 || e.step == 7)) {
        ++synthetic_positives;
      }
    } else {
      ++rollout_count;
    }
  }
  CHECK(reflector_count == 12);  // T + k
  CHECK(synthetic_positives == 2);
  CHECK(rollout_count == 8);  // k * m

  // Force saturation with a policy deterministic at the improved action:
  // iteration 1 rolls out k*m positives, iteration 2 rolls out nothing.
  ToySoftmaxPolicy saturating = make_toy(10);
  std::vector<double> theta(ToySoftmaxPolicy::kNumActions * ToySoftmaxPolicy::kNumFeatures, 0.0);
  theta[4 * ToySoftmaxPolicy::kNumFeatures + 0] = 40.0;
  saturating.set_theta(theta);
  SaturationState sat3;
  auto first = build_dataset_iteration(with_false, saturating, config, sat3, 1);
  int rollout_positives = 0;
  for (const auto& e : first) {
    if (e.source == ExampleSource::Rollout) {
      CHECK(e.positive);
      ++rollout_positives;
    }
  }
  CHECK(rollout_positives == 8);
  CHECK(sat3.saturated_steps.size() == 2);
  auto second = build_dataset_iteration(with_false, saturating, config, sat3, 2);
  for (const auto& e : second) {
    CHECK(e.source == ExampleSource::Reflector);
  }
  CHECK(second.size() == 12);
}

TEST_CASE("run_rfr raises a single positive's probability and reports monotone saturation") {
  LabeledTrajectory labeled = synthetic_labeled(6, {2, 4});
  ToySoftmaxPolicy policy = make_toy(11);
  const StateVector pressure_state = labeled.entries[2].entry.state;
  const double before = policy.action_prob("", pressure_state, 27, 1).value;

  KtoConfig config;
  config.iterations = 3;
  config.steps_per_iteration = 60;
  config.seed = 5;
  const TrainReport report = run_rfr(policy, labeled, config);
  REQUIRE(report.completed);
  REQUIRE(report.rows.size() == 3);

  const double after = policy.action_prob("", pressure_state, 27, 1).value;
  CHECK(after > before);

  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    CHECK(report.rows[i].saturated_steps >= report.rows[i - 1].saturated_steps);
    CHECK(report.rows[i].rolled_out_steps <= report.rows[i - 1].rolled_out_steps);
  }
  for (const auto& row : report.rows) {
    CHECK(row.lambda_d * row.n_pos == doctest::Approx(std::max(row.n_pos, row.n_neg)));
    CHECK(row.lambda_u * row.n_neg == doctest::Approx(std::max(row.n_pos, row.n_neg)));
  }
}

TEST_CASE("zero learning rate leaves the policy unchanged with losses at one half") {
  LabeledTrajectory labeled = synthetic_labeled(6, {2, 4});
  ToySoftmaxPolicy policy = make_toy(12);
  const std::vector<double> theta_before = policy.theta();

  KtoConfig config;
  config.iterations = 1;
  config.steps_per_iteration = 20;
  config.learning_rate = 0.0;
  config.batch_size = 64;  // full-batch so weights stay balanced per batch
  config.seed = 6;

  std::vector<double> losses;
  RunRfrHooks hooks;
  hooks.on_step = [&](int, int, double batch_loss, double) { losses.push_back(batch_loss); };
  const TrainReport report = run_rfr(policy, labeled, config, &hooks);
  REQUIRE(report.completed);
  CHECK(policy.theta() == theta_before);

  // With the policy pinned at the reference every example contributes
  // 0.5 * lambda_y, so each batch loss is half the batch's mean weight.
  const auto& row = report.rows[0];
  const double expected =
      0.5 * (row.lambda_d * row.n_pos + row.lambda_u * row.n_neg) / (row.n_pos + row.n_neg);
  for (double loss : losses) {
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("run_rfr is deterministic and demands a trainable backend") {
  LabeledTrajectory labeled = synthetic_labeled(6, {2, 4});
  ToySoftmaxPolicy a = make_toy(13);
  ToySoftmaxPolicy b = make_toy(13);
  KtoConfig config;
  config.iterations = 2;
  config.steps_per_iteration = 40;
  config.seed = 7;
  run_rfr(a, labeled, config);
  run_rfr(b, labeled, config);
  CHECK(a.theta() == b.theta());

  auto hold = make_hold_policy();
  CHECK_THROWS_AS(run_rfr(*hold, labeled, config), CapabilityError);
  try {
    run_rfr(*hold, labeled, config);
  } catch (const CapabilityError& ex) {
    CHECK(std::string(ex.what()).find("export_dataset") != std::string::npos);
  }
}

TEST_CASE("an all-True trajectory aborts training as one-sided with the report so far") {
  LabeledTrajectory labeled = synthetic_labeled(5, {});
  ToySoftmaxPolicy policy = make_toy(14);
  KtoConfig config;
  config.iterations = 2;
  const TrainReport report = run_rfr(policy, labeled, config);
  CHECK_FALSE(report.completed);
  CHECK(report.rows.size() == 1);
  CHECK(report.error.find("positive") != std::string::npos);
}

TEST_CASE("dataset export writes lowercase labels and reloads losslessly") {
  LabeledTrajectory labeled = synthetic_labeled(4, {1});
  ToySoftmaxPolicy policy = make_toy(15);
  KtoConfig config;
  SaturationState saturation;
  const auto dataset = build_dataset_iteration(labeled, policy, config, saturation, 1);

  const std::string text = dataset_to_jsonl(dataset);
  CHECK(text.find("\"label\":true") != std::string::npos);
  CHECK(text.find("\"label\":false") != std::string::npos);
  CHECK(text.find("True") == std::string::npos);

  const auto reloaded = dataset_from_jsonl(text);
  REQUIRE(reloaded.size() == dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    CHECK(reloaded[i].prompt == dataset[i].prompt);
    CHECK(reloaded[i].completion == dataset[i].completion);
    CHECK(reloaded[i].positive == dataset[i].positive);
    CHECK(reloaded[i].source == dataset[i].source);
    CHECK(reloaded[i].step == dataset[i].step);
    CHECK(reloaded[i].iteration == dataset[i].iteration);
  }

  const std::string path = (std::filesystem::temp_directory_path() / "dataset.jsonl").string();
  export_dataset(dataset, path);
  CHECK(load_dataset(path).size() == dataset.size());
  std::filesystem::remove(path);
}

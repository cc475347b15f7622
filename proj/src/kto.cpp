#include "ranslice/kto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ranslice/agent.hpp"
#include "ranslice/errors.hpp"
#include "ranslice/rng.hpp"

namespace ranslice {

using nlohmann::json;

void KtoConfig::validate() const {
  if (beta <= 0.0) {
    throw ConfigError("kto beta must be > 0");
  }
  if (rho <= 0.0 || rho > 1.0) {
    throw ConfigError("kto rho must be in (0, 1]");
  }
  if (rollouts_per_step < 1) {
    throw ConfigError("kto rollouts_per_step must be >= 1");
  }
  if (iterations < 1) {
    throw ConfigError("kto iterations must be >= 1");
  }
  if (learning_rate < 0.0) {
    throw ConfigError("kto learning_rate must be >= 0");
  }
  if (steps_per_iteration < 1) {
    throw ConfigError("kto steps_per_iteration must be >= 1");
  }
  if (batch_size < 1) {
    throw ConfigError("kto batch_size must be >= 1");
  }
}

KtoWeights kto_weights(int n_pos, int n_neg) {
  if (n_pos < 1 || n_neg < 1) {
    throw OneSidedDatasetError(
        fmt::format("preference dataset needs both classes: {} positive, {} negative examples",
                    n_pos, n_neg));
  }
  const double m = static_cast<double>(std::max(n_pos, n_neg));
  return KtoWeights{m / static_cast<double>(n_pos), m / static_cast<double>(n_neg)};
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_exact_logprob(const Policy& policy) {
  if (!policy.capabilities().has_exact_logprob) {
    throw CapabilityError(policy.name() + " backend has no exact log-probabilities");
  }
}

}  // namespace

double kto_reward(const Policy& policy, const Policy& reference,
                  const PreferenceExample& example) {
  require_exact_logprob(policy);
  require_exact_logprob(reference);
  return policy.logprob(example.prompt, example.context, example.completion) -
         reference.logprob(example.prompt, example.context, example.completion);
}

double estimate_z0(const Policy& policy, const Policy& reference,
                   std::span<const PreferenceExample> batch) {
  if (batch.size() < 2) {
    fmt::print(stderr, "warning: z0 estimated as 0 on a batch of size {}\n", batch.size());
    return 0.0;
  }
  double sum = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreferenceExample& prompt_side = batch[i];
    const PreferenceExample& completion_side = batch[(i + 1) % batch.size()];
    PreferenceExample mismatched = prompt_side;
    mismatched.completion = completion_side.completion;
    mismatched.action = completion_side.action;
    try {
      sum += kto_reward(policy, reference, mismatched);
      ++used;
    } catch (const ParseError&) {
      // completion not expressible under this prompt's context: skip the pair
    } catch (const ActionError&) {
      // same: the shifted completion does not parse as an in-range action
    }
  }
  if (used == 0) {
    return 0.0;
  }
  return std::max(0.0, sum / static_cast<double>(used));
}

KtoLossResult kto_loss(const Policy& policy, const Policy& reference,
                       std::span<const PreferenceExample> batch, double beta,
                       const KtoWeights& weights, double z0) {
  KtoLossResult result;
  result.v.reserve(batch.size());
  double total = 0.0;
  for (const PreferenceExample& example : batch) {
    const double r = kto_reward(policy, reference, example);
    const double lambda_y = example.positive ? weights.lambda_d : weights.lambda_u;
    const double v = example.positive ? weights.lambda_d * sigmoid(beta * (r - z0))
                                      : weights.lambda_u * sigmoid(beta * (z0 - r));
    result.v.push_back(v);
    total += lambda_y - v;
  }
  result.mean_loss = batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
  return result;
}

KtoLossResult kto_loss(const Policy& policy, const Policy& reference,
                       std::span<const PreferenceExample> batch, double beta,
                       const KtoWeights& weights) {
  return kto_loss(policy, reference, batch, beta, weights,
                  estimate_z0(policy, reference, batch));
}

KtoLossGradient kto_loss_gradient(const ToySoftmaxPolicy& policy, const Policy& reference,
                                  std::span<const PreferenceExample> batch, double beta,
                                  const KtoWeights& weights, double z0) {
  KtoLossGradient result;
  result.v.reserve(batch.size());
  result.gradient.assign(ToySoftmaxPolicy::kNumActions * ToySoftmaxPolicy::kNumFeatures, 0.0);
  double total = 0.0;
  for (const PreferenceExample& example : batch) {
    if (!example.action.has_value()) {
      throw ParseError("training example has no parsed action");
    }
    const double r = kto_reward(policy, reference, example);
    const double lambda_y = example.positive ? weights.lambda_d : weights.lambda_u;
    double v = 0.0;
    double dv_dr = 0.0;
    if (example.positive) {
      const double s = sigmoid(beta * (r - z0));
      v = weights.lambda_d * s;
      dv_dr = weights.lambda_d * beta * s * (1.0 - s);
    } else {
      const double s = sigmoid(beta * (z0 - r));
      v = weights.lambda_u * s;
      dv_dr = -weights.lambda_u * beta * s * (1.0 - s);
    }
    result.v.push_back(v);
    total += lambda_y - v;

    // d loss / d theta = -dv/dr * d logpi'(y|x)/d theta (reference and z0
    // contribute nothing).
    const auto logp_grad = policy.logprob_gradient(example.context, *example.action);
    for (std::size_t i = 0; i < result.gradient.size(); ++i) {
      result.gradient[i] -= dv_dr * logp_grad[i];
    }
  }
  const double inv = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  result.mean_loss = total * inv;
  for (double& g : result.gradient) {
    g *= inv;
  }
  return result;
}

RolloutOutcome rollout_refine(Policy& policy, const LabeledEntry& entry, int m, double rho,
                              int iteration) {
  if (entry.label || !entry.improved_action.has_value()) {
    throw DomainError("rollout_refine requires a False-labeled entry with an improved action");
  }
  if (m < 1) {
    throw DomainError("rollout_refine requires m >= 1");
  }
  const int improved = *entry.improved_action;
  RolloutOutcome outcome;
  const auto samples = policy.sample_k(entry.entry.prompt, entry.entry.state, m);
  int hits = 0;
  for (const std::string& raw : samples) {
    PreferenceExample example;
    example.prompt = entry.entry.prompt;
    example.completion = raw;
    example.source = ExampleSource::Rollout;
    example.step = -1;  // filled by the dataset builder
    example.iteration = iteration;
    example.context = entry.entry.state;
    bool matches = false;
    try {
      const ActorTriplet triplet =
          extract_triplet(raw, std::numeric_limits<int>::min(), std::numeric_limits<int>::max());
      example.action = triplet.action;
      matches = triplet.action == improved;
    } catch (const Error&) {
      example.action.reset();  // unparseable rollout counts as negative
    }
    example.positive = matches;
    if (matches) {
      ++hits;
    }
    outcome.examples.push_back(std::move(example));
  }

  const ActionProbability prob =
      policy.action_prob(entry.entry.prompt, entry.entry.state, improved, m);
  outcome.improved_action_prob =
      prob.exact ? prob.value : static_cast<double>(hits) / static_cast<double>(m);
  outcome.saturated = outcome.improved_action_prob > rho;
  return outcome;
}

std::vector<PreferenceExample> build_dataset_iteration(const LabeledTrajectory& labeled,
                                                       Policy& policy, const KtoConfig& config,
                                                       SaturationState& saturation,
                                                       int iteration) {
  config.validate();
  std::vector<PreferenceExample> dataset;

  // Reflector-labeled base: recorded outputs keep their label; every False
  // entry also contributes the improved action rendered through the output
  // template as a synthetic positive.
  for (std::size_t t = 0; t < labeled.entries.size(); ++t) {
    const LabeledEntry& e = labeled.entries[t];
    PreferenceExample base;
    base.prompt = e.entry.prompt;
    base.completion = e.entry.raw_output;
    base.positive = e.label;
    base.source = ExampleSource::Reflector;
    base.step = static_cast<int>(t);
    base.iteration = iteration;
    base.context = e.entry.state;
    try {
      base.action = extract_triplet(e.entry.raw_output, std::numeric_limits<int>::min(),
                                    std::numeric_limits<int>::max())
                        .action;
    } catch (const Error&) {
      base.action.reset();  // stored verbatim even if malformed
    }
    dataset.push_back(std::move(base));

    if (!e.label) {
      PreferenceExample synthetic;
      synthetic.prompt = e.entry.prompt;
      synthetic.completion = render_actor_output(*e.improved_action);
      synthetic.positive = true;
      synthetic.source = ExampleSource::Reflector;
      synthetic.step = static_cast<int>(t);
      synthetic.iteration = iteration;
      synthetic.context = e.entry.state;
      synthetic.action = *e.improved_action;
      dataset.push_back(std::move(synthetic));
    }
  }

  // Refine-rollouts for unsaturated False entries; saturation is permanent.
  for (std::size_t t = 0; t < labeled.entries.size(); ++t) {
    const LabeledEntry& e = labeled.entries[t];
    if (e.label || saturation.saturated_steps.count(static_cast<int>(t)) > 0) {
      continue;
    }
    RolloutOutcome outcome =
        rollout_refine(policy, e, config.rollouts_per_step, config.rho, iteration);
    for (PreferenceExample& example : outcome.examples) {
      example.step = static_cast<int>(t);
      dataset.push_back(std::move(example));
    }
    if (outcome.saturated) {
      saturation.saturated_steps.insert(static_cast<int>(t));
    }
  }
  return dataset;
}

namespace {

struct UsableDataset {
  std::vector<PreferenceExample> examples;
  int n_pos = 0;
  int n_neg = 0;
  int skipped = 0;
};

/// In-process training needs the completion to parse to an action reachable
/// under the prompt's context; anything else is export-only material.
UsableDataset usable_for_toy(const ToySoftmaxPolicy& policy,
                             std::vector<PreferenceExample> dataset) {
  UsableDataset usable;
  for (PreferenceExample& example : dataset) {
    if (!example.action.has_value() ||
        !policy.is_reachable(example.context, *example.action)) {
      ++usable.skipped;
      continue;
    }
    if (example.positive) {
      ++usable.n_pos;
    } else {
      ++usable.n_neg;
    }
    usable.examples.push_back(std::move(example));
  }
  return usable;
}

double mean_reward_over(const Policy& policy, const Policy& baseline,
                        std::span<const PreferenceExample> examples, bool positive) {
  double sum = 0.0;
  int count = 0;
  for (const PreferenceExample& example : examples) {
    if (example.positive != positive) {
      continue;
    }
    sum += kto_reward(policy, baseline, example);
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

double mean_chosen_logprob(const ToySoftmaxPolicy& policy,
                           std::span<const PreferenceExample> examples) {
  double sum = 0.0;
  int count = 0;
  for (const PreferenceExample& example : examples) {
    if (!example.positive) {
      continue;
    }
    sum += policy.logprob_action(example.context, *example.action);
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

}  // namespace

TrainReport run_rfr(Policy& policy, const LabeledTrajectory& labeled, const KtoConfig& config,
                    const RunRfrHooks* hooks) {
  config.validate();
  auto* toy = dynamic_cast<ToySoftmaxPolicy*>(&policy);
  if (toy == nullptr) {
    throw CapabilityError(policy.name() +
                          " backend cannot be fine-tuned in-process; build the preference "
                          "dataset and use export_dataset for an external trainer");
  }

  TrainReport report;
  const auto reference = toy->snapshot();  // frozen for the whole run
  SaturationState saturation;
  DeterministicStream shuffle_stream(derive_seed(config.seed, "kto-shuffle"));

  // Steps whose improved action the toy policy cannot express are excluded
  // from rollouts up front: no sample can ever match, so they would only
  // flood the dataset with unsaturable negatives.
  int unexpressible = 0;
  for (std::size_t t = 0; t < labeled.entries.size(); ++t) {
    const LabeledEntry& e = labeled.entries[t];
    if (!e.label && e.improved_action.has_value() &&
        !toy->is_reachable(e.entry.state, *e.improved_action)) {
      saturation.saturated_steps.insert(static_cast<int>(t));
      ++unexpressible;
    }
  }
  if (unexpressible > 0) {
    fmt::print(stderr,
               "warning: {} step(s) propose actions outside the toy policy's reach; "
               "their rollouts are skipped\n",
               unexpressible);
  }

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    const auto iteration_start = toy->snapshot();  // reporting baseline

    std::vector<PreferenceExample> dataset;
    int rolled_out = 0;
    {
      const std::size_t saturated_before = saturation.saturated_steps.size();
      dataset = build_dataset_iteration(labeled, *toy, config, saturation, iteration);
      int false_steps = 0;
      for (const LabeledEntry& e : labeled.entries) {
        false_steps += e.label ? 0 : 1;
      }
      rolled_out = false_steps - static_cast<int>(saturated_before);
      (void)saturated_before;
    }

    if (hooks != nullptr && hooks->on_dataset) {
      hooks->on_dataset(iteration, dataset);
    }
    UsableDataset usable = usable_for_toy(*toy, std::move(dataset));
    if (usable.skipped > 0) {
      fmt::print(stderr,
                 "warning: iteration {}: {} example(s) not trainable in-process were skipped\n",
                 iteration, usable.skipped);
    }

    TrainIterationRow row;
    row.iteration = iteration;
    row.n_pos = usable.n_pos;
    row.n_neg = usable.n_neg;
    row.rolled_out_steps = rolled_out;
    row.saturated_steps = static_cast<int>(saturation.saturated_steps.size());

    KtoWeights weights;
    try {
      weights = kto_weights(usable.n_pos, usable.n_neg);
    } catch (const OneSidedDatasetError& ex) {
      report.error = fmt::format("iteration {}: {}", iteration, ex.what());
      report.rows.push_back(row);
      return report;
    }
    row.lambda_d = weights.lambda_d;
    row.lambda_u = weights.lambda_u;

    // Plain gradient descent over shuffled mini-batches.
    std::vector<std::size_t> order(usable.examples.size());
    std::iota(order.begin(), order.end(), 0);
    auto reshuffle = [&] {
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = shuffle_stream.next_u64() % i;
        std::swap(order[i - 1], order[j]);
      }
    };
    reshuffle();

    std::size_t cursor = 0;
    double loss_sum = 0.0;
    for (int step = 0; step < config.steps_per_iteration; ++step) {
      std::vector<PreferenceExample> batch;
      batch.reserve(config.batch_size);
      for (int i = 0; i < config.batch_size && i < static_cast<int>(order.size()); ++i) {
        if (cursor == order.size()) {
          reshuffle();
          cursor = 0;
        }
        batch.push_back(usable.examples[order[cursor++]]);
      }
      const double z0 = estimate_z0(*toy, *reference, batch);
      const KtoLossGradient grad =
          kto_loss_gradient(*toy, *reference, batch, config.beta, weights, z0);
      toy->apply_gradient(grad.gradient, config.learning_rate);
      loss_sum += grad.mean_loss;
      if (hooks != nullptr && hooks->on_step) {
        hooks->on_step(iteration, step, grad.mean_loss,
                       mean_chosen_logprob(*toy, usable.examples));
      }
    }

    row.mean_loss = loss_sum / config.steps_per_iteration;
    row.mean_chosen_reward = mean_reward_over(*toy, *iteration_start, usable.examples, true);
    row.mean_rejected_reward = mean_reward_over(*toy, *iteration_start, usable.examples, false);
    report.rows.push_back(row);
  }
  report.completed = true;
  return report;
}

namespace {

std::string source_name(ExampleSource source) {
  return source == ExampleSource::Reflector ? "reflector" : "rollout";
}

ExampleSource source_from_name(const std::string& name, std::size_t line_no) {
  if (name == "reflector") {
    return ExampleSource::Reflector;
  }
  if (name == "rollout") {
    return ExampleSource::Rollout;
  }
  throw FormatError("unknown example source '" + name + "'", line_no);
}

}  // namespace

std::string dataset_to_jsonl(std::span<const PreferenceExample> dataset) {
  std::string out;
  for (const PreferenceExample& example : dataset) {
    const json j{{"prompt", example.prompt},
                 {"completion", example.completion},
                 {"label", example.positive},
                 {"source", source_name(example.source)},
                 {"step", example.step},
                 {"iteration", example.iteration}};
    out += j.dump();
    out += "\n";
  }
  return out;
}

std::vector<PreferenceExample> dataset_from_jsonl(const std::string& text) {
  std::vector<PreferenceExample> dataset;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw FormatError(std::string("invalid JSON record: ") + ex.what(), line_no);
    }
    try {
      PreferenceExample example;
      example.prompt = j.at("prompt").get<std::string>();
      example.completion = j.at("completion").get<std::string>();
      example.positive = j.at("label").get<bool>();
      example.source = source_from_name(j.at("source").get<std::string>(), line_no);
      example.step = j.at("step").get<int>();
      example.iteration = j.at("iteration").get<int>();
      dataset.push_back(std::move(example));
    } catch (const json::exception& ex) {
      throw FormatError(std::string("missing or mistyped field: ") + ex.what(), line_no);
    }
  }
  return dataset;
}

void export_dataset(std::span<const PreferenceExample> dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write dataset file: " + path);
  }
  out << dataset_to_jsonl(dataset);
}

std::vector<PreferenceExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open dataset file: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return dataset_from_jsonl(buffer.str());
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write train report file: " + path);
  }
  out << "iteration,n_pos,n_neg,lambda_d,lambda_u,mean_chosen_reward,mean_rejected_reward,"
         "mean_loss,rolled_out_steps,saturated_steps\n";
  for (const TrainIterationRow& row : report.rows) {
    out << fmt::format("{},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{},{}\n", row.iteration,
                       row.n_pos, row.n_neg, row.lambda_d, row.lambda_u, row.mean_chosen_reward,
                       row.mean_rejected_reward, row.mean_loss, row.rolled_out_steps,
                       row.saturated_steps);
  }
}

}  // namespace ranslice

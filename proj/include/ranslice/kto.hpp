#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ranslice/policy.hpp"
#include "ranslice/reflector.hpp"

namespace ranslice {

enum class ExampleSource { Reflector, Rollout };

/// One preference example: prompt, completion, binary label. Rollout
/// completions always parse under the output grammar; reflector-sourced
/// completions are stored verbatim even when malformed. The resolved state
/// and parsed action support in-process training and are not exported.
struct PreferenceExample {
  std::string prompt;
  std::string completion;
  bool positive = false;
  ExampleSource source = ExampleSource::Reflector;
  int step = 0;
  int iteration = 1;

  StateVector context;
  std::optional<int> action;
};

struct KtoConfig {
  double beta = 0.1;
  int rollouts_per_step = 4;   // m
  int iterations = 6;          // n
  double rho = 0.5;            // rollout saturation threshold
  double learning_rate = 0.05;
  int steps_per_iteration = 200;
  int batch_size = 16;
  std::uint64_t seed = 0;      // shuffling stream

  void validate() const;
};

struct KtoWeights {
  double lambda_d = 1.0;  // weight of positive (desirable) examples
  double lambda_u = 1.0;  // weight of negative (undesirable) examples
};

/// lambda_d = max(n_pos, n_neg) / n_pos, lambda_u = max(n_pos, n_neg) / n_neg.
/// Requires at least one example of each class.
KtoWeights kto_weights(int n_pos, int n_neg);

/// r_theta = log pi'(y|x) - log pi_ref(y|x). Both policies must expose exact
/// log-probabilities.
double kto_reward(const Policy& policy, const Policy& reference, const PreferenceExample& example);

/// Batch estimate of the reference-shift term: each prompt is paired with
/// the completion of the next example (cyclic shift), the rewards of these
/// mismatched pairs are averaged and clamped at zero. Pairs whose completion
/// is not reachable under the prompt's context are skipped. Treated as a
/// constant inside a training step.
double estimate_z0(const Policy& policy, const Policy& reference,
                   std::span<const PreferenceExample> batch);

struct KtoLossResult {
  double mean_loss = 0.0;
  std::vector<double> v;  // per-example value term
};

/// Per example: v = lambda_d * sigmoid(beta * (r - z0)) for positives,
/// v = lambda_u * sigmoid(beta * (z0 - r)) for negatives; loss = lambda_y - v.
/// Returns the batch mean and the per-example v values.
KtoLossResult kto_loss(const Policy& policy, const Policy& reference,
                       std::span<const PreferenceExample> batch, double beta,
                       const KtoWeights& weights, double z0);

/// Convenience overload that estimates z0 from the batch first.
KtoLossResult kto_loss(const Policy& policy, const Policy& reference,
                       std::span<const PreferenceExample> batch, double beta,
                       const KtoWeights& weights);

struct KtoLossGradient {
  double mean_loss = 0.0;
  std::vector<double> v;
  std::vector<double> gradient;  // d(mean loss)/d(theta), K x F row-major
};

/// Analytic gradient of the batch loss with respect to the toy policy's
/// weights, with z0 held constant.
KtoLossGradient kto_loss_gradient(const ToySoftmaxPolicy& policy, const Policy& reference,
                                  std::span<const PreferenceExample> batch, double beta,
                                  const KtoWeights& weights, double z0);

struct RolloutOutcome {
  std::vector<PreferenceExample> examples;
  bool saturated = false;
  double improved_action_prob = 0.0;
};

/// Samples m outputs for a False-labeled entry; a sample is positive iff its
/// action equals the improved action (unparseable samples are negative).
/// Saturation is exact for the toy policy and the empirical frequency over
/// these m samples otherwise.
RolloutOutcome rollout_refine(Policy& policy, const LabeledEntry& entry, int m, double rho,
                              int iteration);

struct SaturationState {
  std::set<int> saturated_steps;
};

/// One iteration's dataset: every reflector-labeled example (False entries
/// additionally contribute a synthetic positive rendering the improved
/// action through the output template), plus refine-rollouts for every
/// unsaturated False entry. Updates the saturation state.
std::vector<PreferenceExample> build_dataset_iteration(const LabeledTrajectory& labeled,
                                                       Policy& policy, const KtoConfig& config,
                                                       SaturationState& saturation,
                                                       int iteration);

struct TrainIterationRow {
  int iteration = 0;
  int n_pos = 0;
  int n_neg = 0;
  double lambda_d = 0.0;
  double lambda_u = 0.0;
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double mean_loss = 0.0;
  int rolled_out_steps = 0;
  int saturated_steps = 0;
};

struct TrainReport {
  std::vector<TrainIterationRow> rows;
  bool completed = false;
  std::string error;
};

/// Per-gradient-step observer; mean_chosen_logprob is over the current
/// dataset's positive examples.
using TrainStepObserver =
    std::function<void(int iteration, int step, double batch_loss, double mean_chosen_logprob)>;
using DatasetObserver = std::function<void(int iteration, std::span<const PreferenceExample>)>;

struct RunRfrHooks {
  TrainStepObserver on_step;
  DatasetObserver on_dataset;
};

/// The full preference fine-tuning loop on the toy policy: snapshot the
/// reference once, then per iteration rebuild the dataset, recompute the
/// class weights, and run plain gradient-descent steps on shuffled
/// mini-batches. Reported chosen/rejected rewards are measured against the
/// policy as it stood at the start of the iteration, so they trend toward
/// zero as training stabilizes. Backends without in-process training raise
/// CapabilityError pointing at export_dataset.
TrainReport run_rfr(Policy& policy, const LabeledTrajectory& labeled, const KtoConfig& config,
                    const RunRfrHooks* hooks = nullptr);

/// Line-delimited export: prompt, completion, label, source, step, iteration.
void export_dataset(std::span<const PreferenceExample> dataset, const std::string& path);
std::string dataset_to_jsonl(std::span<const PreferenceExample> dataset);
std::vector<PreferenceExample> dataset_from_jsonl(const std::string& text);
std::vector<PreferenceExample> load_dataset(const std::string& path);

void write_train_report_csv(const TrainReport& report, const std::string& path);

}  // namespace ranslice

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

enum class OptimizerKind { sgd, adam };
enum class LrSchedule { constant, cosine };

std::string_view to_string(OptimizerKind k);
std::string_view to_string(LrSchedule s);
OptimizerKind parse_optimizer(std::string_view name);
LrSchedule parse_lr_schedule(std::string_view name);

struct TrainConfig {
  LossConfig loss;
  std::size_t steps = 500;
  std::size_t batch = 32;
  double lr = 0.1;
  OptimizerKind optimizer = OptimizerKind::sgd;
  LrSchedule lr_schedule = LrSchedule::constant;
  std::uint64_t seed = 0;
  /// Global-norm gradient clip; 0 disables clipping.
  double clip_norm = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double margin = 0.0;  ///< batch mean of dR - gamma
  double win_rate = 0.0;
  double mean_gamma = 0.0;
  double mean_dpmi = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> records;
};

/// SGD or bias-corrected Adam over a policy's logits.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg);

  /// Applies one update with learning rate `lr`.
  void step(Policy& policy, const GradientTensor& grad, double lr);

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

/// Learning rate at a 0-based step under the configured schedule.
double scheduled_lr(const TrainConfig& cfg, std::size_t step);

/// Called after every optimizer step with the batch diagnostics of that step.
using StepObserver = std::function<void(std::size_t step, const BatchDiagnostics& diag)>;

struct TrainResult {
  Policy policy;
  TrainHistory history;
};

/// Runs exactly cfg.steps optimizer steps over seeded, per-epoch reshuffled
/// minibatches. Reference-based methods snapshot the reference from `init`.
/// Throws NumericalError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& cfg, std::span<const PreferenceTriplet> dataset,
                  const Policy& init, const StepObserver& observer = {});

/// Fraction of triplets with a strictly positive reward difference; ties lose.
double evaluate_win_rate(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                         double beta, bool length_norm);

/// Per-sample unified weights 1 - sigmoid(dR - gamma) over a dataset, with
/// gamma taken from the method's margin rule (fixed or adaptive).
std::vector<double> dataset_weights(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                    const LossConfig& cfg);

/// Mean adaptive margin over the dataset under cfg's schedule and bounds.
double mean_adaptive_gamma(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                           const LossConfig& cfg);

/// CSV header `step,loss,margin,win_rate,mean_gamma,mean_dpmi`.
void write_history_csv(std::ostream& out, const TrainHistory& history);

}  // namespace prefopt

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/corpus.hpp"
#include "prefopt/numerics.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

enum class Method {
  dpo,
  slic,
  ipo,
  cpo,
  kto,
  simpo,
  alpha_dpo,
  beta_dpo,
  eps_dpo,
  simper,
  rmipo,
  unified_fixed,
};

/// The eleven objectives of the comparison table (excludes unified_fixed).
inline constexpr std::array<Method, 11> kTableMethods = {
    Method::dpo,      Method::slic,      Method::ipo,      Method::cpo,
    Method::kto,      Method::simpo,     Method::alpha_dpo, Method::beta_dpo,
    Method::eps_dpo,  Method::simper,    Method::rmipo,
};

enum class Schedule { exponential, linear, cosine, none };

std::string_view to_string(Method m);
std::string_view to_string(Schedule s);
Method parse_method(std::string_view name);
Schedule parse_schedule(std::string_view name);

/// Whether a method reads a frozen reference policy.
bool needs_reference(Method m);

enum class EpsChoice { lower, keep, upper };

/// Picks a per-sample beta for eps-DPO from the reference and policy
/// log-likelihood gaps of the pair.
using EpsRule = std::function<EpsChoice(double ref_dlog, double policy_dlog)>;

/// Upper choice where the reference disagrees with the label
/// (sigmoid(ref_dlog) < 1/2), lower choice otherwise.
EpsChoice default_eps_rule(double ref_dlog, double policy_dlog);

struct LossConfig {
  Method method = Method::rmipo;
  double beta = 2.0;
  double gamma = 1.0;
  double gamma_min = 0.3;
  double gamma_max = 1.6;
  Schedule schedule = Schedule::exponential;
  double schedule_scale = 3.0;
  bool length_norm = true;
  double tau = 0.1;
  double delta = 1.0;
  double lambda = 0.1;
  double lambda_w = 1.0;
  double lambda_l = 1.0;
  double alpha = 0.1;
  double rho = 0.0;
  double epsilon = 0.01;
  /// Empty means default_eps_rule.
  EpsRule eps_rule;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

struct SampleDiagnostics {
  double dlog = 0.0;    ///< log pi(yw|x) - log pi(yl|x)
  double dR = 0.0;      ///< reward difference entering the sigmoid
  double dpmi = 0.0;    ///< PMI(yw|x) - PMI(yl|x)
  double gamma = 0.0;   ///< effective margin
  double weight = 0.0;  ///< 1 - sigmoid(dR - gamma)
  double loss = 0.0;
  double beta = 0.0;    ///< per-sample beta actually used
  bool kept = true;     ///< false for samples filtered out by beta-DPO
};

struct BatchDiagnostics {
  std::vector<SampleDiagnostics> samples;
  double mean_margin = 0.0;
  std::size_t win_count = 0;
  /// Set when a batch Z-score was undefined (size 1 or zero spread).
  bool zscore_degenerate = false;
};

/// Batch-level quantities that are excluded from differentiation. Passing a
/// captured copy back into evaluate_batch reproduces the same detached values
/// at a perturbed policy, which is what finite-difference checks need.
struct DetachedState {
  std::vector<double> gamma;  ///< per-sample margin (RMiPO, alpha-DPO bracket)
  std::vector<double> beta;   ///< per-sample beta (beta-DPO, eps-DPO)
  std::vector<bool> kept;     ///< beta-DPO filter mask
  double z_ref = 0.0;         ///< KTO reference point
  double m0 = 0.0;            ///< beta-DPO running mean used for this batch
};

/// Running state carried across batches by beta-DPO.
struct BetaDpoState {
  double m0 = 0.0;
  bool initialized = false;
  static constexpr double kDecay = 0.9;
};

struct LossResult {
  double loss = 0.0;
  GradientTensor grad;
  BatchDiagnostics diag;
  DetachedState detached;
  BetaDpoState beta_state;
};

/// Mean loss over the batch, its gradient with respect to the policy logits,
/// and per-sample diagnostics. `ref` must be non-null for methods that need a
/// reference. When `frozen` is given, its detached values replace the ones
/// that would be computed from the current policy.
LossResult evaluate_batch(const LossConfig& cfg, const Policy& policy, const Policy* ref,
                          std::span<const PreferenceTriplet> batch,
                          const BetaDpoState& state = {}, const DetachedState* frozen = nullptr);

// Building blocks.

double unified_loss(double dR, double gamma);
double per_sample_weight(double dR, double gamma);

double delta_reward(const Policy& policy, const PreferenceTriplet& t, double beta,
                    bool length_norm);
double pmi(const Policy& policy, const Sequence& x, const Sequence& y);
double delta_pmi(const Policy& policy, const PreferenceTriplet& t);

/// Margin as a function of the PMI gap; constant gamma_max for dpmi <= 0.
double adaptive_gamma(double dpmi, const LossConfig& cfg);

/// beta * (log ref(yw|x) - log ref(yl|x)), the margin DPO implies.
double implicit_margin_gamma_ref(const Policy& ref, const PreferenceTriplet& t, double beta);

/// [1 + alpha (M_i - M_0)] beta_0, floored at 1e-6 beta_0.
double beta_dpo_beta_i(double m_i, double m_0, double alpha, double beta_0);

/// {beta / (1 + eps), beta, beta (1 + eps)}.
std::array<double, 3> eps_dpo_candidates(double beta, double epsilon);

/// Number of samples beta-DPO drops from a batch of size b.
std::size_t beta_dpo_drop_count(double rho, std::size_t b);

// Single-objective entry points. Each builds a LossConfig and calls
// evaluate_batch.

LossResult rmipo_loss(const Policy& policy, const PreferenceTriplet& t, const LossConfig& cfg);
LossResult dpo_loss(const Policy& policy, const Policy& ref, const PreferenceTriplet& t,
                    double beta);
LossResult simpo_loss(const Policy& policy, const PreferenceTriplet& t, double beta, double gamma,
                      bool length_norm = true);
LossResult simper_loss(const Policy& policy, const PreferenceTriplet& t);
LossResult ipo_loss(const Policy& policy, const Policy& ref, const PreferenceTriplet& t, double tau);
LossResult slic_loss(const Policy& policy, const PreferenceTriplet& t, double delta, double lambda);
LossResult cpo_loss(const Policy& policy, const PreferenceTriplet& t, double beta, double lambda);
LossResult kto_loss(const Policy& policy, const Policy& ref, std::span<const PreferenceTriplet> batch,
                    double beta, double lambda_w, double lambda_l);
LossResult alpha_dpo_loss(const Policy& policy, const Policy& ref,
                          std::span<const PreferenceTriplet> batch, double beta, double gamma,
                          double alpha);
LossResult beta_dpo_loss(const Policy& policy, const Policy& ref,
                         std::span<const PreferenceTriplet> batch, double beta_0, double alpha,
                         double rho, const BetaDpoState& state);
LossResult eps_dpo_loss(const Policy& policy, const Policy& ref,
                        std::span<const PreferenceTriplet> batch, double beta, double epsilon,
                        EpsRule rule = {});

/// CSV header `step,sample,dlog,dR,dpmi,gamma,weight,loss`.
void write_diagnostics_header(std::ostream& out);
void write_diagnostics_rows(std::ostream& out, std::size_t step, const BatchDiagnostics& diag);

}  // namespace prefopt

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

/// Fixed-width histogram with data-derived, strictly increasing edges.
struct Histogram {
  std::vector<double> edges;  ///< bins + 1 entries
  std::vector<std::size_t> counts;
  std::size_t total = 0;

  std::size_t bins() const noexcept { return counts.size(); }
  /// Index of the bin holding v, clamped to the outer bins.
  std::size_t bin_of(double v) const noexcept;
};

/// Bins spanning [min, max] of the values. A zero-width range is widened to
/// [v - 0.5, v + 0.5] so the edges stay strictly increasing.
Histogram make_histogram(std::span<const double> values, std::size_t bins = 64);

/// Rows `edge_lo,edge_hi,count` under a one-line header.
void write_histogram_csv(std::ostream& out, const Histogram& h);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_row = 0;
  Token worst_token = 0;
  std::size_t entries = 0;
};

/// Central finite differences on every logit of every row the batch visits,
/// with the batch's detached quantities held at their unperturbed values.
/// Relative error is |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check(const LossConfig& cfg, const Policy& policy, const Policy* ref,
                           std::span<const PreferenceTriplet> batch, double h,
                           const BetaDpoState& state = {});

/// A random policy, reference, batch and beta-DPO state for gradient checks.
struct GradCheckInstance {
  Policy policy{4, 1};
  Policy ref{4, 1};
  Dataset batch;
  BetaDpoState state;
};

/// Gaussian(0, 1) policy and reference, `batch` triplets from a unit planted
/// oracle with prompts of up to two tokens, and an initialized beta-DPO state.
GradCheckInstance random_grad_check_instance(int vocab, int order, std::size_t batch,
                                             std::uint64_t seed);

/// Loss settings used by the gradient suite: library defaults except that
/// beta-DPO filters (rho = 0.25) and alpha-DPO / beta-DPO use alpha = 0.5,
/// so every detached path is exercised.
LossConfig grad_check_config(Method m);

struct GradCheckRow {
  Method method = Method::dpo;
  std::size_t instance = 0;
  GradCheckReport report;
};

/// grad_check over `instances` random instances per method. Instance i uses
/// seed `seed + i` for every method.
std::vector<GradCheckRow> grad_check_suite(std::span<const Method> methods, std::size_t instances,
                                           double h, std::uint64_t seed, int vocab = 6,
                                           std::size_t batch = 4);

/// Rows `method,instance,entries,max_rel_error`.
void write_grad_check_csv(std::ostream& out, std::span<const GradCheckRow> rows);

enum class DistMode { conditional, marginal_corrected };

std::string_view to_string(DistMode m);
DistMode parse_dist_mode(std::string_view name);

/// Per-triplet dlog (conditional) or dpmi (marginal_corrected).
std::vector<double> delta_values(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 DistMode mode);
Histogram delta_log_distribution(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 DistMode mode, std::size_t bins = 64);

/// Integer rank gap of a triplet: its recorded reward gap rounded to nearest.
long rank_gap(const PreferenceTriplet& t);

/// Rank gaps with additive Uniform(-w, w) jitter, one value per triplet.
std::vector<double> reward_density(std::span<const PreferenceTriplet> dataset, double half_width,
                                   Rng& rng);

std::vector<double> gamma_values(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 const LossConfig& cfg);
Histogram gamma_histogram(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                          const LossConfig& cfg, std::size_t bins = 64);

struct DominanceRow {
  double beta = 0.0;
  double gamma = 0.0;
  double lr = 0.0;
  double win_rate = 0.0;
  double loss = 0.0;
  std::vector<double> weights;  ///< final per-sample w_i over the dataset
};

/// Trains the fixed-margin unified objective at every (beta, gamma) grid
/// point with lr = base.lr / beta. Rows are ordered beta-major regardless of
/// `jobs`.
std::vector<DominanceRow> gamma_dominance_experiment(std::span<const PreferenceTriplet> dataset,
                                                     std::span<const double> betas,
                                                     std::span<const double> gammas,
                                                     const TrainConfig& base, const Policy& init,
                                                     unsigned jobs = 1);

/// Kendall tau-a between two equally sized score vectors.
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Rows `beta,gamma,lr,win_rate,loss,mean_weight`.
void write_dominance_csv(std::ostream& out, std::span<const DominanceRow> rows);
/// Rows `beta,gamma,sample,weight,rank` with rank 0 the heaviest sample.
void write_dominance_weights_csv(std::ostream& out, std::span<const DominanceRow> rows);

/// Maximum-likelihood tabular fit from (prefix, response) pairs: every row's
/// logits become log(count + smoothing).
Policy fit_ngram_mle(int vocab, int order,
                     std::span<const std::pair<Sequence, Sequence>> examples, double smoothing);

struct PopularityOptions {
  int vocab = 16;
  int order = 2;
  std::size_t n = 2000;          ///< preference triplets
  std::size_t templates = 10;    ///< ordinary response templates
  double popularity = 10.0;      ///< sampling weight of the popular template vs each other
  double quality_bonus = 1.0;    ///< prompt-independent oracle score per popular-template token
  std::size_t sft_samples = 500000;
  double smoothing = 0.01;
  std::uint64_t seed = 0;
};

struct PopularityReport {
  Dataset dataset;
  Policy policy{4, 1};
  std::vector<double> dlog;
  std::vector<double> dpmi;
  double mean_dlog = 0.0, stdev_dlog = 0.0;
  double mean_dpmi = 0.0, stdev_dpmi = 0.0;
};

/// Builds a corpus where one response template is drawn `popularity` times as
/// often as each other template and labels depend on the response only (no
/// prompt relevance), fits the policy to a large sample from the same
/// process, and measures dlog and dpmi over the preference triplets.
PopularityReport popularity_bias_experiment(const PopularityOptions& options);

}  // namespace prefopt

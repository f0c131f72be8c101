#include "prefopt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>

#include "prefopt/csv.hpp"
#include "prefopt/errors.hpp"

namespace prefopt {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

std::string_view to_string(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "constant";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer \"" + std::string(name) + "\"");
}

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr schedule \"" + std::string(name) + "\"");
}

void TrainConfig::validate() const {
  loss.validate();
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if ((loss.method == Method::alpha_dpo || loss.method == Method::beta_dpo) && batch < 2) {
    throw ConfigError(std::string(to_string(loss.method)) + " needs batch size >= 2");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be >= 0");
}

Optimizer::Optimizer(const TrainConfig& cfg)
    : kind_(cfg.optimizer), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2), eps_(cfg.adam_eps) {}

void Optimizer::step(Policy& policy, const GradientTensor& grad, double lr) {
  if (!grad.same_shape(policy)) {
    throw ConfigError("gradient shape does not match policy");
  }
  ++t_;
  auto theta = policy.values();
  const auto g = grad.values();
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
    return;
  }
  if (m_.empty()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step) {
  if (cfg.lr_schedule == LrSchedule::constant || cfg.steps == 0) return cfg.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

std::ptrdiff_t first_bad_sample(const BatchDiagnostics& diag) {
  for (std::size_t i = 0; i < diag.samples.size(); ++i) {
    const auto& s = diag.samples[i];
    for (double v : {s.loss, s.dR, s.gamma, s.dpmi}) {
      if (!std::isfinite(v)) return static_cast<std::ptrdiff_t>(i);
    }
  }
  return -1;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::span<const PreferenceTriplet> dataset,
                  const Policy& init, const StepObserver& observer) {
  cfg.validate();
  if (dataset.size() < cfg.batch) {
    throw ConfigError("dataset has " + std::to_string(dataset.size()) +
                      " triplets, fewer than the batch size " + std::to_string(cfg.batch));
  }
  TrainResult out{init, {}};
  out.history.records.reserve(cfg.steps);
  std::optional<Policy> ref;
  if (needs_reference(cfg.loss.method)) ref = snapshot(init);

  Rng order_rng = make_rng(cfg.seed, Stream::order);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = dataset.size();  // forces a shuffle before the first batch

  Optimizer optimizer(cfg);
  BetaDpoState beta_state;
  std::vector<PreferenceTriplet> batch;
  batch.reserve(cfg.batch);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + cfg.batch > order.size()) {
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    batch.clear();
    for (std::size_t j = 0; j < cfg.batch; ++j) batch.push_back(dataset[order[cursor + j]]);
    cursor += cfg.batch;

    LossResult r = evaluate_batch(cfg.loss, out.policy, ref ? &*ref : nullptr, batch, beta_state);
    if (!std::isfinite(r.loss) || !r.grad.all_finite()) {
      throw NumericalError(step, first_bad_sample(r.diag),
                           "non-finite loss or gradient at step " + std::to_string(step));
    }
    beta_state = r.beta_state;

    if (cfg.clip_norm > 0.0) {
      const double norm = r.grad.l2_norm();
      if (norm > cfg.clip_norm) r.grad *= cfg.clip_norm / norm;
    }
    optimizer.step(out.policy, r.grad, scheduled_lr(cfg, step));

    StepRecord rec;
    rec.step = step;
    rec.loss = r.loss;
    rec.margin = r.diag.mean_margin;
    rec.win_rate = static_cast<double>(r.diag.win_count) / static_cast<double>(cfg.batch);
    for (const auto& s : r.diag.samples) {
      rec.mean_gamma += s.gamma;
      rec.mean_dpmi += s.dpmi;
    }
    rec.mean_gamma /= static_cast<double>(cfg.batch);
    rec.mean_dpmi /= static_cast<double>(cfg.batch);
    out.history.records.push_back(rec);

    if (observer) observer(step, r.diag);
  }
  return out;
}

double evaluate_win_rate(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                         double beta, bool length_norm) {
  if (dataset.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& t : dataset) {
    if (delta_reward(policy, t, beta, length_norm) > 0.0) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(dataset.size());
}

std::vector<double> dataset_weights(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                    const LossConfig& cfg) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) {
    const double dR = delta_reward(policy, t, cfg.beta, cfg.length_norm);
    const double gamma =
        cfg.method == Method::rmipo ? adaptive_gamma(delta_pmi(policy, t), cfg) : cfg.gamma;
    out.push_back(per_sample_weight(dR, gamma));
  }
  return out;
}

double mean_adaptive_gamma(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                           const LossConfig& cfg) {
  if (dataset.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : dataset) total += adaptive_gamma(delta_pmi(policy, t), cfg);
  return total / static_cast<double>(dataset.size());
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "step,loss,margin,win_rate,mean_gamma,mean_dpmi\n";
  for (const auto& r : history.records) {
    csv::row(out, r.step, r.loss, r.margin, r.win_rate, r.mean_gamma, r.mean_dpmi);
  }
}

}  // namespace prefopt

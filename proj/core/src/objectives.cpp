#include "prefopt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "prefopt/csv.hpp"
#include "prefopt/errors.hpp"

namespace prefopt {

namespace {

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr std::array<MethodName, 12> kMethodNames = {{
    {Method::dpo, "dpo"},
    {Method::slic, "slic"},
    {Method::ipo, "ipo"},
    {Method::cpo, "cpo"},
    {Method::kto, "kto"},
    {Method::simpo, "simpo"},
    {Method::alpha_dpo, "alpha-dpo"},
    {Method::beta_dpo, "beta-dpo"},
    {Method::eps_dpo, "eps-dpo"},
    {Method::simper, "simper"},
    {Method::rmipo, "rmipo"},
    {Method::unified_fixed, "unified-fixed"},
}};

constexpr std::array<std::string_view, 4> kScheduleNames = {"exponential", "linear", "cosine",
                                                            "none"};

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& entry : kMethodNames) {
    if (entry.method == m) return entry.name;
  }
  return "unknown";
}

std::string_view to_string(Schedule s) { return kScheduleNames[static_cast<std::size_t>(s)]; }

Method parse_method(std::string_view name) {
  std::string lowered(name);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) {
    return c == '_' ? '-' : static_cast<char>(std::tolower(c));
  });
  for (const auto& entry : kMethodNames) {
    if (entry.name == lowered) return entry.method;
  }
  throw ConfigError("unknown method \"" + std::string(name) + "\"");
}

Schedule parse_schedule(std::string_view name) {
  for (std::size_t i = 0; i < kScheduleNames.size(); ++i) {
    if (kScheduleNames[i] == name) return static_cast<Schedule>(i);
  }
  throw ConfigError("unknown schedule \"" + std::string(name) + "\"");
}

bool needs_reference(Method m) {
  switch (m) {
    case Method::dpo:
    case Method::ipo:
    case Method::kto:
    case Method::alpha_dpo:
    case Method::beta_dpo:
    case Method::eps_dpo:
      return true;
    default:
      return false;
  }
}

EpsChoice default_eps_rule(double ref_dlog, double /*policy_dlog*/) {
  return sigmoid(ref_dlog) < 0.5 ? EpsChoice::upper : EpsChoice::lower;
}

void LossConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  for (double v : {beta, gamma, gamma_min, gamma_max, schedule_scale, tau, delta, lambda,
                   lambda_w, lambda_l, alpha, rho, epsilon}) {
    if (!finite(v)) throw ConfigError("loss hyperparameters must be finite");
  }
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (gamma_min > gamma_max) throw ConfigError("gamma_min must be <= gamma_max");
  if (!(schedule_scale > 0.0)) throw ConfigError("schedule scale must be > 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (rho < 0.0 || rho >= 0.5) throw ConfigError("rho must lie in [0, 0.5)");
  if (epsilon < 0.0) throw ConfigError("epsilon must be >= 0");
}

double unified_loss(double dR, double gamma) { return sigmoid_log_loss(dR - gamma); }

double per_sample_weight(double dR, double gamma) { return sigmoid(gamma - dR); }

double delta_reward(const Policy& policy, const PreferenceTriplet& t, double beta,
                    bool length_norm) {
  const double lw = seq_logprob(policy, t.x, t.yw);
  const double ll = seq_logprob(policy, t.x, t.yl);
  if (length_norm) {
    return beta / static_cast<double>(t.yw.size()) * lw -
           beta / static_cast<double>(t.yl.size()) * ll;
  }
  return beta * (lw - ll);
}

double pmi(const Policy& policy, const Sequence& x, const Sequence& y) {
  return seq_logprob(policy, x, y) - seq_logprob_marginal(policy, y);
}

double delta_pmi(const Policy& policy, const PreferenceTriplet& t) {
  // Conditional gap minus marginal gap; equal to pmi(yw) - pmi(yl) up to rounding.
  const double conditional = seq_logprob(policy, t.x, t.yw) - seq_logprob(policy, t.x, t.yl);
  const double marginal = seq_logprob_marginal(policy, t.yw) - seq_logprob_marginal(policy, t.yl);
  return conditional - marginal;
}

double adaptive_gamma(double dpmi, const LossConfig& cfg) {
  if (cfg.gamma_min > cfg.gamma_max) {
    throw ConfigError("gamma_min must be <= gamma_max");
  }
  const double span = cfg.gamma_max - cfg.gamma_min;
  const double rectified = std::max(0.0, dpmi);
  switch (cfg.schedule) {
    case Schedule::exponential:
      return cfg.gamma_min + span * std::exp(-rectified);
    case Schedule::linear:
      return cfg.gamma_max - span * std::min(1.0, rectified / cfg.schedule_scale);
    case Schedule::cosine:
      return cfg.gamma_min +
             span * 0.5 *
                 (1.0 + std::cos(std::numbers::pi * std::min(1.0, rectified / cfg.schedule_scale)));
    case Schedule::none:
      return cfg.gamma;
  }
  return cfg.gamma;
}

double implicit_margin_gamma_ref(const Policy& ref, const PreferenceTriplet& t, double beta) {
  return beta * seq_logprob(ref, t.x, t.yw) - beta * seq_logprob(ref, t.x, t.yl);
}

double beta_dpo_beta_i(double m_i, double m_0, double alpha, double beta_0) {
  return std::max(1e-6 * beta_0, (1.0 + alpha * (m_i - m_0)) * beta_0);
}

std::array<double, 3> eps_dpo_candidates(double beta, double epsilon) {
  return {beta / (1.0 + epsilon), beta, beta * (1.0 + epsilon)};
}

std::size_t beta_dpo_drop_count(double rho, std::size_t b) {
  if (b <= 1) return 0;
  // Guard against 0.1 * 10 style products landing a hair above an integer.
  const auto drop = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(b) - 1e-9));
  return std::min(drop, b - 1);
}

namespace {

// Per-sample scores shared by every objective.
struct PairScores {
  double lw = 0.0, ll = 0.0;    // policy conditional log-likelihoods
  double rw = 0.0, rl = 0.0;    // reference conditional log-likelihoods
  double nw = 1.0, nl = 1.0;    // response lengths
  double dpmi = 0.0;

  double dlog() const { return lw - ll; }
  double ref_dlog() const { return rw - rl; }
};

// d(delta reward)/d(lw) and d/d(ll) for the plain or length-normalized form.
struct RewardForm {
  double value;
  double d_lw;
  double d_ll;
};

RewardForm reward_form(const PairScores& s, double beta, bool length_norm) {
  if (length_norm) {
    return {beta * (s.lw / s.nw - s.ll / s.nl), beta / s.nw, -beta / s.nl};
  }
  return {beta * s.dlog(), beta, -beta};
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

LossResult evaluate_batch(const LossConfig& cfg, const Policy& policy, const Policy* ref,
                          std::span<const PreferenceTriplet> batch, const BetaDpoState& state,
                          const DetachedState* frozen) {
  cfg.validate();
  const std::size_t b = batch.size();
  if (b == 0) {
    throw ConfigError("loss evaluation needs a nonempty batch");
  }
  const Method method = cfg.method;
  if (needs_reference(method)) {
    if (ref == nullptr) {
      throw ConfigError(std::string(to_string(method)) + " needs a reference policy");
    }
    if (!ref->same_shape(policy)) {
      throw ConfigError("reference policy shape does not match the policy");
    }
  }
  if (frozen != nullptr) {
    const bool sized = frozen->gamma.size() == b && frozen->beta.size() == b && frozen->kept.size() == b;
    if (!sized) throw ConfigError("frozen detached state does not match the batch size");
  }

  std::vector<PairScores> scores(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& t = batch[i];
    auto& s = scores[i];
    s.lw = seq_logprob(policy, t.x, t.yw);
    s.ll = seq_logprob(policy, t.x, t.yl);
    s.nw = static_cast<double>(t.yw.size());
    s.nl = static_cast<double>(t.yl.size());
    s.dpmi = (s.lw - s.ll) - (seq_logprob_marginal(policy, t.yw) - seq_logprob_marginal(policy, t.yl));
    if (ref != nullptr && needs_reference(method)) {
      s.rw = seq_logprob(*ref, t.x, t.yw);
      s.rl = seq_logprob(*ref, t.x, t.yl);
    }
  }

  LossResult result{0.0, GradientTensor(policy.vocab(), policy.order()), {}, {}, state};
  DetachedState& det = result.detached;
  det.gamma.assign(b, 0.0);
  det.beta.assign(b, cfg.beta);
  det.kept.assign(b, true);
  auto& diag = result.diag;

  // Batch statistics, all computed on detached values.
  switch (method) {
    case Method::rmipo:
      for (std::size_t i = 0; i < b; ++i) det.gamma[i] = adaptive_gamma(scores[i].dpmi, cfg);
      break;
    case Method::alpha_dpo: {
      std::vector<double> m(b);
      for (std::size_t i = 0; i < b; ++i) {
        m[i] = cfg.beta * ((scores[i].lw - scores[i].rw) - (scores[i].ll - scores[i].rl));
      }
      const double mu = mean(m);
      double var = 0.0;
      for (double v : m) var += (v - mu) * (v - mu);
      const double sd = std::sqrt(var / static_cast<double>(b));
      diag.zscore_degenerate = b < 2 || !(sd > 1e-12);
      for (std::size_t i = 0; i < b; ++i) {
        const double z = diag.zscore_degenerate ? 0.0 : (m[i] - mu) / sd;
        det.gamma[i] = cfg.gamma + cfg.alpha * z;
      }
      break;
    }
    case Method::kto: {
      double acc = 0.0;
      for (const auto& s : scores) acc += cfg.beta * (s.ll - s.rl);
      det.z_ref = std::max(0.0, acc / static_cast<double>(b));
      break;
    }
    case Method::beta_dpo: {
      std::vector<double> m(b);
      for (std::size_t i = 0; i < b; ++i) m[i] = cfg.beta * (scores[i].dlog() - scores[i].ref_dlog());
      const double batch_mean = mean(m);
      det.m0 = state.initialized
                   ? BetaDpoState::kDecay * state.m0 + (1.0 - BetaDpoState::kDecay) * batch_mean
                   : batch_mean;
      std::vector<std::size_t> order(b);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
        return std::abs(m[a] - det.m0) > std::abs(m[c] - det.m0);
      });
      const std::size_t drop = beta_dpo_drop_count(cfg.rho, b);
      for (std::size_t j = 0; j < drop; ++j) det.kept[order[j]] = false;
      for (std::size_t i = 0; i < b; ++i) {
        det.beta[i] = beta_dpo_beta_i(m[i], det.m0, cfg.alpha, cfg.beta);
      }
      break;
    }
    case Method::eps_dpo: {
      const auto candidates = eps_dpo_candidates(cfg.beta, cfg.epsilon);
      for (std::size_t i = 0; i < b; ++i) {
        const EpsChoice c = cfg.eps_rule ? cfg.eps_rule(scores[i].ref_dlog(), scores[i].dlog())
                                         : default_eps_rule(scores[i].ref_dlog(), scores[i].dlog());
        det.beta[i] = candidates[static_cast<std::size_t>(c)];
      }
      break;
    }
    default:
      break;
  }
  if (frozen != nullptr) {
    det = *frozen;
  }
  if (method == Method::beta_dpo) {
    result.beta_state = BetaDpoState{det.m0, true};
  }

  std::size_t active = 0;
  for (bool k : det.kept) active += k ? 1 : 0;
  const double inv_b = 1.0 / static_cast<double>(active);

  diag.samples.resize(b);
  std::vector<double> coef_w(b, 0.0), coef_l(b, 0.0);
  double total = 0.0;
  double margin_sum = 0.0;

  for (std::size_t i = 0; i < b; ++i) {
    const auto& s = scores[i];
    auto& d = diag.samples[i];
    d.dlog = s.dlog();
    d.dpmi = s.dpmi;
    d.beta = det.beta[i];
    d.kept = det.kept[i];
    double loss = 0.0;
    double cw = 0.0;
    double cl = 0.0;

    switch (method) {
      case Method::simpo:
      case Method::unified_fixed:
      case Method::rmipo:
      case Method::alpha_dpo: {
        const RewardForm r = reward_form(s, cfg.beta, cfg.length_norm);
        d.dR = r.value;
        d.gamma = (method == Method::simpo || method == Method::unified_fixed) ? cfg.gamma
                                                                               : det.gamma[i];
        loss = unified_loss(d.dR, d.gamma);
        const double w = per_sample_weight(d.dR, d.gamma);
        cw = -w * r.d_lw;
        cl = -w * r.d_ll;
        break;
      }
      case Method::dpo:
      case Method::beta_dpo:
      case Method::eps_dpo: {
        const double beta = method == Method::dpo ? cfg.beta : det.beta[i];
        d.dR = beta * s.dlog();
        d.gamma = beta * s.ref_dlog();
        loss = unified_loss(d.dR, d.gamma);
        const double w = per_sample_weight(d.dR, d.gamma);
        cw = -w * beta;
        cl = w * beta;
        break;
      }
      case Method::cpo: {
        d.dR = cfg.beta * s.dlog();
        d.gamma = 0.0;
        const double w = per_sample_weight(d.dR, 0.0);
        loss = unified_loss(d.dR, 0.0) - cfg.lambda * s.lw;
        cw = -w * cfg.beta - cfg.lambda;
        cl = w * cfg.beta;
        break;
      }
      case Method::slic: {
        d.dR = s.dlog();
        d.gamma = cfg.delta;
        const double slack = cfg.delta - s.dlog();
        const bool hinge_active = slack > 0.0;
        loss = (hinge_active ? slack : 0.0) - cfg.lambda * s.lw;
        cw = (hinge_active ? -1.0 : 0.0) - cfg.lambda;
        cl = hinge_active ? 1.0 : 0.0;
        break;
      }
      case Method::ipo: {
        const double target = 1.0 / (2.0 * cfg.tau);
        d.dR = s.dlog();
        d.gamma = s.ref_dlog() + target;
        const double residual = (s.lw - s.rw) - (s.ll - s.rl) - target;
        loss = residual * residual;
        cw = 2.0 * residual;
        cl = -2.0 * residual;
        break;
      }
      case Method::kto: {
        d.dR = cfg.beta * s.dlog();
        d.gamma = cfg.beta * s.ref_dlog();
        // The undesirable term is oriented as in the original KTO value
        // function so that minimizing it lowers the rejected reward.
        const double a = cfg.beta * (s.lw - s.rw) - det.z_ref;
        const double c = cfg.beta * (s.ll - s.rl) - det.z_ref;
        const double sa = sigmoid(a);
        const double sc = sigmoid(c);
        loss = -cfg.lambda_w * sa + cfg.lambda_l * sc;
        cw = -cfg.lambda_w * sa * (1.0 - sa) * cfg.beta;
        cl = cfg.lambda_l * sc * (1.0 - sc) * cfg.beta;
        break;
      }
      case Method::simper: {
        const double pw = std::exp(s.lw / s.nw);
        const double pl = std::exp(s.ll / s.nl);
        d.dR = s.lw / s.nw - s.ll / s.nl;
        d.gamma = 0.0;
        loss = -pw + pl;
        cw = -pw / s.nw;
        cl = pl / s.nl;
        break;
      }
    }

    d.weight = per_sample_weight(d.dR, d.gamma);
    d.loss = loss;
    margin_sum += d.dR - d.gamma;
    if (d.dR > 0.0) ++diag.win_count;
    if (d.kept) {
      total += loss;
      coef_w[i] = cw * inv_b;
      coef_l[i] = cl * inv_b;
    }
  }

  result.loss = total * inv_b;
  diag.mean_margin = margin_sum / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (!det.kept[i]) continue;
    accumulate_seq_logprob_grad(policy, batch[i].x, batch[i].yw, coef_w[i], result.grad);
    accumulate_seq_logprob_grad(policy, batch[i].x, batch[i].yl, coef_l[i], result.grad);
  }
  return result;
}

namespace {

LossConfig config_for(Method m) {
  LossConfig cfg;
  cfg.method = m;
  return cfg;
}

}  // namespace

LossResult rmipo_loss(const Policy& policy, const PreferenceTriplet& t, const LossConfig& cfg) {
  LossConfig c = cfg;
  c.method = Method::rmipo;
  return evaluate_batch(c, policy, nullptr, std::span(&t, 1));
}

LossResult dpo_loss(const Policy& policy, const Policy& ref, const PreferenceTriplet& t,
                    double beta) {
  LossConfig c = config_for(Method::dpo);
  c.beta = beta;
  return evaluate_batch(c, policy, &ref, std::span(&t, 1));
}

LossResult simpo_loss(const Policy& policy, const PreferenceTriplet& t, double beta, double gamma,
                      bool length_norm) {
  LossConfig c = config_for(Method::simpo);
  c.beta = beta;
  c.gamma = gamma;
  c.length_norm = length_norm;
  return evaluate_batch(c, policy, nullptr, std::span(&t, 1));
}

LossResult simper_loss(const Policy& policy, const PreferenceTriplet& t) {
  return evaluate_batch(config_for(Method::simper), policy, nullptr, std::span(&t, 1));
}

LossResult ipo_loss(const Policy& policy, const Policy& ref, const PreferenceTriplet& t,
                    double tau) {
  LossConfig c = config_for(Method::ipo);
  c.tau = tau;
  return evaluate_batch(c, policy, &ref, std::span(&t, 1));
}

LossResult slic_loss(const Policy& policy, const PreferenceTriplet& t, double delta,
                     double lambda) {
  LossConfig c = config_for(Method::slic);
  c.delta = delta;
  c.lambda = lambda;
  return evaluate_batch(c, policy, nullptr, std::span(&t, 1));
}

LossResult cpo_loss(const Policy& policy, const PreferenceTriplet& t, double beta, double lambda) {
  LossConfig c = config_for(Method::cpo);
  c.beta = beta;
  c.lambda = lambda;
  return evaluate_batch(c, policy, nullptr, std::span(&t, 1));
}

LossResult kto_loss(const Policy& policy, const Policy& ref,
                    std::span<const PreferenceTriplet> batch, double beta, double lambda_w,
                    double lambda_l) {
  LossConfig c = config_for(Method::kto);
  c.beta = beta;
  c.lambda_w = lambda_w;
  c.lambda_l = lambda_l;
  return evaluate_batch(c, policy, &ref, batch);
}

LossResult alpha_dpo_loss(const Policy& policy, const Policy& ref,
                          std::span<const PreferenceTriplet> batch, double beta, double gamma,
                          double alpha) {
  LossConfig c = config_for(Method::alpha_dpo);
  c.beta = beta;
  c.gamma = gamma;
  c.alpha = alpha;
  return evaluate_batch(c, policy, &ref, batch);
}

LossResult beta_dpo_loss(const Policy& policy, const Policy& ref,
                         std::span<const PreferenceTriplet> batch, double beta_0, double alpha,
                         double rho, const BetaDpoState& state) {
  LossConfig c = config_for(Method::beta_dpo);
  c.beta = beta_0;
  c.alpha = alpha;
  c.rho = rho;
  return evaluate_batch(c, policy, &ref, batch, state);
}

LossResult eps_dpo_loss(const Policy& policy, const Policy& ref,
                        std::span<const PreferenceTriplet> batch, double beta, double epsilon,
                        EpsRule rule) {
  LossConfig c = config_for(Method::eps_dpo);
  c.beta = beta;
  c.epsilon = epsilon;
  c.eps_rule = std::move(rule);
  return evaluate_batch(c, policy, &ref, batch);
}

void write_diagnostics_header(std::ostream& out) {
  out << "step,sample,dlog,dR,dpmi,gamma,weight,loss\n";
}

void write_diagnostics_rows(std::ostream& out, std::size_t step, const BatchDiagnostics& diag) {
  for (std::size_t i = 0; i < diag.samples.size(); ++i) {
    const auto& s = diag.samples[i];
    csv::row(out, step, i, s.dlog, s.dR, s.dpmi, s.gamma, s.weight, s.loss);
  }
}

}  // namespace prefopt

#include "prefopt/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "prefopt/csv.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/parallel.hpp"

namespace prefopt {

std::size_t Histogram::bin_of(double v) const noexcept {
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  const auto idx = static_cast<std::ptrdiff_t>(it - edges.begin()) - 1;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins()) - 1));
}

Histogram make_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (values.empty()) throw ConfigError("histogram needs at least one value");
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("histogram input contains a non-finite value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) ++h.counts[h.bin_of(v)];
  h.total = values.size();
  return h;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "edge_lo,edge_hi,count\n";
  for (std::size_t i = 0; i < h.bins(); ++i) csv::row(out, h.edges[i], h.edges[i + 1], h.counts[i]);
}

GradCheckReport grad_check(const LossConfig& cfg, const Policy& policy, const Policy* ref,
                           std::span<const PreferenceTriplet> batch, double h,
                           const BetaDpoState& state) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ConfigError("finite-difference step must lie in [1e-7, 1e-3]");
  }
  const LossResult base = evaluate_batch(cfg, policy, ref, batch, state);
  const DetachedState frozen = base.detached;

  std::vector<std::size_t> rows;
  for (const auto& t : batch) {
    for (const auto* y : {&t.yw, &t.yl}) {
      const auto visited = visited_rows(policy, t.x, *y);
      rows.insert(rows.end(), visited.begin(), visited.end());
    }
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());

  GradCheckReport report;
  Policy probe = policy;
  for (const std::size_t r : rows) {
    for (Token v = 0; v < policy.vocab(); ++v) {
      const double original = probe.at(r, v);
      probe.at(r, v) = original + h;
      const double plus = evaluate_batch(cfg, probe, ref, batch, state, &frozen).loss;
      probe.at(r, v) = original - h;
      const double minus = evaluate_batch(cfg, probe, ref, batch, state, &frozen).loss;
      probe.at(r, v) = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = base.grad.at(r, v);
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        throw Error("non-finite gradient entry at row " + std::to_string(r) + ", token " +
                    std::to_string(v));
      }
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      if (err > report.max_rel_error || report.entries == 0) {
        report.max_rel_error = std::max(err, report.max_rel_error);
        report.worst_row = r;
        report.worst_token = v;
      }
      ++report.entries;
    }
  }
  return report;
}

GradCheckInstance random_grad_check_instance(int vocab, int order, std::size_t batch,
                                             std::uint64_t seed) {
  const Vocab v(vocab);
  Rng rng = make_rng(seed, Stream::instances);
  GradCheckInstance inst;
  inst.policy = Policy::gaussian(vocab, order, 1.0, rng());
  inst.ref = Policy::gaussian(vocab, order, 1.0, rng());
  GenerateOptions options;
  options.n = batch;
  options.max_prompt_len = 2;
  options.max_resp_len = 3;
  inst.batch = generate_dataset(planted_oracle(v, 1.0, rng()), v, options, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  inst.state.m0 = normal(rng);
  inst.state.initialized = true;
  return inst;
}

LossConfig grad_check_config(Method m) {
  LossConfig cfg;
  cfg.method = m;
  if (m == Method::alpha_dpo || m == Method::beta_dpo) cfg.alpha = 0.5;
  if (m == Method::beta_dpo) cfg.rho = 0.25;
  return cfg;
}

std::vector<GradCheckRow> grad_check_suite(std::span<const Method> methods, std::size_t instances,
                                           double h, std::uint64_t seed, int vocab,
                                           std::size_t batch) {
  std::vector<GradCheckRow> out;
  out.reserve(methods.size() * instances);
  for (std::size_t i = 0; i < instances; ++i) {
    const GradCheckInstance inst = random_grad_check_instance(vocab, 2, batch, seed + i);
    for (const Method m : methods) {
      const LossConfig cfg = grad_check_config(m);
      const Policy* ref = needs_reference(m) ? &inst.ref : nullptr;
      out.push_back({m, i, grad_check(cfg, inst.policy, ref, inst.batch, h, inst.state)});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const GradCheckRow& a, const GradCheckRow& b) {
    return static_cast<int>(a.method) < static_cast<int>(b.method);
  });
  return out;
}

void write_grad_check_csv(std::ostream& out, std::span<const GradCheckRow> rows) {
  out << "method,instance,entries,max_rel_error\n";
  for (const auto& r : rows) {
    csv::row(out, to_string(r.method), r.instance, r.report.entries, r.report.max_rel_error);
  }
}

std::string_view to_string(DistMode m) {
  return m == DistMode::conditional ? "conditional" : "marginal-corrected";
}

DistMode parse_dist_mode(std::string_view name) {
  if (name == "conditional") return DistMode::conditional;
  if (name == "marginal-corrected") return DistMode::marginal_corrected;
  throw ConfigError("unknown distribution mode \"" + std::string(name) + "\"");
}

std::vector<double> delta_values(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 DistMode mode) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) {
    out.push_back(mode == DistMode::conditional
                      ? seq_logprob(policy, t.x, t.yw) - seq_logprob(policy, t.x, t.yl)
                      : delta_pmi(policy, t));
  }
  return out;
}

Histogram delta_log_distribution(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 DistMode mode, std::size_t bins) {
  const auto values = delta_values(policy, dataset, mode);
  return make_histogram(values, bins);
}

long rank_gap(const PreferenceTriplet& t) { return std::lround(t.gap); }

std::vector<double> reward_density(std::span<const PreferenceTriplet> dataset, double half_width,
                                   Rng& rng) {
  if (!(half_width >= 0.0) || !std::isfinite(half_width)) {
    throw ConfigError("jitter half-width must be finite and >= 0");
  }
  std::vector<double> out;
  out.reserve(dataset.size());
  std::uniform_real_distribution<double> jitter(-half_width, half_width);
  for (const auto& t : dataset) {
    const auto gap = static_cast<double>(rank_gap(t));
    out.push_back(half_width > 0.0 ? gap + jitter(rng) : gap);
  }
  return out;
}

std::vector<double> gamma_values(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                                 const LossConfig& cfg) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) out.push_back(adaptive_gamma(delta_pmi(policy, t), cfg));
  return out;
}

Histogram gamma_histogram(const Policy& policy, std::span<const PreferenceTriplet> dataset,
                          const LossConfig& cfg, std::size_t bins) {
  const auto values = gamma_values(policy, dataset, cfg);
  if (cfg.schedule != Schedule::none) {
    for (double g : values) {
      if (g < cfg.gamma_min || g > cfg.gamma_max) {
        throw Error("adaptive margin left [gamma_min, gamma_max]");
      }
    }
  }
  return make_histogram(values, bins);
}

std::vector<DominanceRow> gamma_dominance_experiment(std::span<const PreferenceTriplet> dataset,
                                                     std::span<const double> betas,
                                                     std::span<const double> gammas,
                                                     const TrainConfig& base, const Policy& init,
                                                     unsigned jobs) {
  if (betas.empty() || gammas.empty()) {
    throw ConfigError("dominance grid must contain at least one beta and one gamma");
  }
  std::vector<DominanceRow> rows(betas.size() * gammas.size());
  auto run = [&](std::size_t idx) {
    TrainConfig cfg = base;
    cfg.loss.method = Method::unified_fixed;
    cfg.loss.beta = betas[idx / gammas.size()];
    cfg.loss.gamma = gammas[idx % gammas.size()];
    cfg.lr = base.lr / cfg.loss.beta;
    const TrainResult trained = train(cfg, dataset, init);
    DominanceRow& row = rows[idx];
    row.beta = cfg.loss.beta;
    row.gamma = cfg.loss.gamma;
    row.lr = cfg.lr;
    row.win_rate = evaluate_win_rate(trained.policy, dataset, cfg.loss.beta, cfg.loss.length_norm);
    row.weights = dataset_weights(trained.policy, dataset, cfg.loss);
    double loss = 0.0;
    for (const auto& t : dataset) {
      loss += unified_loss(delta_reward(trained.policy, t, cfg.loss.beta, cfg.loss.length_norm),
                           cfg.loss.gamma);
    }
    row.loss = loss / static_cast<double>(dataset.size());
  };

  parallel_for(rows.size(), jobs, run);
  return rows;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("kendall tau needs equally sized inputs");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  long long score = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      const double s = da * db;
      if (s > 0) ++score;
      if (s < 0) --score;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return static_cast<double>(score) / pairs;
}

void write_dominance_csv(std::ostream& out, std::span<const DominanceRow> rows) {
  out << "beta,gamma,lr,win_rate,loss,mean_weight\n";
  for (const auto& r : rows) {
    const double mean_w = r.weights.empty() ? 0.0
                                            : std::accumulate(r.weights.begin(), r.weights.end(), 0.0) /
                                                  static_cast<double>(r.weights.size());
    csv::row(out, r.beta, r.gamma, r.lr, r.win_rate, r.loss, mean_w);
  }
}

void write_dominance_weights_csv(std::ostream& out, std::span<const DominanceRow> rows) {
  out << "beta,gamma,sample,weight,rank\n";
  for (const auto& r : rows) {
    std::vector<std::size_t> order(r.weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return r.weights[i] > r.weights[j]; });
    std::vector<std::size_t> rank(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;
    for (std::size_t i = 0; i < r.weights.size(); ++i) {
      csv::row(out, r.beta, r.gamma, i, r.weights[i], rank[i]);
    }
  }
}

namespace {

// Counts of (context row, next token) accumulated in a logit-shaped table.
void add_counts(LogitTable& counts, const Sequence& prefix, const Sequence& y) {
  std::vector<Token> history(prefix.tokens().begin(), prefix.tokens().end());
  for (const Token t : y.tokens()) {
    counts.at(counts.context_row(history), t) += 1.0;
    history.push_back(t);
  }
}

Policy policy_from_counts(const LogitTable& counts, double smoothing) {
  Policy p(counts.vocab(), counts.order());
  const auto src = counts.values();
  auto dst = p.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::log(src[i] + smoothing);
  return p;
}

}  // namespace

Policy fit_ngram_mle(int vocab, int order,
                     std::span<const std::pair<Sequence, Sequence>> examples, double smoothing) {
  if (!(smoothing > 0.0)) throw ConfigError("MLE smoothing must be > 0");
  LogitTable counts(vocab, order);
  for (const auto& [prefix, y] : examples) add_counts(counts, prefix, y);
  return policy_from_counts(counts, smoothing);
}

PopularityReport popularity_bias_experiment(const PopularityOptions& options) {
  const Vocab vocab(options.vocab);
  if (options.templates < 1 || options.n < 1) {
    throw ConfigError("popularity experiment needs templates >= 1 and n >= 1");
  }
  if (vocab.content_size() < 4) {
    throw ConfigError("popularity experiment needs at least 4 content tokens");
  }
  Rng rng = make_rng(options.seed, Stream::sampling);
  // Prompts and responses use disjoint halves of the content alphabet so a
  // prompt context never aliases a context inside a response.
  const Token split = kFirstContentToken + vocab.content_size() / 2;
  std::uniform_int_distribution<Token> prompt_token(kFirstContentToken, split - 1);
  std::uniform_int_distribution<Token> content(split, options.vocab - 1);
  const auto response_alphabet = static_cast<std::size_t>(options.vocab - split);
  if (options.templates + 1 > response_alphabet * response_alphabet) {
    throw ConfigError("popularity experiment asks for more templates than distinct responses");
  }

  // Template 0 is the popular one; all templates are distinct 2-token responses.
  std::vector<Sequence> templates;
  while (templates.size() < options.templates + 1) {
    Sequence s = Sequence::response({content(rng), content(rng), kEos});
    if (std::find(templates.begin(), templates.end(), s) == templates.end()) {
      templates.push_back(std::move(s));
    }
  }
  std::vector<double> draw_weights(templates.size(), 1.0);
  draw_weights[0] = options.popularity;
  std::discrete_distribution<std::size_t> pick(draw_weights.begin(), draw_weights.end());
  auto draw_prompt = [&] { return Sequence::prompt({prompt_token(rng), prompt_token(rng)}); };

  // Response-only quality: identical score rows for every prompt token.
  OracleReward oracle;
  for (Token p = kBos; p < vocab.size(); ++p) {
    for (const Token t : templates[0].tokens()) {
      if (t != kEos) oracle.weights[{p, t}] = options.quality_bonus;
    }
  }

  LogitTable counts(options.vocab, options.order);
  const Sequence empty = Sequence::prompt({});
  for (std::size_t i = 0; i < options.sft_samples; ++i) {
    const Sequence x = draw_prompt();
    const Sequence& y = templates[pick(rng)];
    add_counts(counts, x, y);
    add_counts(counts, empty, y);
  }

  PopularityReport report;
  report.policy = policy_from_counts(counts, options.smoothing);
  Rng label_rng = make_rng(options.seed, Stream::labeling);
  report.dataset.reserve(options.n);
  while (report.dataset.size() < options.n) {
    Sequence x = draw_prompt();
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    if (a == b) continue;
    const double ra = oracle_reward(oracle, x, templates[a]);
    const double rb = oracle_reward(oracle, x, templates[b]);
    if (bt_label(ra, rb, label_rng)) {
      report.dataset.emplace_back(std::move(x), templates[a], templates[b], ra - rb);
    } else {
      report.dataset.emplace_back(std::move(x), templates[b], templates[a], rb - ra);
    }
  }

  report.dlog = delta_values(report.policy, report.dataset, DistMode::conditional);
  report.dpmi = delta_values(report.policy, report.dataset, DistMode::marginal_corrected);
  auto moments = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(v.size()));
  };
  moments(report.dlog, report.mean_dlog, report.stdev_dlog);
  moments(report.dpmi, report.mean_dpmi, report.stdev_dpmi);
  return report;
}

}  // namespace prefopt

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/objectives.hpp"

namespace prefopt {
namespace {

namespace t = prefopt::testing;

Sequence resp(std::vector<Token> v) { return Sequence::response(std::move(v)); }
Sequence prm(std::vector<Token> v) { return Sequence::prompt(std::move(v)); }

const double kLn2 = std::numbers::ln2;

LossConfig config_for(Method m) {
  LossConfig c;
  c.method = m;
  c.alpha = 0.5;
  if (m == Method::beta_dpo) c.rho = 0.25;
  if (m == Method::eps_dpo) c.epsilon = 0.3;
  return c;
}

// --- building blocks -------------------------------------------------------

TEST(DeltaReward, UniformPolicyIsZero) {
  const Policy p(8, 2);
  const PreferenceTriplet eq(prm({2}), resp({3, kEos}), resp({4, kEos}));
  const PreferenceTriplet uneq(prm({2}), resp({3, 5, 6, kEos}), resp({kEos}));
  EXPECT_EQ(delta_reward(p, eq, 2.0, false), 0.0);
  EXPECT_NEAR(delta_reward(p, uneq, 2.0, true), 0.0, 1e-14);
}

TEST(DeltaReward, ComposesFromSeqLogprob) {
  const Policy p = t::random_policy(7, 2, 1);
  for (const auto& tr : t::random_batch(7, 10, 2)) {
    const double lw = seq_logprob(p, tr.x, tr.yw);
    const double ll = seq_logprob(p, tr.x, tr.yl);
    EXPECT_DOUBLE_EQ(delta_reward(p, tr, 1.5, false), 1.5 * (lw - ll));
    EXPECT_DOUBLE_EQ(delta_reward(p, tr, 1.5, true),
                     1.5 / tr.yw.size() * lw - 1.5 / tr.yl.size() * ll);
  }
}

TEST(Pmi, EmptyPromptIsExactlyZero) {
  const Policy p = t::random_policy(6, 2, 3);
  EXPECT_EQ(pmi(p, prm({}), resp({2, 3, kEos})), 0.0);
}

TEST(Pmi, OrderOneWithBosLastTokenIsZero) {
  const Policy p = t::random_policy(6, 1, 4);
  EXPECT_EQ(pmi(p, prm({3, kBos}), resp({2, 5, kEos})), 0.0);
}

TEST(Pmi, MatchesChainEnumeration) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Policy p = t::random_policy(5, 2, seed);
    for (const auto& tr : t::random_batch(5, 4, seed + 7, 2, 3)) {
      EXPECT_NEAR(pmi(p, tr.x, tr.yw), t::brute_force_pmi(p, tr.x, tr.yw), 1e-10);
    }
  }
}

TEST(DeltaPmi, TrivialCases) {
  const Policy p = t::random_policy(6, 2, 5);
  const PreferenceTriplet tr(prm({2, 4}), resp({3, kEos}), resp({5, 5, kEos}));
  const PreferenceTriplet sw(prm({2, 4}), resp({5, 5, kEos}), resp({3, kEos}));
  EXPECT_EQ(delta_pmi(p, sw), -delta_pmi(p, tr));
  const PreferenceTriplet empty(prm({}), resp({3, kEos}), resp({5, 5, kEos}));
  EXPECT_EQ(delta_pmi(p, empty), 0.0);
}

TEST(DeltaPmi, BayesCancellationIsExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Policy p = t::random_policy(8, 2, seed);
    for (const auto& tr : t::random_batch(8, 10, seed + 1, 3, 4)) {
      const double cond = seq_logprob(p, tr.x, tr.yw) - seq_logprob(p, tr.x, tr.yl);
      const double marg = seq_logprob_marginal(p, tr.yw) - seq_logprob_marginal(p, tr.yl);
      EXPECT_EQ(delta_pmi(p, tr), cond - marg);
    }
  }
}

TEST(AdaptiveGamma, AnchorValues) {
  const LossConfig c;
  EXPECT_NEAR(adaptive_gamma(0.0, c), 1.6, 1e-12);
  EXPECT_NEAR(adaptive_gamma(-3.0, c), 1.6, 1e-12);
  EXPECT_NEAR(adaptive_gamma(std::log(2.0), c), 0.95, 1e-12);
}

TEST(AdaptiveGamma, LinearAndCosineForms) {
  LossConfig c;
  c.schedule = Schedule::linear;
  EXPECT_NEAR(adaptive_gamma(1.5, c), 1.6 - 1.3 * 0.5, 1e-12);
  EXPECT_NEAR(adaptive_gamma(10.0, c), 0.3, 1e-12);
  c.schedule = Schedule::cosine;
  EXPECT_NEAR(adaptive_gamma(1.5, c), 0.3 + 1.3 * 0.5, 1e-12);
  EXPECT_NEAR(adaptive_gamma(3.0, c), 0.3, 1e-12);
  c.schedule = Schedule::none;
  c.gamma = 0.77;
  EXPECT_EQ(adaptive_gamma(5.0, c), 0.77);
}

TEST(AdaptiveGamma, ScheduleProperties) {
  LossConfig c;
  c.gamma_min = 0.2;
  c.gamma_max = 2.5;
  for (Schedule s : {Schedule::exponential, Schedule::linear, Schedule::cosine}) {
    c.schedule = s;
    double prev = adaptive_gamma(-50.0, c);
    for (double d = -50.0; d <= 50.0; d += 0.01) {
      const double g = adaptive_gamma(d, c);
      EXPECT_GE(g, c.gamma_min);
      EXPECT_LE(g, c.gamma_max);
      EXPECT_LE(g, prev + 1e-15);
      if (d <= 0.0) {
        EXPECT_EQ(g, c.gamma_max);
      }
      prev = g;
    }
    EXPECT_NEAR(adaptive_gamma(1e-9, c), c.gamma_max, 1e-8);
  }
}

TEST(AdaptiveGamma, RejectsInvertedBounds) {
  LossConfig c;
  c.gamma_min = 2.0;
  c.gamma_max = 1.0;
  EXPECT_THROW(adaptive_gamma(0.0, c), ConfigError);
}

TEST(UnifiedLoss, WeightAndSaturation) {
  EXPECT_NEAR(unified_loss(0.7, 0.7), kLn2, 1e-15);
  EXPECT_EQ(per_sample_weight(0.7, 0.7), 0.5);
  EXPECT_LT(per_sample_weight(60.0, 0.0), 1e-20);
  for (double x : {-5.0, -0.1, 0.0, 3.0}) {
    EXPECT_NEAR(per_sample_weight(x, 0.3), 1.0 - 1.0 / (1.0 + std::exp(-(x - 0.3))), 1e-15);
  }
}

TEST(ImplicitMargin, ReferenceCases) {
  const Policy uni(6, 2);
  const PreferenceTriplet tr(prm({2}), resp({3, kEos}), resp({4, kEos}));
  EXPECT_EQ(implicit_margin_gamma_ref(uni, tr, 2.0), 0.0);
  const Policy p = t::random_policy(6, 2, 9);
  EXPECT_DOUBLE_EQ(implicit_margin_gamma_ref(p, tr, 2.0), 2.0 * (seq_logprob(p, tr.x, tr.yw) -
                                                                  seq_logprob(p, tr.x, tr.yl)));
}

TEST(BetaDpoBeta, Substitution) {
  EXPECT_EQ(beta_dpo_beta_i(0.4, 0.4, 0.7, 0.1), 0.1);
  EXPECT_EQ(beta_dpo_beta_i(3.0, -1.0, 0.0, 0.1), 0.1);
  EXPECT_NEAR(beta_dpo_beta_i(1.5, 0.5, 0.5, 0.1), 0.15, 1e-15);
  EXPECT_NEAR(beta_dpo_beta_i(-100.0, 0.0, 1.0, 0.1), 1e-7, 1e-20);
}

TEST(BetaDpoDrop, CeilingCount) {
  EXPECT_EQ(beta_dpo_drop_count(0.25, 4), 1u);
  EXPECT_EQ(beta_dpo_drop_count(0.0, 32), 0u);
  EXPECT_EQ(beta_dpo_drop_count(0.1, 10), 1u);
  EXPECT_EQ(beta_dpo_drop_count(0.26, 4), 2u);
}

TEST(EpsDpoCandidates, Arithmetic) {
  const auto c = eps_dpo_candidates(0.01, 0.01);
  EXPECT_NEAR(c[0], 0.00990099009900990, 1e-15);
  EXPECT_EQ(c[1], 0.01);
  EXPECT_NEAR(c[2], 0.0101, 1e-15);
  const auto z = eps_dpo_candidates(0.5, 0.0);
  EXPECT_EQ(z[0], 0.5);
  EXPECT_EQ(z[2], 0.5);
}

TEST(Names, RoundTrip) {
  for (Method m : kTableMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_EQ(parse_method(to_string(Method::unified_fixed)), Method::unified_fixed);
  for (Schedule s : {Schedule::exponential, Schedule::linear, Schedule::cosine, Schedule::none}) {
    EXPECT_EQ(parse_schedule(to_string(s)), s);
  }
  EXPECT_THROW(parse_method("orpo"), ConfigError);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.rho = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.tau = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.schedule_scale = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- per-method closed forms ---------------------------------------------

TEST(Rmipo, UniformEqualLengthPair) {
  const Policy p(8, 2);
  const PreferenceTriplet tr(prm({2, 3}), resp({4, kEos}), resp({5, kEos}));
  const auto r = rmipo_loss(p, tr, LossConfig{});
  EXPECT_NEAR(r.loss, 1.7839007408883387, 1e-15);
  EXPECT_EQ(r.diag.samples[0].gamma, 1.6);
}

TEST(Rmipo, EmptyPromptKeepsGammaMax) {
  const Policy p = t::random_policy(6, 2, 14);
  const PreferenceTriplet tr(prm({}), resp({4, 2, kEos}), resp({5, kEos}));
  EXPECT_EQ(rmipo_loss(p, tr, LossConfig{}).diag.samples[0].gamma, 1.6);
}

TEST(Dpo, SnapshotReferenceGivesLn2) {
  const Policy p = t::random_policy(6, 2, 15);
  const PreferenceTriplet tr(prm({3}), resp({4, 2, kEos}), resp({5, kEos}));
  EXPECT_NEAR(dpo_loss(p, snapshot(p), tr, 2.0).loss, kLn2, 1e-15);
}

TEST(Dpo, UniformReferenceCancels) {
  const Policy p = t::random_policy(6, 2, 16);
  const PreferenceTriplet tr(prm({3}), resp({4, kEos}), resp({5, kEos}));
  const double dlog = seq_logprob(p, tr.x, tr.yw) - seq_logprob(p, tr.x, tr.yl);
  EXPECT_NEAR(dpo_loss(p, Policy(6, 2), tr, 2.0).loss, sigmoid_log_loss(2.0 * dlog), 1e-14);
}

TEST(Simpo, ZeroMarginUniformIsLn2) {
  const PreferenceTriplet tr(prm({3}), resp({4, 2, kEos}), resp({5, kEos}));
  EXPECT_NEAR(simpo_loss(Policy(6, 2), tr, 2.0, 0.0).loss, kLn2, 1e-14);
}

TEST(Simper, IdenticalPerTokenLikelihoodIsZeroAndBounded) {
  const PreferenceTriplet tr(prm({3}), resp({4, 2, kEos}), resp({5, kEos}));
  EXPECT_NEAR(simper_loss(Policy(6, 2), tr).loss, 0.0, 1e-15);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Policy p = t::random_policy(6, 2, seed, 3.0);
    for (const auto& b : t::random_batch(6, 5, seed)) {
      const double l = simper_loss(p, b).loss;
      EXPECT_GT(l, -1.0);
      EXPECT_LT(l, 1.0);
    }
  }
}

TEST(Ipo, ZeroAtTarget) {
  // Against a uniform reference the log-ratio gap is p.at(0, 2) - p.at(0, 3) = 1/(2 tau).
  const double tau = 0.25;
  Policy ref(4, 1);
  Policy p(4, 1);
  const PreferenceTriplet tr(prm({}), resp({2, kEos}), resp({3, kEos}));
  p.at(0, 2) = 2.0;
  EXPECT_NEAR(ipo_loss(p, ref, tr, tau).loss, 0.0, 1e-24);
}

TEST(Slic, SatisfiedHingeIsZero) {
  Policy p(4, 1);
  p.at(0, 2) = 3.0;
  const PreferenceTriplet tr(prm({}), resp({2, kEos}), resp({3, kEos}));
  EXPECT_EQ(slic_loss(p, tr, 1.0, 0.0).loss, 0.0);
  EXPECT_GT(slic_loss(p, tr, 5.0, 0.0).loss, 0.0);
}

TEST(Cpo, ZeroLambdaUniformIsLn2) {
  const PreferenceTriplet tr(prm({3}), resp({4, kEos}), resp({5, kEos}));
  EXPECT_NEAR(cpo_loss(Policy(6, 2), tr, 2.0, 0.0).loss, kLn2, 1e-15);
}

TEST(Kto, ReferenceEqualsPolicy) {
  const Policy p = t::random_policy(6, 2, 17);
  const auto batch = t::random_batch(6, 5, 18);
  const auto r = kto_loss(p, snapshot(p), batch, 2.0, 1.0, 1.0);
  EXPECT_EQ(r.detached.z_ref, 0.0);
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  for (const auto& s : r.diag.samples) EXPECT_NEAR(s.loss, 0.0, 1e-15);
  EXPECT_EQ(kto_loss(p, Policy(6, 2), batch, 2.0, 0.0, 0.0).loss, 0.0);
}

TEST(Kto, EmptyBatchIsRejected) {
  const Policy p(6, 2);
  EXPECT_THROW(kto_loss(p, p, {}, 2.0, 1.0, 1.0), ConfigError);
}

TEST(AlphaDpo, SingleSampleIsFlaggedDegenerate) {
  const Policy p = t::random_policy(6, 2, 19);
  const auto batch = t::random_batch(6, 1, 20);
  const auto r = alpha_dpo_loss(p, Policy(6, 2), batch, 2.0, 1.0, 0.5);
  EXPECT_TRUE(r.diag.zscore_degenerate);
  EXPECT_EQ(r.detached.gamma[0], 1.0);
}

TEST(AlphaDpo, SelfReferenceReducesToSimpo) {
  const Policy p = t::random_policy(6, 2, 21);
  const auto batch = t::random_batch(6, 6, 22);
  const auto a = alpha_dpo_loss(p, snapshot(p), batch, 2.0, 0.8, 0.5);
  EXPECT_TRUE(a.diag.zscore_degenerate);
  LossConfig s;
  s.method = Method::simpo;
  s.gamma = 0.8;
  EXPECT_NEAR(a.loss, evaluate_batch(s, p, nullptr, batch).loss, 1e-12);
}

TEST(BetaDpo, QuarterOfFourDropsOne) {
  const Policy p = t::random_policy(6, 2, 23);
  const auto batch = t::random_batch(6, 4, 24);
  const auto r = beta_dpo_loss(p, Policy(6, 2), batch, 2.0, 0.5, 0.25, {});
  std::size_t dropped = 0;
  for (bool k : r.detached.kept) dropped += k ? 0 : 1;
  EXPECT_EQ(dropped, 1u);
}

TEST(BetaDpo, MovingAverageTrajectory) {
  const Policy p = t::random_policy(6, 2, 25);
  const Policy ref = t::random_policy(6, 2, 26);
  std::vector<Dataset> batches;
  for (std::uint64_t s = 0; s < 3; ++s) batches.push_back(t::random_batch(6, 4, 30 + s));

  // Hand-iterated recurrence: m0 = mean_1, then m0 = 0.9 m0 + 0.1 mean_t.
  std::vector<double> expect;
  double m0 = 0.0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    double mean = 0.0;
    for (const auto& tr : batches[k]) {
      const double m = 2.0 * ((seq_logprob(p, tr.x, tr.yw) - seq_logprob(ref, tr.x, tr.yw)) -
                              (seq_logprob(p, tr.x, tr.yl) - seq_logprob(ref, tr.x, tr.yl)));
      mean += m / 4.0;
    }
    m0 = k == 0 ? mean : 0.9 * m0 + 0.1 * mean;
    expect.push_back(m0);
  }

  BetaDpoState state;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const auto r = beta_dpo_loss(p, ref, batches[k], 2.0, 0.5, 0.0, state);
    EXPECT_NEAR(r.detached.m0, expect[k], 1e-12) << k;
    EXPECT_TRUE(r.beta_state.initialized);
    state = r.beta_state;
  }
}

TEST(EpsDpo, DefaultRuleSplitsByReferenceAgreement) {
  // Reference strongly prefers token 2 from the BOS row.
  Policy ref(6, 1);
  ref.at(0, 2) = 3.0;
  const Policy p = t::random_policy(6, 1, 27);
  Dataset batch;
  batch.emplace_back(prm({}), resp({2, kEos}), resp({3, kEos}));
  batch.emplace_back(prm({}), resp({3, kEos}), resp({2, kEos}));
  batch.emplace_back(prm({}), resp({2, 4, kEos}), resp({5, kEos}));
  batch.emplace_back(prm({}), resp({4, kEos}), resp({2, 5, kEos}));
  const auto r = eps_dpo_loss(p, ref, batch, 1.0, 0.1);
  const auto cand = eps_dpo_candidates(1.0, 0.1);
  std::size_t lower = 0, upper = 0;
  for (double b : r.detached.beta) {
    lower += b == cand[0] ? 1 : 0;
    upper += b == cand[2] ? 1 : 0;
  }
  EXPECT_EQ(lower, 2u);
  EXPECT_EQ(upper, 2u);
  EXPECT_EQ(r.detached.beta[0], cand[0]);
  EXPECT_EQ(r.detached.beta[1], cand[2]);
}

TEST(EpsDpo, CustomRuleIsHonored) {
  const Policy p = t::random_policy(6, 2, 28);
  const auto batch = t::random_batch(6, 3, 29);
  const auto r = eps_dpo_loss(p, Policy(6, 2), batch, 1.0, 0.2,
                              [](double, double) { return EpsChoice::keep; });
  for (double b : r.detached.beta) EXPECT_EQ(b, 1.0);
}

TEST(EvaluateBatch, ReferenceRequired) {
  LossConfig c;
  c.method = Method::dpo;
  EXPECT_THROW(evaluate_batch(c, Policy(6, 2), nullptr, t::random_batch(6, 2, 1)), ConfigError);
  const Policy other(6, 1);
  EXPECT_THROW(evaluate_batch(c, Policy(6, 2), &other, t::random_batch(6, 2, 1)), ConfigError);
}

// --- independent oracle comparisons --------------------------------------

struct Instance {
  Policy policy;
  Policy ref;
  Dataset batch;
};

Instance make_instance(std::uint64_t seed, int vocab = 6, std::size_t b = 5) {
  return {t::random_policy(vocab, 2, seed), t::random_policy(vocab, 2, seed + 1000),
          t::random_batch(vocab, b, seed + 2000)};
}

class PerMethod : public ::testing::TestWithParam<Method> {};

TEST_P(PerMethod, DetachedStateMatchesOracle) {
  const LossConfig cfg = config_for(GetParam());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = make_instance(seed);
    const BetaDpoState state{0.3, seed % 2 == 1};
    const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch, state);
    const auto f = t::naive_detached(cfg, in.policy, &in.ref, in.batch, state.m0, state.initialized);
    for (std::size_t i = 0; i < in.batch.size(); ++i) {
      if (cfg.method == Method::rmipo || cfg.method == Method::alpha_dpo) {
        EXPECT_NEAR(r.detached.gamma[i], f.margin[i], 1e-12);
      }
      EXPECT_NEAR(r.detached.beta[i], f.beta[i], 1e-12);
      EXPECT_EQ(r.detached.kept[i], f.kept[i]);
    }
    EXPECT_NEAR(r.detached.z_ref, f.z_ref, 1e-12);
    if (cfg.method == Method::beta_dpo) {
      EXPECT_NEAR(r.detached.m0, f.m0, 1e-12);
    }
  }
}

TEST_P(PerMethod, LossMatchesOracle) {
  for (bool length_norm : {true, false}) {
    LossConfig cfg = config_for(GetParam());
    cfg.length_norm = length_norm;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto in = make_instance(seed);
      const auto f = t::naive_detached(cfg, in.policy, &in.ref, in.batch);
      const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch);
      EXPECT_NEAR(r.loss, t::naive_loss(cfg, in.policy, &in.ref, in.batch, f), 1e-11) << seed;
    }
  }
}

TEST_P(PerMethod, GradientMatchesOracleFiniteDifferences) {
  const LossConfig cfg = config_for(GetParam());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto in = make_instance(seed, 5, 4);
    const auto f = t::naive_detached(cfg, in.policy, &in.ref, in.batch);
    const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch);
    const auto num = t::numeric_gradient(
        in.policy,
        [&](const Policy& q) { return t::naive_loss(cfg, q, &in.ref, in.batch, f); }, 1e-5);
    for (std::size_t i = 0; i < num.size(); ++i) {
      EXPECT_LT(std::abs(r.grad.values()[i] - num[i]) / std::max(1.0, std::abs(num[i])), 1e-6)
          << "seed " << seed << " entry " << i;
    }
  }
}

TEST_P(PerMethod, FrozenStateReproducesDetachedValues) {
  const LossConfig cfg = config_for(GetParam());
  const auto in = make_instance(3);
  const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch);
  Policy moved = in.policy;
  for (double& v : moved.values()) v += 0.05;
  const auto again = evaluate_batch(cfg, moved, &in.ref, in.batch, {}, &r.detached);
  EXPECT_EQ(again.detached.gamma, r.detached.gamma);
  EXPECT_EQ(again.detached.beta, r.detached.beta);
  EXPECT_EQ(again.detached.kept, r.detached.kept);
  const auto f = t::naive_detached(cfg, in.policy, &in.ref, in.batch);
  EXPECT_NEAR(again.loss, t::naive_loss(cfg, moved, &in.ref, in.batch, f), 1e-11);
}

TEST_P(PerMethod, DiagnosticsInvariants) {
  const LossConfig cfg = config_for(GetParam());
  const auto in = make_instance(4, 6, 8);
  const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch);
  std::size_t wins = 0;
  double margin = 0.0;
  for (const auto& s : r.diag.samples) {
    EXPECT_EQ(s.weight, per_sample_weight(s.dR, s.gamma));
    EXPECT_GT(s.weight, 0.0);
    EXPECT_LT(s.weight, 1.0);
    wins += s.dR > 0.0 ? 1 : 0;
    margin += (s.dR - s.gamma) / static_cast<double>(r.diag.samples.size());
  }
  EXPECT_EQ(r.diag.win_count, wins);
  EXPECT_NEAR(r.diag.mean_margin, margin, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(AllMethods, PerMethod,
                         ::testing::Values(Method::dpo, Method::slic, Method::ipo, Method::cpo,
                                           Method::kto, Method::simpo, Method::alpha_dpo,
                                           Method::beta_dpo, Method::eps_dpo, Method::simper,
                                           Method::rmipo, Method::unified_fixed),
                         [](const auto& info) {
                           std::string name(to_string(info.param));
                           std::replace(name.begin(), name.end(), '-', '_');
                           return name;
                         });

// --- identities ------------------------------------------------------------

TEST(Identity, DpoIsUnifiedLossWithImplicitMargin) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto in = make_instance(seed, 7, 1);
    const auto& tr = in.batch[0];
    const double beta = 0.5 + static_cast<double>(seed % 7);
    const double dR = beta * (seq_logprob(in.policy, tr.x, tr.yw) - seq_logprob(in.policy, tr.x, tr.yl));
    const double expect = unified_loss(dR, implicit_margin_gamma_ref(in.ref, tr, beta));
    EXPECT_NEAR(dpo_loss(in.policy, in.ref, tr, beta).loss, expect, 1e-12);
  }
}

// Assembled gradient against -mean_i[w_i * grad(delta)_i], with w_i and the
// per-sample delta gradient computed outside evaluate_batch.
void expect_factoring(const LossConfig& cfg, const Instance& in) {
  const auto f = t::naive_detached(cfg, in.policy, &in.ref, in.batch);
  const auto r = evaluate_batch(cfg, in.policy, &in.ref, in.batch);
  GradientTensor expect(in.policy.vocab(), in.policy.order());
  std::size_t active = 0;
  for (bool k : f.kept) active += k ? 1 : 0;
  for (std::size_t i = 0; i < in.batch.size(); ++i) {
    if (!f.kept[i]) continue;
    const auto& tr = in.batch[i];
    const auto s = t::naive_scores(in.policy, &in.ref, tr);
    double beta = cfg.beta;
    double dR = 0.0, gamma = 0.0, sw = 0.0, sl = 0.0;
    switch (cfg.method) {
      case Method::dpo:
      case Method::beta_dpo:
      case Method::eps_dpo:
        beta = f.beta[i];
        dR = beta * (s.lw - s.ll);
        gamma = beta * (s.rw - s.rl);
        sw = 1.0;
        sl = 1.0;
        break;
      default:
        sw = cfg.length_norm ? 1.0 / s.nw : 1.0;
        sl = cfg.length_norm ? 1.0 / s.nl : 1.0;
        dR = beta * (sw * s.lw - sl * s.ll);
        gamma = (cfg.method == Method::rmipo || cfg.method == Method::alpha_dpo) ? f.margin[i]
                                                                                 : cfg.gamma;
        break;
    }
    const double w = 1.0 - t::logistic(dR - gamma);
    const double scale = -beta * w / static_cast<double>(active);
    accumulate_seq_logprob_grad(in.policy, tr.x, tr.yw, scale * sw, expect);
    accumulate_seq_logprob_grad(in.policy, tr.x, tr.yl, -scale * sl, expect);
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    ASSERT_NEAR(r.grad.values()[i], expect.values()[i], 1e-10) << to_string(cfg.method) << " " << i;
  }
}

TEST(Identity, GradientFactorsThroughWeights) {
  for (Method m : {Method::dpo, Method::simpo, Method::rmipo, Method::alpha_dpo, Method::beta_dpo,
                   Method::eps_dpo, Method::unified_fixed}) {
    for (bool ln : {true, false}) {
      LossConfig cfg = config_for(m);
      cfg.length_norm = ln;
      for (std::uint64_t seed = 0; seed < 10; ++seed) expect_factoring(cfg, make_instance(seed, 6, 6));
    }
  }
}

TEST(Identity, BetaScalingOfGradientPrefactor) {
  const auto in = make_instance(40, 6, 6);
  for (double c : {0.5, 3.0}) {
    LossConfig cfg = config_for(Method::simpo);
    cfg.beta = 2.0 * c;
    expect_factoring(cfg, in);
  }
}

TEST(Reductions, HoldOnRandomBatches) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto in = make_instance(seed, 7, 6);
    auto run = [&](LossConfig c) { return evaluate_batch(c, in.policy, &in.ref, in.batch); };
    auto close = [&](const LossResult& a, const LossResult& b) {
      EXPECT_NEAR(a.loss, b.loss, 1e-12);
      for (std::size_t i = 0; i < a.grad.size(); ++i) {
        EXPECT_NEAR(a.grad.values()[i], b.grad.values()[i], 1e-12);
      }
    };
    LossConfig simpo;
    simpo.method = Method::simpo;
    simpo.gamma = 0.9;
    LossConfig rmipo = simpo;
    rmipo.method = Method::rmipo;
    rmipo.schedule = Schedule::none;
    close(run(rmipo), run(simpo));

    LossConfig alpha = simpo;
    alpha.method = Method::alpha_dpo;
    alpha.alpha = 0.0;
    close(run(alpha), run(simpo));

    LossConfig dpo;
    dpo.method = Method::dpo;
    LossConfig beta = dpo;
    beta.method = Method::beta_dpo;
    beta.alpha = 0.0;
    beta.rho = 0.0;
    close(run(beta), run(dpo));

    LossConfig eps = dpo;
    eps.method = Method::eps_dpo;
    eps.epsilon = 0.0;
    close(run(eps), run(dpo));
  }
}

TEST(Reference, IsNeverModified) {
  const auto in = make_instance(50);
  const Policy before = in.ref;
  for (Method m : kTableMethods) evaluate_batch(config_for(m), in.policy, &in.ref, in.batch);
  EXPECT_EQ(in.ref, before);
}

}  // namespace
}  // namespace prefopt

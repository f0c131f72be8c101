#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "prefopt/csv.hpp"
#include "prefopt/numerics.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {
namespace {

TEST(SigmoidLogLoss, ClosedForms) {
  EXPECT_NEAR(sigmoid_log_loss(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(sigmoid_log_loss(1.0), 0.31326168751822286, 1e-15);
}

TEST(SigmoidLogLoss, ExtremeArgumentsStayFinite) {
  const double big = sigmoid_log_loss(1000.0);
  EXPECT_GE(big, 0.0);
  EXPECT_LT(big, 1e-300);
  EXPECT_NEAR(sigmoid_log_loss(-1000.0), 1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(sigmoid_log_loss(-1e308)));
}

TEST(Sigmoid, SymmetricAndBounded) {
  for (double x : {-700.0, -30.0, -1.0, 0.0, 0.5, 30.0, 700.0}) {
    const double s = sigmoid(x);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_NEAR(s + sigmoid(-x), 1.0, 1e-15);
  }
  EXPECT_EQ(sigmoid(0.0), 0.5);
}

TEST(Softplus, MatchesNaiveInSafeRange) {
  for (double x = -20.0; x <= 20.0; x += 0.37) {
    EXPECT_NEAR(softplus(x), std::log1p(std::exp(x)), 1e-13);
  }
}

TEST(Rng, StreamsAreDistinctAndReproducible) {
  auto a = make_rng(7, Stream::labeling);
  auto b = make_rng(7, Stream::labeling);
  auto c = make_rng(7, Stream::order);
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
}

TEST(Rng, BernoulliFrequencyMatchesSigmoidOne) {
  auto rng = make_rng(123, Stream::labeling);
  std::bernoulli_distribution coin(sigmoid(1.0));
  const int n = 1000000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += coin(rng) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(hits) / n, 0.7310585786300049, 0.003);
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
  }
}

}  // namespace
}  // namespace prefopt

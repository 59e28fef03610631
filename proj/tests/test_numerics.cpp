#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pbcert/numerics.hpp"

using namespace pbcert;

TEST(BinaryKl, IdenticalIsZero)
{
  EXPECT_DOUBLE_EQ(binary_kl(0.5, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(binary_kl(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(binary_kl(1.0, 1.0), 0.0);
}

TEST(BinaryKl, DegenerateFirstArgument)
{
  for (double qp : {0.01, 0.3, 0.9}) {
    EXPECT_NEAR(binary_kl(0.0, qp), -std::log(1.0 - qp), 1e-14);
  }
}

TEST(BinaryKl, HighPrecisionValue)
{
  // mpmath, 30 digits
  EXPECT_NEAR(binary_kl(0.1, 0.2201), 0.0500150, 1e-6);
}

TEST(BinaryKl, SaturatesAndRejects)
{
  EXPECT_TRUE(std::isinf(binary_kl(0.5, 0.0)));
  EXPECT_TRUE(std::isinf(binary_kl(0.5, 1.0)));
  EXPECT_THROW(binary_kl(-0.1, 0.5), std::domain_error);
  EXPECT_THROW(binary_kl(0.5, 1.5), std::domain_error);
}

TEST(KlInverse, Examples)
{
  EXPECT_DOUBLE_EQ(kl_inverse(0.3, 0.0), 0.3);
  EXPECT_NEAR(kl_inverse(0.0, std::log(2.0)), 0.5, 1e-12);
  EXPECT_NEAR(kl_inverse(0.1, 0.05), 0.2200786, 1e-6);
  EXPECT_DOUBLE_EQ(kl_inverse(1.0, 0.3), 1.0);
}

TEST(KlInverse, RoundTripProperty)
{
  // p -> kl(q, p) -> kl^{-1} recovers p
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double q = u(rng);
    const double p = q + (1.0 - q) * u(rng);
    const double inv = kl_inverse(q, binary_kl(q, p));
    ASSERT_GE(inv, q);
    ASSERT_NEAR(inv, p, 1e-9) << "q=" << q;
  }
}

TEST(KlInverse, LargestFeasible)
{
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> q(0.0, 0.99), b(1e-6, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double qh = q(rng), budget = b(rng);
    const double inv = kl_inverse(qh, budget);
    ASSERT_LE(binary_kl(qh, inv), budget);
    if (inv < 1.0) {
      ASSERT_GT(binary_kl(qh, std::nextafter(inv, 2.0)), budget);
    }
  }
}

TEST(KlInverse, PinskerNeverLooser)
{
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> q(0.0, 1.0), b(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double qh = q(rng), budget = b(rng);
    ASSERT_LE(kl_inverse(qh, budget), std::min(1.0, qh + std::sqrt(budget / 2.0)) + 1e-12);
  }
}

TEST(GaussianKl, HandValues)
{
  DiagonalGaussian a{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Ones(1)};
  DiagonalGaussian b{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  DiagonalGaussian c{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, std::exp(2.0))};
  EXPECT_NEAR(gaussian_kl(a, a), 0.0, 1e-15);
  EXPECT_NEAR(gaussian_kl(a, b), 0.5, 1e-12);
  EXPECT_NEAR(gaussian_kl(b, c), 0.5 * (2.0 + std::exp(-2.0) - 1.0), 1e-12);
  EXPECT_NEAR(gaussian_kl(b, c), 0.5676676, 1e-7);
}

TEST(GaussianKl, NonNegativeAndAdditive)
{
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    DiagonalGaussian q{Eigen::VectorXd(4), Eigen::VectorXd(4)}, p = q;
    for (int i = 0; i < 4; ++i) {
      q.means(i) = n(rng);
      p.means(i) = n(rng);
      q.variances(i) = std::exp(n(rng));
      p.variances(i) = std::exp(n(rng));
    }
    const double total = gaussian_kl(q, p);
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) {
      DiagonalGaussian qi{q.means.segment(i, 1), q.variances.segment(i, 1)};
      DiagonalGaussian pi{p.means.segment(i, 1), p.variances.segment(i, 1)};
      sum += gaussian_kl(qi, pi);
    }
    EXPECT_GE(total, 0.0);
    EXPECT_NEAR(total, sum, 1e-12);
  }
}

TEST(LogSumExp, Examples)
{
  EXPECT_NEAR(log_sum_exp(Eigen::VectorXd::Zero(7)), std::log(7.0), 1e-15);
  EXPECT_DOUBLE_EQ(log_sum_exp(Eigen::VectorXd::Constant(1, -3.5)), -3.5);
  Eigen::Vector2d v(std::log(2.0), std::log(3.0));
  EXPECT_NEAR(log_sum_exp(v), std::log(5.0), 1e-15);
  Eigen::Vector2d big(1000.0, 1000.0);
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_THROW(log_sum_exp(Eigen::VectorXd()), std::invalid_argument);
}

TEST(Catoni, Examples)
{
  EXPECT_NEAR(catoni_infimum(0.0, 0.032189), 1.0 - std::exp(-0.032189), 1e-6);
  EXPECT_NEAR(catoni_infimum(0.0, 0.032189), 0.0316764, 1e-6);
  EXPECT_NEAR(catoni_infimum(0.0, 0.0), 0.0, 1e-9);
  EXPECT_NEAR(catoni_infimum(1.0, 0.0), 1.0, 1e-9);
}

TEST(Catoni, BelowEveryProbe)
{
  for (double a : {0.05, 0.2, 0.6}) {
    for (double c : {0.001, 0.05, 0.3}) {
      const double inf = catoni_infimum(a, c);
      for (double l = -6.0; l <= 6.0; l += 0.25) {
        ASSERT_LE(inf, catoni_objective(std::exp(l), a, c) + 1e-12);
      }
    }
  }
}

TEST(Softplus, InverseAndStability)
{
  for (double y : {1e-4, 0.05, 1.0, 30.0}) {
    EXPECT_NEAR(softplus(inverse_softplus(y)), y, 1e-12 * std::max(1.0, y));
  }
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_GT(softplus(-800.0), -1.0);
  EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
  EXPECT_THROW(inverse_softplus(0.0), std::domain_error);
}

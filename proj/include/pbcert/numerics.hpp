#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace pbcert {

/// Bernoulli KL divergence kl(q || q'), with 0 log 0 = 0.
/// Saturates to +inf when q' is 0 or 1 and q differs from it.
/// Throws std::domain_error outside [0, 1].
double binary_kl(double q, double q_prime);

/// Largest q in [q_hat, 1] with kl(q_hat || q) <= budget, found by bisection.
double kl_inverse(double q_hat, double budget);

/// Mean-field Gaussian N(means, diag(variances)).
struct DiagonalGaussian {
  Eigen::VectorXd means;
  Eigen::VectorXd variances;
};

/// KL(q || p) for diagonal Gaussians, summed over independent coordinates.
double gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p);

/// inf over lambda > 0 of (1 - exp(-lambda a - c)) / (1 - exp(-lambda)).
/// The search runs over log(lambda) in [-6, 6].
double catoni_infimum(double loss_scaled, double complexity);

/// Value of the Catoni objective at a single lambda.
double catoni_objective(double lambda, double loss_scaled, double complexity);

/// Max-shifted log(sum(exp(z))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& z)
{
  using Scalar = typename Derived::Scalar;
  if (z.size() == 0) {
    throw std::invalid_argument("log_sum_exp: empty input");
  }
  const Scalar shift = z.maxCoeff();
  if (!std::isfinite(shift)) {
    return shift;
  }
  return shift + std::log((z.derived().array() - shift).exp().sum());
}

template <std::floating_point Scalar>
Scalar softplus(Scalar x)
{
  // log(1 + e^x) without overflow
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <std::floating_point Scalar>
Scalar inverse_softplus(Scalar y)
{
  if (!(y > Scalar(0))) {
    throw std::domain_error("inverse_softplus: argument must be positive");
  }
  // log(e^y - 1) = y + log(1 - e^-y)
  return y + std::log(-std::expm1(-y));
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x)
{
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Coefficient-wise softplus of a dense expression.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
softplus(const Eigen::MatrixBase<Derived>& x)
{
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return softplus(v); });
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
sigmoid(const Eigen::MatrixBase<Derived>& x)
{
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

}  // namespace pbcert

#include "pbcert/numerics.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace pbcert {

namespace {

void require_probability(double q, const char* what)
{
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::domain_error(std::string(what) + " must lie in [0, 1]");
  }
}

// q log(q / r) with the 0 log 0 = 0 convention.
double xlogy_ratio(double q, double r)
{
  if (q == 0.0) {
    return 0.0;
  }
  if (r == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return q * std::log(q / r);
}

}  // namespace

double binary_kl(double q, double q_prime)
{
  require_probability(q, "binary_kl: q");
  require_probability(q_prime, "binary_kl: q'");
  const double value = xlogy_ratio(q, q_prime) + xlogy_ratio(1.0 - q, 1.0 - q_prime);
  // rounding can push tiny divergences slightly negative
  return std::max(value, 0.0);
}

double kl_inverse(double q_hat, double budget)
{
  require_probability(q_hat, "kl_inverse: q_hat");
  if (!(budget >= 0.0)) {
    throw std::domain_error("kl_inverse: budget must be non-negative");
  }
  if (budget == 0.0 || q_hat == 1.0) {
    return q_hat;
  }
  if (std::isinf(budget)) {
    return 1.0;
  }

  double lo = q_hat;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) {
      break;
    }
    if (binary_kl(q_hat, mid) > budget) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return lo;
}

double gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p)
{
  const auto dim = q.means.size();
  if (q.variances.size() != dim || p.means.size() != dim || p.variances.size() != dim) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  if ((q.variances.array() <= 0.0).any() || (p.variances.array() <= 0.0).any()) {
    throw std::domain_error("gaussian_kl: variances must be strictly positive");
  }
  const auto b1 = q.variances.array();
  const auto b0 = p.variances.array();
  const auto diff = q.means.array() - p.means.array();
  const double kl =
      0.5 * ((b0 / b1).log() + diff.square() / b0 + b1 / b0 - 1.0).sum();
  return std::max(kl, 0.0);
}

double catoni_objective(double lambda, double loss_scaled, double complexity)
{
  // 1 - exp(-x) computed as -expm1(-x)
  return -std::expm1(-lambda * loss_scaled - complexity) / -std::expm1(-lambda);
}

double catoni_infimum(double loss_scaled, double complexity)
{
  require_probability(loss_scaled, "catoni_infimum: loss_scaled");
  if (!(complexity >= 0.0)) {
    throw std::domain_error("catoni_infimum: complexity must be non-negative");
  }
  constexpr double lo_log = -6.0;
  constexpr double hi_log = 6.0;
  auto eval = [&](double log_lambda) {
    return catoni_objective(std::exp(log_lambda), loss_scaled, complexity);
  };

  // Coarse scan to bracket the minimum, then golden-section refinement.
  constexpr int grid = 25;
  const double step = (hi_log - lo_log) / (grid - 1);
  double best = std::numeric_limits<double>::infinity();
  int best_i = 0;
  for (int i = 0; i < grid; ++i) {
    const double v = eval(lo_log + step * i);
    if (v < best) {
      best = v;
      best_i = i;
    }
  }

  double a = lo_log + step * std::max(best_i - 1, 0);
  double b = lo_log + step * std::min(best_i + 1, grid - 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int it = 0; it < 64; ++it) {
    best = std::min({best, fc, fd});
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
  }
  return std::min({best, fc, fd});
}

}  // namespace pbcert

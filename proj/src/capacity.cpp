#include "vitcap/capacity.hpp"

#include <limits>
#include <numeric>
#include <string>

namespace vitcap {

Rational Rational::reduced(long long num, long long den) {
  if (den == 0) throw DomainError("rational: zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const long long g = std::gcd(num < 0 ? -num : num, den);
  return Rational{g ? num / g : num, g ? den / g : den};
}

Rational determination_ratio(const DeterminationInputs& in) {
  if (in.params <= 0) throw DomainError("determination ratio: P must be positive");
  if (in.outputs <= 0 || in.samples <= 0)
    throw DomainError("determination ratio: M and K must be positive");
  if (in.outputs > std::numeric_limits<long long>::max() / in.samples)
    throw DomainError("determination ratio: M*K overflows");
  return Rational::reduced(in.outputs * in.samples, in.params);
}

double noise_fit_fraction(double q) {
  if (!(q >= 1.0))
    throw DomainError("noise fit fraction: Q = " + std::to_string(q) +
                      " is underdetermined (Q < 1); the fraction saturates at 1");
  return 1.0 / q;
}

double train_mse_theory(double q, double sigma2) {
  if (!(q > 0.0)) throw DomainError("train MSE law: Q must be positive");
  if (!(sigma2 > 0.0)) throw DomainError("train MSE law: sigma^2 must be positive");
  if (q <= 1.0) return 0.0;  // interpolation regime
  return sigma2 * (1.0 - 1.0 / q);
}

double test_mse_theory(double q, const TheoryParams& params) {
  if (!(q > 0.0)) throw DomainError("test MSE law: Q must be positive");
  if (!(params.sigma2 > 0.0)) throw DomainError("test MSE law: sigma^2 must be positive");
  if (params.c < 0.0) throw DomainError("test MSE law: c must be non-negative");
  return params.sigma2 * (params.c / q + 1.0);
}

std::vector<CurvePoint> curve_sweep(std::span<const double> q_grid, const TheoryParams& params) {
  double prev = 0.0;
  std::vector<CurvePoint> points;
  points.reserve(q_grid.size());
  for (const double q : q_grid) {
    if (!(q > 0.0)) throw DomainError("curve sweep: Q grid must be positive");
    if (!points.empty() && q <= prev) throw DomainError("curve sweep: Q grid must ascend");
    points.push_back({q, train_mse_theory(q, params.sigma2), test_mse_theory(q, params)});
    prev = q;
  }
  return points;
}

}  // namespace vitcap

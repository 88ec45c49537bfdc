#pragma once

#include <span>
#include <vector>

#include "vitcap/errors.hpp"

// Determination-ratio arithmetic and the analytic train/test error laws.
// Fitting M outputs over K samples with P parameters is a system of M*K
// constraints in P unknowns; Q = MK/P measures how overdetermined it is.

namespace vitcap {

struct DeterminationInputs {
  long long outputs = 0;  // M
  long long samples = 0;  // K
  long long params = 0;   // P
};

// Exact reduced fraction; kept exact so sweep records can be re-checked
// without float round-off.
struct Rational {
  long long num = 0;
  long long den = 1;

  static Rational reduced(long long num, long long den);
  double value() const { return double(num) / double(den); }
  bool operator==(const Rational&) const = default;
};

// Q = M*K/P as an exact rational (value() gives the float view).
Rational determination_ratio(const DeterminationInputs& in);

// Fraction of the training noise the fit absorbs: 1/Q for Q >= 1.
// Q < 1 is the underdetermined regime where the fraction saturates at one;
// reported as a domain error to force explicit handling.
double noise_fit_fraction(double q);

// Training MSE law: sigma^2 * (1 - 1/Q) for Q >= 1, exactly 0 for Q <= 1
// (interpolation regime: the fit to the training outputs is perfect).
double train_mse_theory(double q, double sigma2);

struct TheoryParams {
  double sigma2 = 1.0;  // noise variance, the common asymptote
  double c = 1.0;       // lumped curve constant, user-supplied
};

// Test MSE law: sigma^2 * (c/Q + 1).
double test_mse_theory(double q, const TheoryParams& params);

struct CurvePoint {
  double q = 0.0;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

// Paired evaluations of the two laws over an ascending positive Q grid;
// both curves converge to sigma^2 as Q grows.
std::vector<CurvePoint> curve_sweep(std::span<const double> q_grid, const TheoryParams& params);

}  // namespace vitcap

#pragma once

// Test-only oracles, independent of the tape: central finite differences
// against recorded adjoints, and a relative-error helper with an absolute
// floor so near-zero gradients do not blow up the ratio.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vitcap/rng.hpp"
#include "vitcap/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b, double floor = 1e-6) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

// Central finite difference of `loss()` w.r.t. one coordinate of `param`.
template <typename T>
double fd_coordinate(vitcap::Parameter<T>& param, size_t idx,
                     const std::function<double()>& loss, double step = 1e-5) {
  auto vals = param.value_mut();
  const T saved = vals[idx];
  vals[idx] = saved + T(step);
  const double up = loss();
  vals[idx] = saved - T(step);
  const double down = loss();
  vals[idx] = saved;
  return (up - down) / (2.0 * step);
}

// Checks recorded gradients of every listed parameter against central
// differences on `max_coords` coordinates (all if the parameter is small).
// `record_loss` must record onto a fresh tape, run backward, and leave the
// gradients in place before this is called; `loss` re-evaluates the loss
// without recording. Returns the max relative error seen.
template <typename T>
double fd_check_params(std::span<vitcap::Parameter<T>*> params,
                       const std::function<double()>& loss, size_t max_coords_per_param,
                       uint64_t seed, double step = 1e-5) {
  vitcap::DetRng rng(seed);
  double worst = 0.0;
  for (auto* p : params) {
    const size_t n = p->size();
    const size_t ncheck = n <= max_coords_per_param ? n : max_coords_per_param;
    for (size_t c = 0; c < ncheck; ++c) {
      const size_t idx = n <= max_coords_per_param ? c : size_t(rng.below(n));
      const double fd = fd_coordinate(*p, idx, loss, step);
      const double ad = double(p->grad()[idx]);
      worst = std::max(worst, rel_err(fd, ad));
    }
  }
  return worst;
}

}  // namespace oracle

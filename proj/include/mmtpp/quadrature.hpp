#pragma once

#include <cstddef>
#include <functional>

namespace mmtpp {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // estimated absolute error
  std::size_t intervals = 0;
};

// Globally adaptive 7/15-point Gauss-Kronrod integration of f over [a, b].
// The interval with the largest error estimate is bisected until the summed
// estimate drops below abs_tol. Throws QuadratureFailure when max_intervals is
// exhausted first or the integrand turns non-finite.
QuadratureResult integrate_adaptive(const std::function<double(double)>& f, double a,
                                    double b, double abs_tol = 1e-10,
                                    std::size_t max_intervals = 4096);

}  // namespace mmtpp

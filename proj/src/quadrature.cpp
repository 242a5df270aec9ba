#include "mmtpp/quadrature.hpp"

#include <array>
#include <cmath>
#include <queue>
#include <vector>

#include <fmt/format.h>

#include "mmtpp/error.hpp"

namespace mmtpp {
namespace {

// Kronrod abscissae on [0, 1]; odd indices are shared with the 7-point Gauss rule.
constexpr std::array<double, 8> kNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kKronrod = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kGauss = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

Segment gk15(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kronrod = fc * kKronrod[7];
  double gauss = fc * kGauss[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kNodes[j];
    const double sum = f(c - dx) + f(c + dx);
    kronrod += kKronrod[j] * sum;
    if (j % 2 == 1) gauss += kGauss[j / 2] * sum;
  }
  kronrod *= h;
  gauss *= h;
  if (!std::isfinite(kronrod)) {
    throw Error(ErrorCode::QuadratureFailure,
                fmt::format("integrand is not finite on [{}, {}]", a, b));
  }
  return {a, b, kronrod, std::abs(kronrod - gauss)};
}

}  // namespace

QuadratureResult integrate_adaptive(const std::function<double(double)>& f, double a,
                                    double b, double abs_tol, std::size_t max_intervals) {
  if (!(a <= b) || !std::isfinite(a) || !std::isfinite(b)) {
    throw Error(ErrorCode::QuadratureFailure,
                fmt::format("invalid integration range [{}, {}]", a, b));
  }
  if (a == b) return {0.0, 0.0, 0};
  std::priority_queue<Segment> heap;
  heap.push(gk15(f, a, b));
  double total = heap.top().value;
  double error = heap.top().error;
  while (error > abs_tol) {
    if (heap.size() >= max_intervals) {
      throw Error(ErrorCode::QuadratureFailure,
                  fmt::format("no convergence after {} subintervals (error {:.3g})",
                              heap.size(), error));
    }
    const Segment worst = heap.top();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) break;  // interval at machine resolution
    heap.pop();
    const Segment left = gk15(f, worst.a, mid);
    const Segment right = gk15(f, mid, worst.b);
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
  }
  // Re-sum to shed the drift of the incremental updates.
  QuadratureResult out;
  out.intervals = heap.size();
  while (!heap.empty()) {
    out.value += heap.top().value;
    out.error += heap.top().error;
    heap.pop();
  }
  return out;
}

}  // namespace mmtpp

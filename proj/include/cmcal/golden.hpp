#ifndef CMCAL_GOLDEN_HPP
#define CMCAL_GOLDEN_HPP

#include <cmath>
#include <stdexcept>

namespace cmcal {

struct GoldenResult {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
};

/**
 * Golden-section search for the minimum of a unimodal function on [lo, hi].
 * Stops when the bracket is narrower than tol. The returned point is the best
 * evaluated one, so bracket endpoints are reachable when the minimum sits on a
 * boundary.
 */
template <typename F>
GoldenResult golden_section_minimize(F&& f, double lo, double hi, double tol, int max_iter = 500) {
  if (!(lo < hi)) throw std::invalid_argument("golden section needs lo < hi");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;

  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);

  int it = 0;
  for (; it < max_iter && (b - a) > tol; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }

  GoldenResult best{fc <= fd ? c : d, fc <= fd ? fc : fd, it};
  for (double edge : {lo, hi}) {
    const double fe = f(edge);
    if (fe < best.fx) best = {edge, fe, it};
  }
  return best;
}

}  // namespace cmcal

#endif  // CMCAL_GOLDEN_HPP

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mixturelab/errors.hpp"

namespace mixturelab {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // estimated absolute error, |K15 - G7| summed over intervals
  int intervals = 0;
};

namespace detail {

// Gauss-Kronrod 7/15 nodes on [-1, 1] (non-negative half).
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the nodes at odd positions 1, 3, 5, 7.
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
};

template <typename F>
Segment kronrod_segment(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kKronrodNodes[j];
    const double pair = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[j] * pair;
    if (j % 2 == 1) gauss += kGaussWeights[j / 2] * pair;
  }
  return {a, b, kronrod * half, std::abs((kronrod - gauss) * half)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod 7/15 quadrature on [a, b] to an absolute
/// error target. Throws NumericError with the achieved error when the
/// interval budget runs out.
template <typename F>
QuadratureResult integrate(const F& f, double a, double b, double abs_tolerance,
                           int max_intervals = 4000) {
  std::vector<detail::Segment> heap{detail::kronrod_segment(f, a, b)};
  auto by_error = [](const detail::Segment& x, const detail::Segment& y) {
    return x.error < y.error;
  };
  double total_error = heap.front().error;
  while (total_error > abs_tolerance) {
    if (static_cast<int>(heap.size()) >= max_intervals)
      throw NumericError("quadrature did not converge: achieved error " +
                         std::to_string(total_error) + " > tolerance " +
                         std::to_string(abs_tolerance));
    std::pop_heap(heap.begin(), heap.end(), by_error);
    const detail::Segment worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    heap.push_back(detail::kronrod_segment(f, worst.a, mid));
    std::push_heap(heap.begin(), heap.end(), by_error);
    heap.push_back(detail::kronrod_segment(f, mid, worst.b));
    std::push_heap(heap.begin(), heap.end(), by_error);
    total_error = 0.0;
    for (const auto& s : heap) total_error += s.error;
  }
  // Sum in interval order so the result does not depend on heap layout.
  std::sort(heap.begin(), heap.end(),
            [](const detail::Segment& x, const detail::Segment& y) { return x.a < y.a; });
  QuadratureResult out;
  for (const auto& s : heap) out.value += s.value;
  out.error = total_error;
  out.intervals = static_cast<int>(heap.size());
  return out;
}

}  // namespace mixturelab

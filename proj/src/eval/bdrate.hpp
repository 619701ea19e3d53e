#pragma once

#include <array>
#include <vector>

#include "eval/metrics.hpp"

namespace licprune {

// Average rate difference (percent) of `test` against `reference` over their
// common PSNR range: cubic least-squares fits of log10(bpp) as a function of
// PSNR, integrated exactly via the antiderivative.
// Positive = test needs more bits.
double bd_rate_percent(const RdCurve& reference, const RdCurve& test);

// Cubic LS fit c0..c3 of y(x); exposed for the curve plumbing and tests.
std::array<double, 4> cubic_fit(const std::vector<double>& x, const std::vector<double>& y);
double cubic_integral(const std::array<double, 4>& c, double lo, double hi);

}  // namespace licprune

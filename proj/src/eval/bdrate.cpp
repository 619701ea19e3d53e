#include "eval/bdrate.hpp"

#include <array>
#include <cmath>

#include "util/errors.hpp"

namespace licprune {
namespace {

// 4x4 solve, partial pivoting, long double to keep the normal equations honest.
std::array<long double, 4> solve4(std::array<std::array<long double, 4>, 4> a,
                                  std::array<long double, 4> b) {
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs((double)a[r][col]) > std::fabs((double)a[piv][col])) piv = r;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    if (a[col][col] == 0.0L) throw NumericalError("singular system in curve fit");
    for (int r = col + 1; r < 4; ++r) {
      long double f = a[r][col] / a[col][col];
      for (int c2 = col; c2 < 4; ++c2) a[r][c2] -= f * a[col][c2];
      b[r] -= f * b[col];
    }
  }
  std::array<long double, 4> x{};
  for (int r = 3; r >= 0; --r) {
    long double s = b[r];
    for (int c2 = r + 1; c2 < 4; ++c2) s -= a[r][c2] * x[c2];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace

std::array<double, 4> cubic_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 4)
    throw std::invalid_argument("cubic fit needs >= 4 (x,y) pairs");
  // normal equations sum x^(i+j), sum x^i y
  std::array<long double, 7> pw{};
  std::array<long double, 4> rhs{};
  for (size_t i = 0; i < x.size(); ++i) {
    long double xi = x[i];
    long double p = 1.0L;
    for (int k = 0; k <= 6; ++k) {
      pw[static_cast<size_t>(k)] += p;
      if (k < 4) rhs[static_cast<size_t>(k)] += p * static_cast<long double>(y[i]);
      p *= xi;
    }
  }
  std::array<std::array<long double, 4>, 4> m{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m[r][c] = pw[static_cast<size_t>(r + c)];
  auto sol = solve4(m, rhs);
  return {static_cast<double>(sol[0]), static_cast<double>(sol[1]),
          static_cast<double>(sol[2]), static_cast<double>(sol[3])};
}

double cubic_integral(const std::array<double, 4>& c, double lo, double hi) {
  double s = 0;
  double plo = lo, phi = hi;
  for (int k = 0; k < 4; ++k) {
    s += c[static_cast<size_t>(k)] * (phi - plo) / static_cast<double>(k + 1);
    plo *= lo;
    phi *= hi;
  }
  return s;
}

double bd_rate_percent(const RdCurve& reference, const RdCurve& test) {
  reference.validate();
  test.validate();
  auto span = [](const RdCurve& c) {
    double lo = c.points.front().psnr, hi = lo;
    for (auto& p : c.points) {
      lo = std::min(lo, p.psnr);
      hi = std::max(hi, p.psnr);
    }
    return std::pair<double, double>(lo, hi);
  };
  auto [rlo, rhi] = span(reference);
  auto [tlo, thi] = span(test);
  double lo = std::max(rlo, tlo), hi = std::min(rhi, thi);
  if (!(hi > lo))
    throw std::invalid_argument("rd curves share no psnr range (" +
                                std::to_string(lo) + " vs " + std::to_string(hi) + ")");
  // center the abscissa for conditioning; the difference of integrals is
  // invariant to the shared shift
  const double shift = 0.5 * (lo + hi);
  auto extract = [&](const RdCurve& c) {
    std::vector<double> xs, ys;
    for (auto& p : c.points) {
      if (!(p.bpp > 0)) throw std::invalid_argument("bpp must be positive for bd-rate");
      xs.push_back(p.psnr - shift);
      ys.push_back(std::log10(p.bpp));
    }
    return std::pair(xs, ys);
  };
  auto [rx, ry] = extract(reference);
  auto [tx, ty] = extract(test);
  auto cr = cubic_fit(rx, ry);
  auto ct = cubic_fit(tx, ty);
  double avg = (cubic_integral(ct, lo - shift, hi - shift) -
                cubic_integral(cr, lo - shift, hi - shift)) /
               (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

}  // namespace licprune

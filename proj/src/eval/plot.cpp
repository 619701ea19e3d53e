#include "eval/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "util/errors.hpp"

namespace licprune {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Range {
  double lo = 0, hi = 1;
  double map(double v, double a, double b) const {  // data -> pixels
    if (hi == lo) return 0.5 * (a + b);
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

std::vector<double> ticks(double lo, double hi, int want = 5) {
  std::vector<double> out;
  if (hi <= lo) return {lo};
  double raw = (hi - lo) / want;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  double t = std::ceil(lo / step) * step;
  for (; t <= hi + 1e-12; t += step) out.push_back(t);
  return out;
}

std::string fnum(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

void emit_plot(const std::vector<RdCurve>& curves, const std::filesystem::path& svg_path) {
  if (curves.empty()) throw std::invalid_argument("nothing to plot");
  for (auto& c : curves)
    if (c.points.empty())
      throw std::invalid_argument("curve '" + c.label + "' has no points");

  const double W = 760, H = 520;
  const double ml = 72, mr = 24, mt = 28, mb = 56;  // margins
  Range rx, ry;
  rx.lo = 1e300;
  rx.hi = -1e300;
  ry.lo = 1e300;
  ry.hi = -1e300;
  for (auto& c : curves)
    for (auto& p : c.points) {
      rx.lo = std::min(rx.lo, p.bpp);
      rx.hi = std::max(rx.hi, p.bpp);
      ry.lo = std::min(ry.lo, p.psnr);
      ry.hi = std::max(ry.hi, p.psnr);
    }
  auto padr = [](Range& r) {
    double pad = (r.hi - r.lo) * 0.06;
    if (pad <= 0) pad = std::max(1e-6, std::fabs(r.hi) * 0.05 + 1e-6);
    r.lo -= pad;
    r.hi += pad;
  };
  padr(rx);
  padr(ry);

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << (W - ml - mr)
    << "\" height=\"" << (H - mt - mb)
    << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";

  auto px = [&](double v) { return rx.map(v, ml, W - mr); };
  auto py = [&](double v) { return ry.map(v, H - mb, mt); };

  for (double t : ticks(rx.lo, rx.hi)) {
    double x = px(t);
    s << "<line x1=\"" << x << "\" y1=\"" << (H - mb) << "\" x2=\"" << x << "\" y2=\""
      << (H - mb + 5) << "\" stroke=\"#333\"/>\n";
    s << "<line x1=\"" << x << "\" y1=\"" << mt << "\" x2=\"" << x << "\" y2=\""
      << (H - mb) << "\" stroke=\"#eee\"/>\n";
    s << "<text x=\"" << x << "\" y=\"" << (H - mb + 20)
      << "\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333\">" << fnum(t)
      << "</text>\n";
  }
  for (double t : ticks(ry.lo, ry.hi)) {
    double y = py(t);
    s << "<line x1=\"" << (ml - 5) << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\""
      << y << "\" stroke=\"#333\"/>\n";
    s << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << (W - mr) << "\" y2=\""
      << y << "\" stroke=\"#eee\"/>\n";
    s << "<text x=\"" << (ml - 9) << "\" y=\"" << (y + 4)
      << "\" font-size=\"12\" text-anchor=\"end\" fill=\"#333\">" << fnum(t)
      << "</text>\n";
  }
  s << "<text x=\"" << (ml + (W - ml - mr) / 2) << "\" y=\"" << (H - 14)
    << "\" font-size=\"14\" text-anchor=\"middle\" fill=\"#111\">bpp</text>\n";
  s << "<text x=\"18\" y=\"" << (mt + (H - mt - mb) / 2)
    << "\" font-size=\"14\" text-anchor=\"middle\" fill=\"#111\" transform=\"rotate(-90 18 "
    << (mt + (H - mt - mb) / 2) << ")\">PSNR (dB)</text>\n";

  for (size_t ci = 0; ci < curves.size(); ++ci) {
    const char* col = kPalette[ci % (sizeof(kPalette) / sizeof(kPalette[0]))];
    auto pts = curves[ci].points;
    std::sort(pts.begin(), pts.end(),
              [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (auto& p : pts) s << px(p.bpp) << ',' << py(p.psnr) << ' ';
    s << "\"/>\n";
    for (auto& p : pts)
      s << "<circle cx=\"" << px(p.bpp) << "\" cy=\"" << py(p.psnr)
        << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    double ly = mt + 18 + 18 * static_cast<double>(ci);
    s << "<line x1=\"" << (ml + 10) << "\" y1=\"" << ly << "\" x2=\"" << (ml + 34)
      << "\" y2=\"" << ly << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << (ml + 40) << "\" y=\"" << (ly + 4)
      << "\" font-size=\"12\" fill=\"#111\">" << curves[ci].label << "</text>\n";
  }
  s << "</svg>\n";

  if (!svg_path.parent_path().empty())
    std::filesystem::create_directories(svg_path.parent_path());
  std::ofstream out(svg_path);
  if (!out) throw IoError("cannot write plot: " + svg_path.string());
  out << s.str();

  auto csv_path = svg_path;
  csv_path.replace_extension(".csv");
  write_curves_csv(csv_path, curves);
}

}  // namespace licprune

#include "eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "util/csv.hpp"
#include "util/errors.hpp"

namespace licprune {

double mse_to_psnr(double mse) {
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double psnr_db(const torch::Tensor& x, const torch::Tensor& x_hat) {
  if (x.sizes() != x_hat.sizes())
    throw std::invalid_argument("psnr inputs must have identical shapes");
  torch::NoGradGuard ng;
  double mse = torch::mse_loss(x_hat.to(torch::kFloat64), x.to(torch::kFloat64))
                   .item<double>();
  return mse_to_psnr(mse);
}

double bits_per_pixel(double total_bits, int64_t pixel_count) {
  if (pixel_count <= 0) throw std::invalid_argument("pixel count must be positive");
  return total_bits / static_cast<double>(pixel_count);
}

void RdCurve::validate() const {
  if (points.size() < 4)
    throw std::invalid_argument("rd curve '" + label + "' needs at least 4 points, has " +
                                std::to_string(points.size()));
  for (size_t i = 1; i < points.size(); ++i)
    if (!(points[i].bpp > points[i - 1].bpp))
      throw std::invalid_argument("rd curve '" + label +
                                  "' must be strictly increasing in bpp");
}

std::pair<torch::Tensor, PadInfo> pad_to_multiple(const torch::Tensor& img, int64_t mult) {
  if (img.dim() != 3) throw std::invalid_argument("expected (C,H,W) image");
  PadInfo info;
  info.orig_h = img.size(1);
  info.orig_w = img.size(2);
  auto rem = [&](int64_t v) { return (mult - v % mult) % mult; };
  int64_t ph = rem(info.orig_h), pw = rem(info.orig_w);
  info.top = ph / 2;
  info.left = pw / 2;
  if (ph == 0 && pw == 0) return {img, info};
  namespace F = torch::nn::functional;
  auto padded = F::pad(img.unsqueeze(0),
                       F::PadFuncOptions({info.left, pw - info.left, info.top, ph - info.top})
                           .mode(torch::kReplicate))
                    .squeeze(0);
  return {padded, info};
}

torch::Tensor unpad(const torch::Tensor& t, const PadInfo& info) {
  return t.narrow(-2, info.top, info.orig_h).narrow(-1, info.left, info.orig_w);
}

ImageEval evaluate_image(CodecModel model, const torch::Tensor& img) {
  if (img.dim() != 3 || img.size(0) != model->config().input_channels)
    throw std::invalid_argument("evaluate_image expects a (C,H,W) image");
  torch::NoGradGuard ng;
  auto [padded, info] = pad_to_multiple(img, model->config().divisibility());
  auto out = model->forward(padded.unsqueeze(0), QuantMode::Round);
  const double ln2 = std::log(2.0);
  double bits = (-out.p_y.log().sum() / ln2 - out.p_z.log().sum() / ln2).item<double>();
  ImageEval ev;
  ev.bpp = bits_per_pixel(bits, info.orig_h * info.orig_w);
  auto rec = unpad(out.x_hat.squeeze(0), info);
  double mse = torch::mse_loss(rec.to(torch::kFloat64), img.to(torch::kFloat64))
                   .item<double>();
  ev.mse = mse;
  ev.psnr = mse_to_psnr(mse);
  return ev;
}

RdCurve build_rd_curve(std::map<double, CodecModel>& models,
                       const std::vector<torch::Tensor>& images,
                       const std::string& label) {
  if (images.empty()) throw std::invalid_argument("rd curve needs eval images");
  RdCurve c;
  c.label = label;
  for (auto& [lambda, model] : models) {
    double bpp = 0, psnr = 0;
    for (auto& img : images) {
      auto ev = evaluate_image(model, img);
      bpp += ev.bpp;
      psnr += ev.psnr;
    }
    RdPoint p;
    p.lambda = lambda;
    p.bpp = bpp / static_cast<double>(images.size());
    p.psnr = psnr / static_cast<double>(images.size());
    c.points.push_back(p);
  }
  std::sort(c.points.begin(), c.points.end(),
            [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  return c;
}

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<RdCurve>& curves) {
  CsvWriter w(path);
  w.row({"label", "lambda", "bpp", "psnr_db"});
  for (auto& c : curves)
    for (auto& p : c.points)
      w.row({c.label, fmt_double(p.lambda, 9), fmt_double(p.bpp, 9),
             fmt_double(p.psnr, 9)});
}

std::vector<RdCurve> read_curves_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"label", "lambda", "bpp", "psnr_db"})
    throw IoError("not an rd-curve csv: " + path.string());
  std::vector<RdCurve> curves;
  for (size_t i = 1; i < rows.size(); ++i) {
    auto& r = rows[i];
    if (r.size() != 4) throw IoError("malformed rd-curve row in " + path.string());
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const RdCurve& c) { return c.label == r[0]; });
    if (it == curves.end()) {
      curves.push_back(RdCurve{r[0], {}});
      it = curves.end() - 1;
    }
    it->points.push_back({std::stod(r[1]), std::stod(r[2]), std::stod(r[3])});
  }
  return curves;
}

}  // namespace licprune

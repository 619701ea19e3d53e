#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lic/codec.hpp"

namespace licprune {

// 10*log10(1/mse) for [0,1] signals, capped at 100 dB for identical inputs.
double psnr_db(const torch::Tensor& x, const torch::Tensor& x_hat);
double mse_to_psnr(double mse);

double bits_per_pixel(double total_bits, int64_t pixel_count);

struct RdPoint {
  double lambda = 0;
  double bpp = 0;
  double psnr = 0;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;

  // sorted and strictly increasing in bpp, at least four points
  void validate() const;
};

struct ImageEval {
  double bpp = 0;
  double psnr = 0;
  double mse = 0;
};

// Pads (center, replicate) to the codec's divisibility, runs eval-mode
// forward, measures PSNR on the unpadded region; bpp over original pixels.
ImageEval evaluate_image(CodecModel model, const torch::Tensor& img);

// Mean bpp/psnr over an eval set for each model in the lambda sweep.
RdCurve build_rd_curve(std::map<double, CodecModel>& models,
                       const std::vector<torch::Tensor>& images,
                       const std::string& label);

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<RdCurve>& curves);
std::vector<RdCurve> read_curves_csv(const std::filesystem::path& path);

// Center replicate padding helpers for arbitrary image sizes.
struct PadInfo {
  int64_t top = 0, left = 0, orig_h = 0, orig_w = 0;
};
std::pair<torch::Tensor, PadInfo> pad_to_multiple(const torch::Tensor& img, int64_t mult);
torch::Tensor unpad(const torch::Tensor& t, const PadInfo& info);

}  // namespace licprune

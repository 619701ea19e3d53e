#include "pipeline/dataset.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>

#include "util/errors.hpp"
#include "util/rng.hpp"

namespace fs = std::filesystem;

namespace licprune {

namespace {

bool has_image_ext(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp";
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("image directory not found: " + dir.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_ext(entry.path())) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

torch::Tensor load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("could not decode image: " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).clone();
}

void save_image(const fs::path& path, const torch::Tensor& img) {
  TORCH_CHECK(img.dim() == 3 && img.size(0) == 3, "expected (3,H,W) image");
  auto hwc = img.detach()
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kByte)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
              hwc.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw IoError("could not write image: " + path.string());
  }
}

CropSampler::CropSampler(const fs::path& dir, int64_t crop, uint64_t seed)
    : crop_(crop), rng_(seed) {
  for (const auto& p : list_images(dir)) {
    torch::Tensor img;
    try {
      img = load_image(p);
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << p << ": " << e.what() << "\n";
      continue;
    }
    if (img.size(1) < crop_ || img.size(2) < crop_) {
      std::cerr << "warning: skipping " << p << ": smaller than crop " << crop_ << "\n";
      continue;
    }
    images_.push_back(img);
  }
  if (images_.empty()) {
    throw IoError("no usable training images in " + dir.string());
  }
}

CropSampler::CropSampler(std::vector<torch::Tensor> images, int64_t crop, uint64_t seed)
    : images_(std::move(images)), crop_(crop), rng_(seed) {
  for (const auto& img : images_) {
    TORCH_CHECK(img.dim() == 3 && img.size(1) >= crop_ && img.size(2) >= crop_,
                "image smaller than crop");
  }
  if (images_.empty()) {
    throw IoError("no usable training images supplied");
  }
}

torch::Tensor CropSampler::next_batch(int64_t batch_size) {
  std::vector<torch::Tensor> crops;
  crops.reserve(batch_size);
  for (int64_t b = 0; b < batch_size; ++b) {
    const auto& img = images_[rng_() % images_.size()];
    int64_t max_y = img.size(1) - crop_;
    int64_t max_x = img.size(2) - crop_;
    int64_t y = max_y > 0 ? static_cast<int64_t>(rng_() % (max_y + 1)) : 0;
    int64_t x = max_x > 0 ? static_cast<int64_t>(rng_() % (max_x + 1)) : 0;
    crops.push_back(img.narrow(1, y, crop_).narrow(2, x, crop_));
  }
  return torch::stack(crops, 0);
}

void CropSampler::reseed(uint64_t seed) { rng_.seed(seed); }

std::vector<torch::Tensor> center_crops(const fs::path& dir, int64_t count, int64_t crop) {
  std::vector<torch::Tensor> out;
  for (const auto& p : list_images(dir)) {
    if (static_cast<int64_t>(out.size()) >= count) break;
    torch::Tensor img;
    try {
      img = load_image(p);
    } catch (const IoError&) {
      continue;
    }
    if (img.size(1) < crop || img.size(2) < crop) continue;
    int64_t y = (img.size(1) - crop) / 2;
    int64_t x = (img.size(2) - crop) / 2;
    out.push_back(img.narrow(1, y, crop).narrow(2, x, crop).contiguous());
  }
  if (out.empty()) {
    throw IoError("no usable calibration images in " + dir.string());
  }
  return out;
}

std::vector<torch::Tensor> load_eval_images(const fs::path& dir, int64_t limit) {
  std::vector<torch::Tensor> out;
  for (const auto& p : list_images(dir)) {
    if (limit > 0 && static_cast<int64_t>(out.size()) >= limit) break;
    try {
      out.push_back(load_image(p));
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << p << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) {
    throw IoError("no usable evaluation images in " + dir.string());
  }
  return out;
}

namespace {

// One synthetic frame: layered gradients, a few soft ellipses/rectangles and a
// band-limited noise field. Enough low-frequency structure for rate-distortion
// training without shipping a photo corpus.
torch::Tensor synth_frame(std::mt19937_64& rng, int64_t h, int64_t w) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto yy = torch::linspace(0, 1, h, torch::kFloat32).view({h, 1}).expand({h, w});
  auto xx = torch::linspace(0, 1, w, torch::kFloat32).view({1, w}).expand({h, w});

  auto img = torch::zeros({3, h, w}, torch::kFloat32);
  for (int64_t c = 0; c < 3; ++c) {
    double a = uni(rng), b = uni(rng), base = 0.2 + 0.6 * uni(rng);
    double fy = 0.5 + 2.5 * uni(rng), fx = 0.5 + 2.5 * uni(rng);
    double ph = 6.2831853 * uni(rng);
    auto plane = base + 0.25 * (a - 0.5) * yy + 0.25 * (b - 0.5) * xx +
                 0.15 * torch::sin(fy * 6.2831853 * yy + fx * 6.2831853 * xx + ph);
    img[c] = plane;
  }

  int shapes = 2 + static_cast<int>(rng() % 4);
  for (int s = 0; s < shapes; ++s) {
    double cy = uni(rng), cx = uni(rng);
    double ry = 0.05 + 0.2 * uni(rng), rx = 0.05 + 0.2 * uni(rng);
    auto d2 = ((yy - cy) / ry).pow(2) + ((xx - cx) / rx).pow(2);
    auto mask = torch::sigmoid((1.0 - d2) * 12.0);
    for (int64_t c = 0; c < 3; ++c) {
      double color = uni(rng);
      img[c] = img[c] * (1.0 - 0.8 * mask) + color * 0.8 * mask;
    }
  }

  // Band-limited texture: blur white noise with a separable box a few times.
  auto noise = torch::rand({1, 1, h, w}) * 2.0 - 1.0;
  auto kernel = torch::ones({1, 1, 1, 5}, torch::kFloat32) / 5.0;
  for (int i = 0; i < 2; ++i) {
    noise = torch::conv2d(noise, kernel, {}, 1, torch::IntArrayRef{0, 2});
    noise = torch::conv2d(noise, kernel.transpose(2, 3), {}, 1, torch::IntArrayRef{2, 0});
  }
  img += 0.05 * noise.squeeze(0).expand({3, h, w});
  return img.clamp(0.0, 1.0);
}

}  // namespace

void generate_synthetic_corpus(const fs::path& dir, int64_t count, int64_t height,
                               int64_t width, uint64_t seed) {
  fs::create_directories(dir);
  for (int64_t i = 0; i < count; ++i) {
    // Independent stream per image so count changes do not reshuffle content.
    std::mt19937_64 rng(derive_seed(seed, "corpus", i));
    torch::manual_seed(derive_seed(seed, "corpus-noise", i));
    auto img = synth_frame(rng, height, width);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04lld.png", static_cast<long long>(i));
    save_image(dir / name, img);
  }
}

}  // namespace licprune

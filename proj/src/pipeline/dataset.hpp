#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <vector>

namespace licprune {

// Sorted list of decodable image files (.png/.jpg/.jpeg/.bmp) in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// (3,H,W) float32 in [0,1], RGB. Throws IoError if undecodable.
torch::Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const torch::Tensor& img);

// Deterministic random-crop batches over an in-memory image set. Images
// smaller than the crop are skipped with a warning; an empty usable set throws.
class CropSampler {
 public:
  CropSampler(const std::filesystem::path& dir, int64_t crop, uint64_t seed);
  CropSampler(std::vector<torch::Tensor> images, int64_t crop, uint64_t seed);

  torch::Tensor next_batch(int64_t batch_size);  // (B,3,crop,crop)
  int64_t image_count() const { return static_cast<int64_t>(images_.size()); }
  int64_t crop() const { return crop_; }
  void reseed(uint64_t seed);

 private:
  std::vector<torch::Tensor> images_;
  int64_t crop_;
  std::mt19937_64 rng_;
};

// Fixed center crops, one per image, first `count` images of the directory.
std::vector<torch::Tensor> center_crops(const std::filesystem::path& dir, int64_t count,
                                        int64_t crop);

// Full images loaded for evaluation.
std::vector<torch::Tensor> load_eval_images(const std::filesystem::path& dir,
                                            int64_t limit = 0);

// Small self-contained corpus of smooth gradients, shapes and textures so the
// codec has structure to learn. Deterministic in (seed, count, size).
void generate_synthetic_corpus(const std::filesystem::path& dir, int64_t count,
                               int64_t height, int64_t width, uint64_t seed);

}  // namespace licprune

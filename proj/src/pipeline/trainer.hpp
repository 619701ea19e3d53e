#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <vector>

#include "lic/codec.hpp"
#include "pipeline/dataset.hpp"

namespace licprune {

enum class NanPolicy { Throw, RestoreLastGood };

struct TrainOpts {
  int64_t steps = 1000;
  int64_t batch = 8;
  double lr = 1e-4;
  bool cosine = true;
  double lambda = 0.01;
  uint64_t seed = 0;
  int64_t log_every = 50;
  std::filesystem::path metrics_csv;  // empty = no csv
  NanPolicy on_nan = NanPolicy::RestoreLastGood;
};

struct TrainResult {
  int64_t steps_run = 0;
  int64_t nan_events = 0;
  double final_loss = 0.0;
  double final_bpp = 0.0;
  double final_psnr = 0.0;
};

// Cosine decay from lr to 0 over the run, evaluated per step.
double cosine_lr(double base_lr, int64_t step, int64_t total_steps);

// Rate-distortion training with additive-noise latents. Diverging steps are
// either fatal or rolled back to the last finite snapshot, per opts.on_nan.
TrainResult train_rd_loop(CodecModel& model, CropSampler& sampler, const TrainOpts& opts,
                          const std::function<void(int64_t, const RdLoss&)>& on_step = {});

// Mean eval-mode loss over fixed batches; restores train/eval state afterwards.
RdLoss eval_rd(CodecModel& model, const std::vector<torch::Tensor>& batches, double lambda);

}  // namespace licprune

#include "pipeline/trainer.hpp"

#include <cmath>
#include <iostream>

#include "eval/metrics.hpp"
#include "util/csv.hpp"
#include "util/errors.hpp"
#include "util/rng.hpp"

namespace licprune {

double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

namespace {

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

std::vector<torch::Tensor> snapshot_params(CodecModel& model) {
  std::vector<torch::Tensor> out;
  for (const auto& p : model->parameters()) {
    out.push_back(p.detach().clone());
  }
  return out;
}

void restore_params(CodecModel& model, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard ng;
  auto params = model->parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    params[i].copy_(saved[i]);
  }
}

}  // namespace

TrainResult train_rd_loop(CodecModel& model, CropSampler& sampler, const TrainOpts& opts,
                          const std::function<void(int64_t, const RdLoss&)>& on_step) {
  torch::manual_seed(derive_seed(opts.seed, "train-noise"));
  model->train();
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(opts.lr));

  std::unique_ptr<CsvWriter> csv;
  if (!opts.metrics_csv.empty()) {
    csv = std::make_unique<CsvWriter>(opts.metrics_csv,
                                      std::vector<std::string>{"step", "lr", "loss", "bpp",
                                                               "mse", "psnr"});
  }

  TrainResult result;
  auto good = snapshot_params(model);
  for (int64_t step = 0; step < opts.steps; ++step) {
    double lr = opts.cosine ? cosine_lr(opts.lr, step, opts.steps) : opts.lr;
    set_lr(opt, lr);

    auto batch = sampler.next_batch(opts.batch);
    opt.zero_grad();

    // rd_loss throws on non-finite terms, so the whole computation sits in
    // the guarded region, not just an extra check on the result.
    bool finite = true;
    RdLoss loss;
    try {
      loss = model->rd_loss(batch, opts.lambda, QuantMode::Noise);
    } catch (const NumericalError& e) {
      finite = false;
      if (opts.on_nan == NanPolicy::Throw) throw;
      ++result.nan_events;
      std::cerr << "warning: step " << step << " diverged (" << e.what()
                << "), restoring last good weights\n";
      restore_params(model, good);
    }
    if (finite) {
      loss.total.backward();
      opt.step();
      ++result.steps_run;
      result.final_loss = loss.total.item<double>();
      result.final_bpp = loss.bpp.item<double>();
      result.final_psnr = mse_to_psnr(loss.distortion.item<double>());
      if (on_step) on_step(step, loss);
      bool log_now = opts.log_every > 0 &&
                     (step % opts.log_every == 0 || step + 1 == opts.steps);
      if (log_now) {
        good = snapshot_params(model);
        if (csv) {
          csv->row({std::to_string(step), fmt_double(lr), fmt_double(result.final_loss),
                    fmt_double(result.final_bpp),
                    fmt_double(loss.distortion.item<double>()),
                    fmt_double(result.final_psnr)});
        }
      }
    }
  }
  return result;
}

RdLoss eval_rd(CodecModel& model, const std::vector<torch::Tensor>& batches, double lambda) {
  TORCH_CHECK(!batches.empty(), "eval_rd needs at least one batch");
  bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard ng;

  torch::Tensor total = torch::zeros({}, torch::kFloat64);
  torch::Tensor bpp = torch::zeros({}, torch::kFloat64);
  torch::Tensor bits_y = torch::zeros({}, torch::kFloat64);
  torch::Tensor bits_z = torch::zeros({}, torch::kFloat64);
  torch::Tensor dist = torch::zeros({}, torch::kFloat64);
  for (const auto& b : batches) {
    auto loss = model->rd_loss(b, lambda, QuantMode::Round);
    loss.check_finite();
    total += loss.total.to(torch::kFloat64);
    bpp += loss.bpp.to(torch::kFloat64);
    bits_y += loss.rate_bits_y.to(torch::kFloat64);
    bits_z += loss.rate_bits_z.to(torch::kFloat64);
    dist += loss.distortion.to(torch::kFloat64);
  }
  double n = static_cast<double>(batches.size());
  if (was_training) model->train();

  RdLoss out;
  out.total = total / n;
  out.bpp = bpp / n;
  out.rate_bits_y = bits_y / n;
  out.rate_bits_z = bits_z / n;
  out.distortion = dist / n;
  out.lambda = lambda;
  return out;
}

}  // namespace licprune

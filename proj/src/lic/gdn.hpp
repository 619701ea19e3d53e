#pragma once

#include <torch/torch.h>

#include "quant/fake_quant.hpp"

namespace licprune {

// Generalized divisive normalization, y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2),
// and its inverse (multiply instead of divide) for the synthesis path.
//
// beta/gamma are stored in sqrt-space with a pedestal so that positivity
// survives unconstrained gradient steps:
//   raw = sqrt(value + pedestal), value = lower_bound(raw, bound)^2 - pedestal.
class GdnImpl : public torch::nn::Module {
 public:
  GdnImpl(int64_t channels, bool inverse, torch::ScalarType dtype = torch::kFloat32);

  torch::Tensor forward(const torch::Tensor& x);

  // Effective (positively constrained) parameters, quantization included.
  torch::Tensor beta();
  torch::Tensor gamma();

  // Shrink to a channel subset, preserving values. idx: kLong, ascending.
  void compact_(const torch::Tensor& kept_idx);

  int64_t channels() const { return channels_; }
  bool inverse() const { return inverse_; }

  // Optional fake-quant on the raw tensors (they are the stored weights of the
  // normalization); installed/removed by the model-level quantization helpers.
  void attach_quant(int64_t bits);
  void detach_quant();
  bool quant_attached() const { return !beta_quant.is_empty(); }
  bool quant_enabled = true;

  torch::Tensor beta_raw, gamma_raw;
  WeightFakeQuant beta_quant{nullptr}, gamma_quant{nullptr};

  static double pedestal();
  static double beta_bound();
  static double gamma_bound();

 private:
  torch::Tensor eff_beta_raw();
  torch::Tensor eff_gamma_raw();

  int64_t channels_;
  bool inverse_;
};

TORCH_MODULE(Gdn);

}  // namespace licprune

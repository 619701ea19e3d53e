#pragma once

#include <torch/torch.h>

namespace licprune {

inline constexpr double kScaleMin = 1e-8;

struct QuantParams {
  torch::Tensor scale;       // scalar () or per-filter (C)
  torch::Tensor zero_point;  // same shape as scale, integer-valued
  int64_t bits = 8;
  bool signed_range = false;  // weights use [0, 2^b-1]; activations [-2^(b-1), 2^(b-1)-1]

  double qmin() const { return signed_range ? -std::pow(2.0, bits - 1) : 0.0; }
  double qmax() const {
    return signed_range ? std::pow(2.0, bits - 1) - 1 : std::pow(2.0, bits) - 1;
  }
};

// ---- pure math (no autograd tricks), exact reference for the round-trip ----

// w_hat = s * (round(clip(w/s + z, 0, 2^b - 1)) - z); per-filter params broadcast
// along out_dim (0 for conv weights, 1 for transposed-conv weights).
torch::Tensor quantize_weights(const torch::Tensor& w, const QuantParams& p,
                               int64_t out_dim = 0);

// a_hat = s * (round(clip(a/s + z, -2^(b-1), 2^(b-1) - 1)) - z), per-tensor.
torch::Tensor quantize_acts(const torch::Tensor& a, const QuantParams& p);

// The integer codes q = round(clip(v)) themselves (for storage/size checks).
torch::Tensor integer_codes(const torch::Tensor& w, const QuantParams& p,
                            int64_t out_dim = 0);

// min/max initialization. Per-filter if out_dim >= 0, per-tensor if out_dim < 0.
// s = (max - min) / (2^b - 1) floored at kScaleMin; z = round(-min / s).
// All-zero slices get s = kScaleMin, z = 0.
QuantParams init_weight_params(const torch::Tensor& w, int64_t bits, int64_t out_dim = 0);

// Dynamic per-tensor activation params over the signed range.
QuantParams dynamic_act_params(const torch::Tensor& a, int64_t bits);

// ---- training ops (straight-through with clipped-range gradients) ----

// Differentiable in w, scale and zero_point.
torch::Tensor fake_quant_ste(const torch::Tensor& w, const torch::Tensor& scale,
                             const torch::Tensor& zero_point, int64_t bits,
                             bool signed_range, int64_t out_dim);

// Dynamic activation fake-quant; params recomputed from the batch, detached.
torch::Tensor fake_quant_acts_dynamic(const torch::Tensor& a, int64_t bits);

// Learnable per-filter (or per-tensor) weight quantizer module.
class WeightFakeQuantImpl : public torch::nn::Module {
 public:
  // n_filters == 0 selects per-tensor parameters.
  WeightFakeQuantImpl(int64_t n_filters, int64_t bits, int64_t out_dim,
                      torch::ScalarType dtype = torch::kFloat32);

  // Min/max init from the tensor to be quantized.
  void init_from(const torch::Tensor& w);

  torch::Tensor forward(const torch::Tensor& w);

  QuantParams params() const;

  torch::Tensor scale_, zero_;
  int64_t bits_;
  int64_t out_dim_;
  int64_t n_filters_;
};

TORCH_MODULE(WeightFakeQuant);

}  // namespace licprune

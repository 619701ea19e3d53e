#pragma once

#include <torch/torch.h>

#include <vector>

namespace licprune {

// Probability floor for both entropy models and the scale floor for the
// conditional Gaussian.
inline constexpr double kLikelihoodFloor = 1.0 / (1 << 24);
inline constexpr double kSigmaFloor = 0.11;

// Per-element likelihood of mean-centered integer bins under N(mu, sigma^2):
//   p = Phi((0.5 - |d|)/sigma) - Phi((-0.5 - |d|)/sigma), d = y_hat - mu,
// floored at kLikelihoodFloor. sigma must already be floored positive.
torch::Tensor gaussian_likelihood(const torch::Tensor& y_hat, const torch::Tensor& mu,
                                  const torch::Tensor& sigma);

// Learned univariate density per channel (stacked monotone MLP CDF). Models the
// hyper-latent, which has no conditioning.
class FactorizedPriorImpl : public torch::nn::Module {
 public:
  explicit FactorizedPriorImpl(int64_t channels,
                               std::vector<int64_t> filters = {3, 3, 3, 3},
                               double init_scale = 10.0,
                               torch::ScalarType dtype = torch::kFloat32);

  // Per-element likelihood of (noisy or rounded) values, shape (B,C,H,W),
  // floored at kLikelihoodFloor.
  torch::Tensor likelihood(const torch::Tensor& z_hat);

  // CDF at arbitrary points, same shape in as out. Exposed for tests.
  torch::Tensor cdf(const torch::Tensor& u);

  int64_t channels() const { return channels_; }

  std::vector<torch::Tensor> matrices_, biases_, factors_;

 private:
  // Raw logit chain; x shaped (C, 1, N).
  torch::Tensor logits(const torch::Tensor& x);

  int64_t channels_;
  std::vector<int64_t> filters_;
};

TORCH_MODULE(FactorizedPrior);

}  // namespace licprune

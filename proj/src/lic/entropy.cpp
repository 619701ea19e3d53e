#include "lic/entropy.hpp"

#include <cmath>

#include "lic/ops.hpp"
#include "util/errors.hpp"

namespace licprune {

torch::Tensor gaussian_likelihood(const torch::Tensor& y_hat, const torch::Tensor& mu,
                                  const torch::Tensor& sigma) {
  auto d = mu.defined() ? (y_hat - mu).abs() : y_hat.abs();
  auto upper = std_normal_cdf((0.5 - d) / sigma);
  auto lower = std_normal_cdf((-0.5 - d) / sigma);
  return lower_bound(upper - lower, kLikelihoodFloor);
}

FactorizedPriorImpl::FactorizedPriorImpl(int64_t channels, std::vector<int64_t> filters,
                                         double init_scale, torch::ScalarType dtype)
    : channels_(channels), filters_(std::move(filters)) {
  if (channels < 1) throw StructuralError("factorized prior needs channels >= 1");
  auto opt = torch::TensorOptions().dtype(dtype);
  std::vector<int64_t> dims;
  dims.push_back(1);
  for (auto f : filters_) dims.push_back(f);
  dims.push_back(1);

  const auto n_steps = static_cast<int64_t>(dims.size()) - 1;
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(n_steps));
  for (int64_t k = 0; k < n_steps; ++k) {
    double init = std::log(std::expm1(1.0 / scale / static_cast<double>(dims[k + 1])));
    auto m = torch::full({channels, dims[k + 1], dims[k]}, init, opt);
    matrices_.push_back(
        register_parameter("matrix_" + std::to_string(k), m));
    // zero-initialized biases keep the initial density symmetric around 0
    biases_.push_back(register_parameter(
        "bias_" + std::to_string(k), torch::zeros({channels, dims[k + 1], 1}, opt)));
    if (k < n_steps - 1) {
      factors_.push_back(register_parameter(
          "factor_" + std::to_string(k), torch::zeros({channels, dims[k + 1], 1}, opt)));
    }
  }
}

torch::Tensor FactorizedPriorImpl::logits(const torch::Tensor& x) {
  auto h = x;
  const auto n = static_cast<int64_t>(matrices_.size());
  for (int64_t k = 0; k < n; ++k) {
    h = torch::matmul(torch::softplus(matrices_[k]), h) + biases_[k];
    if (k < n - 1) h = h + torch::tanh(factors_[k]) * torch::tanh(h);
  }
  return h;
}

torch::Tensor FactorizedPriorImpl::cdf(const torch::Tensor& u) {
  if (u.dim() != 4 || u.size(1) != channels_)
    throw StructuralError("factorized prior expects (B,C,H,W) input");
  auto shaped = u.permute({1, 0, 2, 3}).reshape({channels_, 1, -1});
  auto out = torch::sigmoid(logits(shaped));
  return out.reshape({channels_, u.size(0), u.size(2), u.size(3)}).permute({1, 0, 2, 3});
}

torch::Tensor FactorizedPriorImpl::likelihood(const torch::Tensor& z_hat) {
  if (z_hat.dim() != 4 || z_hat.size(1) != channels_)
    throw StructuralError("factorized prior expects (B,C,H,W) input, got channels=" +
                          std::to_string(z_hat.dim() > 1 ? z_hat.size(1) : -1));
  auto shaped = z_hat.permute({1, 0, 2, 3}).reshape({channels_, 1, -1});
  auto lo = logits(shaped - 0.5);
  auto hi = logits(shaped + 0.5);
  // evaluate both sigmoids on their stable side; |sigmoid(s*hi) - sigmoid(s*lo)|
  // equals the bin mass for either sign (never 0, or symmetric bins would vanish)
  auto sign = torch::where(lo + hi >= 0, -torch::ones_like(lo), torch::ones_like(lo))
                  .detach();
  auto p = torch::abs(torch::sigmoid(sign * hi) - torch::sigmoid(sign * lo));
  if (!(p.min().item<double>() >= -1e-6))
    throw NumericalError("factorized prior produced a negative bin mass "
                         "(non-monotone cdf)");
  p = p.reshape({channels_, z_hat.size(0), z_hat.size(2), z_hat.size(3)})
          .permute({1, 0, 2, 3});
  return lower_bound(p, kLikelihoodFloor);
}

}  // namespace licprune

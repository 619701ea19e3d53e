#include "lic/gdn.hpp"

#include <cmath>

#include "lic/ops.hpp"
#include "util/errors.hpp"

namespace licprune {

namespace {
constexpr double kPedestal = 1.0 / (1 << 18);
constexpr double kBetaMin = 1e-6;
constexpr double kBetaInit = 1.0;
constexpr double kGammaInit = 0.1;
}  // namespace

double GdnImpl::pedestal() { return kPedestal; }
double GdnImpl::beta_bound() { return std::sqrt(kBetaMin + kPedestal); }
double GdnImpl::gamma_bound() { return std::sqrt(kPedestal); }

GdnImpl::GdnImpl(int64_t channels, bool inverse, torch::ScalarType dtype)
    : channels_(channels), inverse_(inverse) {
  if (channels < 1) throw StructuralError("gdn needs at least one channel");
  auto opt = torch::TensorOptions().dtype(dtype);
  auto beta0 = torch::full({channels}, std::sqrt(kBetaInit + kPedestal), opt);
  auto gamma0 = torch::sqrt(kGammaInit * torch::eye(channels, opt) + kPedestal);
  beta_raw = register_parameter("beta_raw", beta0);
  gamma_raw = register_parameter("gamma_raw", gamma0);
}

torch::Tensor GdnImpl::eff_beta_raw() {
  if (!beta_quant.is_empty() && quant_enabled) return beta_quant->forward(beta_raw);
  return beta_raw;
}

torch::Tensor GdnImpl::eff_gamma_raw() {
  if (!gamma_quant.is_empty() && quant_enabled) return gamma_quant->forward(gamma_raw);
  return gamma_raw;
}

torch::Tensor GdnImpl::beta() {
  auto b = lower_bound(eff_beta_raw(), beta_bound());
  return b * b - kPedestal;
}

torch::Tensor GdnImpl::gamma() {
  auto g = lower_bound(eff_gamma_raw(), gamma_bound());
  return g * g - kPedestal;
}

torch::Tensor GdnImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_)
    throw StructuralError("gdn expects (B," + std::to_string(channels_) +
                          ",H,W) input, got " + std::to_string(x.dim()) + "d with " +
                          std::to_string(x.dim() > 1 ? x.size(1) : -1) + " channels");
  auto w = gamma().view({channels_, channels_, 1, 1});
  auto norm = torch::conv2d(x * x, w, beta());
  if (inverse_) return x * torch::sqrt(norm);
  return x * torch::rsqrt(norm);
}

void GdnImpl::compact_(const torch::Tensor& kept_idx) {
  torch::NoGradGuard ng;
  if (kept_idx.dim() != 1 || kept_idx.numel() < 1 || kept_idx.numel() > channels_)
    throw StructuralError("bad kept index set for gdn compaction");
  auto nb = beta_raw.index_select(0, kept_idx).clone();
  auto ng_ = gamma_raw.index_select(0, kept_idx).index_select(1, kept_idx).clone();
  beta_raw.set_data(nb);
  gamma_raw.set_data(ng_);
  channels_ = kept_idx.numel();
}

void GdnImpl::attach_quant(int64_t bits) {
  if (quant_attached()) detach_quant();
  beta_quant = register_module(
      "beta_quant", WeightFakeQuant(0, bits, 0, beta_raw.scalar_type()));
  gamma_quant = register_module(
      "gamma_quant", WeightFakeQuant(0, bits, 0, gamma_raw.scalar_type()));
  beta_quant->init_from(beta_raw);
  gamma_quant->init_from(gamma_raw);
}

void GdnImpl::detach_quant() {
  if (!quant_attached()) return;
  unregister_module("beta_quant");
  unregister_module("gamma_quant");
  beta_quant = nullptr;
  gamma_quant = nullptr;
}

}  // namespace licprune

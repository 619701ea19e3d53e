#include "quant/fake_quant.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lic/ops.hpp"

namespace licprune {
namespace {

std::vector<int64_t> broadcast_shape(const torch::Tensor& like, int64_t out_dim) {
  std::vector<int64_t> shape(std::max<int64_t>(like.dim(), 1), 1);
  if (out_dim >= 0) shape[out_dim] = -1;
  return shape;
}

void check_bits(int64_t bits) {
  if (bits < 2 || bits > 16)
    throw std::invalid_argument("quantization bits must be in [2,16], got " +
                                std::to_string(bits));
}

// Straight-through rounding with range-aware gradients for (w, s, z):
//   inside the clip range:  dw = g, ds = g*(q - v), dz = 0
//   outside:                dw = 0, ds = g*(clip_edge - z), dz = -g*s
class FakeQuantFn : public torch::autograd::Function<FakeQuantFn> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx,
                               const torch::Tensor& w, const torch::Tensor& scale,
                               const torch::Tensor& zero, double qmin, double qmax,
                               int64_t out_dim) {
    auto shape = broadcast_shape(w, out_dim);
    auto s = scale.reshape(shape);
    auto z = zero.reshape(shape);
    auto v = w / s + z;
    auto inside = (v >= qmin) & (v <= qmax);
    auto q = torch::round(torch::clamp(v, qmin, qmax));
    ctx->save_for_backward({v, q, s, z, inside});
    ctx->saved_data["out_dim"] = out_dim;
    ctx->saved_data["qmin"] = qmin;
    ctx->saved_data["qmax"] = qmax;
    return s * (q - z);
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list gout) {
    auto saved = ctx->get_saved_variables();
    auto v = saved[0], q = saved[1], s = saved[2], z = saved[3];
    auto inside = saved[4];
    auto g = gout[0];
    int64_t out_dim = ctx->saved_data["out_dim"].toInt();
    double qmin = ctx->saved_data["qmin"].toDouble();
    double qmax = ctx->saved_data["qmax"].toDouble();

    auto insidef = inside.to(g.dtype());
    auto grad_w = g * insidef;

    auto edge = torch::where(v < qmin, torch::full_like(v, qmin), torch::full_like(v, qmax));
    auto gs_el = g * torch::where(inside, q - v, edge - z);
    auto gz_el = torch::where(inside, torch::zeros_like(g), -g * s);

    torch::Tensor grad_s, grad_z;
    if (out_dim >= 0) {
      std::vector<int64_t> sum_dims;
      for (int64_t d = 0; d < v.dim(); ++d)
        if (d != out_dim) sum_dims.push_back(d);
      grad_s = gs_el.sum(sum_dims);
      grad_z = gz_el.sum(sum_dims);
    } else {
      grad_s = gs_el.sum();
      grad_z = gz_el.sum();
    }
    return {grad_w, grad_s, grad_z, torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor quantize_weights(const torch::Tensor& w, const QuantParams& p,
                               int64_t out_dim) {
  check_bits(p.bits);
  auto shape = broadcast_shape(w, p.scale.numel() == 1 ? -1 : out_dim);
  auto s = p.scale.reshape(shape);
  auto z = p.zero_point.reshape(shape);
  auto q = torch::round(torch::clamp(w / s + z, 0.0, std::pow(2.0, p.bits) - 1));
  return s * (q - z);
}

torch::Tensor quantize_acts(const torch::Tensor& a, const QuantParams& p) {
  check_bits(p.bits);
  double lo = -std::pow(2.0, p.bits - 1);
  double hi = std::pow(2.0, p.bits - 1) - 1;
  auto q = torch::round(torch::clamp(a / p.scale + p.zero_point, lo, hi));
  return p.scale * (q - p.zero_point);
}

torch::Tensor integer_codes(const torch::Tensor& w, const QuantParams& p,
                            int64_t out_dim) {
  auto shape = broadcast_shape(w, p.scale.numel() == 1 ? -1 : out_dim);
  auto s = p.scale.reshape(shape);
  auto z = p.zero_point.reshape(shape);
  auto q = torch::round(torch::clamp(w / s + z, p.qmin(), p.qmax()));
  return q.to(torch::kInt32);
}

QuantParams init_weight_params(const torch::Tensor& w, int64_t bits, int64_t out_dim) {
  check_bits(bits);
  QuantParams p;
  p.bits = bits;
  p.signed_range = false;
  double levels = std::pow(2.0, bits) - 1;
  torch::NoGradGuard ng;
  torch::Tensor wmin, wmax;
  if (out_dim >= 0) {
    auto flat = w.transpose(0, out_dim).reshape({w.size(out_dim), -1});
    wmin = std::get<0>(flat.min(1));
    wmax = std::get<0>(flat.max(1));
  } else {
    wmin = w.min().reshape({1}).squeeze();
    wmax = w.max().reshape({1}).squeeze();
  }
  auto s = torch::clamp((wmax - wmin) / levels, kScaleMin);
  auto z = torch::round(-wmin / s);
  // degenerate all-zero slices: pin to the identity point
  auto zero_slice = (wmin == 0) & (wmax == 0);
  z = torch::where(zero_slice, torch::zeros_like(z), z);
  p.scale = s.to(w.dtype());
  p.zero_point = z.to(w.dtype());
  return p;
}

QuantParams dynamic_act_params(const torch::Tensor& a, int64_t bits) {
  check_bits(bits);
  QuantParams p;
  p.bits = bits;
  p.signed_range = true;
  double levels = std::pow(2.0, bits) - 1;
  torch::NoGradGuard ng;
  auto amin = a.min();
  auto amax = a.max();
  auto s = torch::clamp((amax - amin) / levels, kScaleMin);
  auto z = torch::round(-amin / s) + p.qmin();
  p.scale = s.to(a.dtype());
  p.zero_point = z.to(a.dtype());
  return p;
}

torch::Tensor fake_quant_ste(const torch::Tensor& w, const torch::Tensor& scale,
                             const torch::Tensor& zero_point, int64_t bits,
                             bool signed_range, int64_t out_dim) {
  check_bits(bits);
  double qmin = signed_range ? -std::pow(2.0, bits - 1) : 0.0;
  double qmax = signed_range ? std::pow(2.0, bits - 1) - 1 : std::pow(2.0, bits) - 1;
  return FakeQuantFn::apply(w, scale, zero_point, qmin, qmax, out_dim);
}

torch::Tensor fake_quant_acts_dynamic(const torch::Tensor& a, int64_t bits) {
  auto p = dynamic_act_params(a.detach(), bits);
  return fake_quant_ste(a, p.scale, p.zero_point, bits, true, -1);
}

WeightFakeQuantImpl::WeightFakeQuantImpl(int64_t n_filters, int64_t bits,
                                         int64_t out_dim, torch::ScalarType dtype)
    : bits_(bits), out_dim_(n_filters == 0 ? -1 : out_dim), n_filters_(n_filters) {
  check_bits(bits);
  auto opt = torch::TensorOptions().dtype(dtype);
  if (n_filters > 0) {
    scale_ = register_parameter("scale", torch::full({n_filters}, 1.0, opt));
    zero_ = register_parameter("zero", torch::zeros({n_filters}, opt));
  } else {
    scale_ = register_parameter("scale", torch::full({}, 1.0, opt));
    zero_ = register_parameter("zero", torch::zeros({}, opt));
  }
}

void WeightFakeQuantImpl::init_from(const torch::Tensor& w) {
  auto p = init_weight_params(w.detach(), bits_, out_dim_);
  torch::NoGradGuard ng;
  scale_.copy_(p.scale);
  zero_.copy_(p.zero_point);
}

torch::Tensor WeightFakeQuantImpl::forward(const torch::Tensor& w) {
  auto s_eff = lower_bound(scale_, kScaleMin);
  return fake_quant_ste(w, s_eff, zero_, bits_, /*signed_range=*/false, out_dim_);
}

QuantParams WeightFakeQuantImpl::params() const {
  QuantParams p;
  p.bits = bits_;
  p.signed_range = false;
  p.scale = torch::clamp(scale_.detach(), kScaleMin);
  p.zero_point = zero_.detach();
  return p;
}

}  // namespace licprune

#include "lic/ops.hpp"

#include <cmath>

namespace licprune {
namespace {

class LowerBoundFn : public torch::autograd::Function<LowerBoundFn> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx,
                               const torch::Tensor& x, double bound) {
    auto b = torch::full({}, bound, x.options());
    ctx->save_for_backward({x, b});
    return torch::max(x, b);
  }

  static torch::autograd::variable_list backward(
      torch::autograd::AutogradContext* ctx, torch::autograd::variable_list grad_out) {
    auto saved = ctx->get_saved_variables();
    auto x = saved[0];
    auto b = saved[1];
    auto g = grad_out[0];
    // pass-through if above the bound, or if the gradient pushes upward
    auto pass = (x >= b) | (g < 0);
    return {g * pass.to(g.dtype()), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor lower_bound(const torch::Tensor& x, double bound) {
  return LowerBoundFn::apply(x, bound);
}

torch::Tensor std_normal_cdf(const torch::Tensor& x) {
  return 0.5 * torch::erfc(-x * M_SQRT1_2);
}

}  // namespace licprune

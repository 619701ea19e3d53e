#pragma once

#include <torch/torch.h>

namespace licprune {

// max(x, bound), but the gradient still passes through elements sitting at the
// bound whenever it would push them back up. Plain clamp kills that gradient
// and floored scales / likelihoods would never recover.
torch::Tensor lower_bound(const torch::Tensor& x, double bound);

// Standard normal CDF via erfc (stable in both tails).
torch::Tensor std_normal_cdf(const torch::Tensor& x);

}  // namespace licprune

#include <torch/torch.h>

#include <cmath>

#include "doctest.h"
#include "lic/codec.hpp"
#include "prune/prune.hpp"
#include "quant/fake_quant.hpp"
#include "quant/quantize_model.hpp"

using namespace licprune;

namespace {

QuantParams scalar_params(double s, double z, int64_t bits, bool signed_range) {
  QuantParams p;
  p.scale = torch::tensor(s, torch::kFloat64);
  p.zero_point = torch::tensor(z, torch::kFloat64);
  p.bits = bits;
  p.signed_range = signed_range;
  return p;
}

double quant1(double w, const QuantParams& p) {
  auto t = torch::tensor({w}, torch::kFloat64);
  auto out = p.signed_range ? quantize_acts(t, p) : quantize_weights(t, p);
  return out[0].item<double>();
}

}  // namespace

TEST_CASE("weight round trip recovers grid points") {
  // exact in binary: s = 1/8, every multiple stays put bit for bit
  auto p = scalar_params(0.125, 0.0, 8, false);
  for (double w : {0.0, 0.125, 1.0, 15.875, 31.875}) CHECK(quant1(w, p) == w);

  // zero point cancels regardless of scale representability
  auto p2 = scalar_params(0.1, 128.0, 8, false);
  CHECK(quant1(0.0, p2) == 0.0);

  // decimal grid, limited by double rounding only
  auto p3 = scalar_params(0.1, 0.0, 8, false);
  CHECK(quant1(12.7, p3) == doctest::Approx(12.7).epsilon(1e-12));
}

TEST_CASE("weight clip saturates at the top code") {
  auto p = scalar_params(0.1, 0.0, 8, false);
  // 100/0.1 = 1000 -> code 255 -> 25.5
  CHECK(quant1(100.0, p) == doctest::Approx(25.5).epsilon(1e-12));
  // below code 0 everything collapses onto the zero point
  CHECK(quant1(-5.0, p) == 0.0);

  auto p2 = scalar_params(0.1, 128.0, 8, false);
  CHECK(quant1(100.0, p2) == doctest::Approx(0.1 * (255 - 128)).epsilon(1e-12));
}

TEST_CASE("activation round trip uses the signed range") {
  auto p = scalar_params(0.25, 0.0, 8, true);
  CHECK(quant1(-20.0, p) == -20.0);  // -80 is inside [-128, 127], s exact in binary
  CHECK(quant1(50.0, p) == 31.75);   // 200 clips to 127
  CHECK(quant1(3.1, p) == 3.0);      // 12.4 rounds to 12
  CHECK(quant1(-32.0, p) == -32.0);  // exactly the bottom code
  CHECK(quant1(-40.0, p) == -32.0);  // below it: clipped
}

TEST_CASE("reconstruction error is at most half a step inside the range") {
  torch::manual_seed(7);
  auto w = torch::rand({2000}, torch::kFloat64) * 3.0 - 1.2;
  auto p = init_weight_params(w, 8, /*out_dim=*/-1);
  double s = p.scale.item<double>();
  auto err = (quantize_weights(w, p) - w).abs();
  CHECK(err.max().item<double>() <= s / 2 * (1 + 1e-12));

  auto a = torch::rand({2000}, torch::kFloat64) * 10.0 - 4.0;
  auto pa = dynamic_act_params(a, 8);
  double sa = pa.scale.item<double>();
  auto erra = (quantize_acts(a, pa) - a).abs();
  // min/max themselves are covered, so nothing saturates further than s/2
  CHECK(erra.max().item<double>() <= sa / 2 * (1 + 1e-12));
}

TEST_CASE("integer zero point preserves exact zeros") {
  // any integer z maps w = 0 to code z and back to exactly 0
  for (double z : {0.0, 1.0, 97.0, 255.0}) {
    auto p = scalar_params(0.037, z, 8, false);
    CHECK(quant1(0.0, p) == 0.0);
  }

  torch::manual_seed(3);
  auto w = torch::randn({4, 3, 3, 3}, torch::kFloat64);
  w.index_put_({1}, 0.0);                    // one dead filter
  w.index_put_({0, 0, 0, 0}, 0.0);           // and a stray zero in a live one
  w.index_put_({0, 2, 1, 1}, w.abs().max()); // keep the range positive+negative
  auto p = init_weight_params(w, 8, 0);
  auto wq = quantize_weights(w, p, 0);
  CHECK(wq.index({1}).abs().max().item<double>() == 0.0);
  CHECK(wq.index({0, 0, 0, 0}).item<double>() == 0.0);
  // zero points came out integer
  CHECK(torch::equal(p.zero_point, torch::round(p.zero_point)));
}

TEST_CASE("dynamic activation scale spans min to max") {
  auto a = torch::tensor({-1.0, 0.3, 1.0}, torch::kFloat64);
  auto p = dynamic_act_params(a, 8);
  CHECK(p.scale.item<double>() == 2.0 / 255.0);
  CHECK(p.signed_range);
  // -min/s = 127.5 rounds to 128, shifted by qmin = -128
  CHECK(p.zero_point.item<double>() == 0.0);

  // all-positive input still lands both extremes on codes
  auto b = torch::tensor({0.5, 0.75, 1.0}, torch::kFloat64);
  auto pb = dynamic_act_params(b, 8);
  CHECK(pb.scale.item<double>() == doctest::Approx(0.5 / 255.0).epsilon(1e-12));
  auto bq = quantize_acts(b, pb);
  CHECK(bq[0].item<double>() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(bq[2].item<double>() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant tensors degenerate to the scale floor") {
  auto a = torch::full({16}, 0.7, torch::kFloat64);
  auto p = dynamic_act_params(a, 8);
  CHECK(p.scale.item<double>() == kScaleMin);
  auto err = (quantize_acts(a, p) - a).abs().max().item<double>();
  CHECK(err <= kScaleMin / 2 + 1e-12);

  auto w = torch::full({8}, 0.42, torch::kFloat64);
  auto pw = init_weight_params(w, 8, -1);
  CHECK(pw.scale.item<double>() == kScaleMin);
  CHECK((quantize_weights(w, pw) - w).abs().max().item<double>() <= kScaleMin / 2 + 1e-12);
}

TEST_CASE("per-filter init spans each filter's own range") {
  auto w = torch::zeros({4, 3, 3, 3}, torch::kFloat64);
  for (int f = 0; f < 4; ++f)
    w.index_put_({f}, torch::linspace(-0.5 * (f + 1), 0.5 * (f + 1), 27,
                                      torch::kFloat64).reshape({3, 3, 3}));
  w.index_put_({2}, 0.0);  // filter 2 is all zeros

  auto p = init_weight_params(w, 8, 0);
  REQUIRE(p.scale.numel() == 4);
  CHECK(p.scale[0].item<double>() == 1.0 / 255.0);
  CHECK(p.scale[1].item<double>() == 2.0 / 255.0);
  CHECK(p.scale[3].item<double>() == 4.0 / 255.0);
  CHECK(p.scale[2].item<double>() == kScaleMin);
  CHECK(p.zero_point[2].item<double>() == 0.0);

  // transposed-conv layout: filters live on dim 1
  auto wd = w.permute({1, 0, 2, 3}).contiguous();
  auto pd = init_weight_params(wd, 8, 1);
  REQUIRE(pd.scale.numel() == 4);
  CHECK(torch::allclose(pd.scale, p.scale));
  auto errd = (quantize_weights(wd, pd, 1) - wd).abs().amax({0, 2, 3});
  for (int f = 0; f < 4; ++f)
    CHECK(errd[f].item<double>() <= pd.scale[f].item<double>() / 2 * (1 + 1e-12));
}

TEST_CASE("round trip matches an elementwise scalar oracle") {
  torch::manual_seed(11);
  auto w = torch::randn({6, 5, 3, 3}, torch::kFloat64);
  auto p = init_weight_params(w, 8, 0);
  auto wq = quantize_weights(w, p, 0);

  auto wa = w.accessor<double, 4>();
  auto qa = wq.accessor<double, 4>();
  auto sa = p.scale.accessor<double, 1>();
  auto za = p.zero_point.accessor<double, 1>();
  for (int f = 0; f < 6; ++f) {
    double s = sa[f], z = za[f];
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = wa[f][c][i][j] / s + z;
          double q = std::nearbyint(std::clamp(v, 0.0, 255.0));
          double expect = s * (q - z);
          CHECK(qa[f][c][i][j] == expect);
          CHECK(std::abs(expect - wa[f][c][i][j]) <= s / 2 * (1 + 1e-12));
        }
  }
}

TEST_CASE("quantizing twice equals quantizing once") {
  torch::manual_seed(5);
  auto w = torch::randn({8, 4, 5, 5}, torch::kFloat64);
  auto p = init_weight_params(w, 6, 0);
  auto once = quantize_weights(w, p, 0);
  auto twice = quantize_weights(once, p, 0);
  CHECK(torch::equal(once, twice));

  auto a = torch::randn({256}, torch::kFloat64) * 4;
  auto pa = dynamic_act_params(a, 8);
  auto a1 = quantize_acts(a, pa);
  CHECK(torch::equal(a1, quantize_acts(a1, pa)));
}

TEST_CASE("integer codes stay in range and reproduce the dequant") {
  torch::manual_seed(13);
  auto w = torch::randn({5, 4, 3, 3}, torch::kFloat64) * 2;
  auto p = init_weight_params(w, 8, 0);
  auto codes = integer_codes(w, p, 0);
  CHECK(codes.dtype() == torch::kInt32);
  CHECK(codes.min().item<int>() >= 0);
  CHECK(codes.max().item<int>() <= 255);
  auto s = p.scale.reshape({-1, 1, 1, 1});
  auto z = p.zero_point.reshape({-1, 1, 1, 1});
  CHECK(torch::equal(s * (codes.to(torch::kFloat64) - z), quantize_weights(w, p, 0)));
}

TEST_CASE("straight-through gradients: inside the range") {
  // 3 bits unsigned -> codes 0..7; w = 0.3, s = 0.25, z = 2 -> v = 3.2, q = 3
  auto w = torch::tensor(0.3, torch::dtype(torch::kFloat64).requires_grad(true));
  auto s = torch::tensor(0.25, torch::dtype(torch::kFloat64).requires_grad(true));
  auto z = torch::tensor(2.0, torch::dtype(torch::kFloat64).requires_grad(true));
  auto y = fake_quant_ste(w, s, z, 3, false, -1);
  CHECK(y.item<double>() == 0.25);
  y.sum().backward();
  CHECK(w.grad().item<double>() == 1.0);  // straight through
  CHECK(s.grad().item<double>() == doctest::Approx(3.0 - 3.2).epsilon(1e-12));
  CHECK(z.grad().item<double>() == 0.0);

  // the secant over one full step reproduces the pass-through slope
  torch::NoGradGuard ng;
  auto f = [&](double x) {
    return fake_quant_ste(torch::tensor(x, torch::kFloat64), s.detach(), z.detach(),
                          3, false, -1).item<double>();
  };
  double secant = (f(0.3 + 0.25) - f(0.3 - 0.25)) / 0.5;
  CHECK(secant == doctest::Approx(w.grad().item<double>()).epsilon(5e-2));
}

TEST_CASE("straight-through gradients: clipped elements") {
  auto mk = [](double v) {
    return torch::tensor(v, torch::dtype(torch::kFloat64).requires_grad(true));
  };
  // above the range: v = 10 clips to 7
  auto w = mk(2.0), s = mk(0.25), z = mk(2.0);
  auto y = fake_quant_ste(w, s, z, 3, false, -1);
  CHECK(y.item<double>() == 1.25);
  y.sum().backward();
  CHECK(w.grad().item<double>() == 0.0);
  CHECK(s.grad().item<double>() == 5.0);   // qmax - z
  CHECK(z.grad().item<double>() == -0.25); // -s

  // below the range: v = -2 clips to 0
  auto w2 = mk(-1.0), s2 = mk(0.25), z2 = mk(2.0);
  auto y2 = fake_quant_ste(w2, s2, z2, 3, false, -1);
  CHECK(y2.item<double>() == -0.5);
  y2.sum().backward();
  CHECK(w2.grad().item<double>() == 0.0);
  CHECK(s2.grad().item<double>() == -2.0);  // qmin - z
  CHECK(z2.grad().item<double>() == -0.25);
}

TEST_CASE("straight-through w-gradient matches one-step secants in bulk") {
  torch::manual_seed(17);
  // keep everything comfortably inside the clip range
  auto w = (torch::rand({64}, torch::kFloat64) * 20.0 + 2.0) * 0.1;
  w.requires_grad_(true);
  auto s = torch::tensor(0.1, torch::kFloat64);
  auto z = torch::tensor(0.0, torch::kFloat64);
  auto g = torch::rand({64}, torch::kFloat64) + 0.5;

  auto y = fake_quant_ste(w, s, z, 8, false, -1);
  y.backward(g);
  auto grad = w.grad().clone();

  torch::NoGradGuard ng;
  auto wd = w.detach();
  auto up = fake_quant_ste(wd + 0.1, s, z, 8, false, -1);
  auto dn = fake_quant_ste(wd - 0.1, s, z, 8, false, -1);
  auto secant = (up - dn) / 0.2 * g;
  auto rel = ((secant - grad).abs() / grad.abs()).max().item<double>();
  CHECK(rel <= 5e-2);
}

TEST_CASE("per-filter scale gradients aggregate over their slice") {
  auto w = torch::tensor({{0.31, 0.07, 0.46}, {0.12, 0.88, 0.29}}, torch::kFloat64);
  auto s = torch::full({2}, 0.1, torch::dtype(torch::kFloat64).requires_grad(true));
  auto z = torch::zeros({2}, torch::dtype(torch::kFloat64).requires_grad(true));
  auto y = fake_quant_ste(w, s, z, 8, false, 0);
  y.sum().backward();

  torch::NoGradGuard ng;
  auto v = w / 0.1;
  auto q = torch::round(v);
  auto expect = (q - v).sum(1);  // all inside -> per-slice sum of q - v
  CHECK(torch::allclose(s.grad(), expect, 1e-12, 1e-12));
  CHECK(torch::equal(z.grad(), torch::zeros({2}, torch::kFloat64)));
}

TEST_CASE("learnable weight quantizer: init accuracy and floored scale") {
  torch::manual_seed(19);
  auto w = torch::randn({4, 3, 3, 3}, torch::kFloat64);
  WeightFakeQuant m(4, 8, 0, torch::kFloat64);
  m->init_from(w);
  CHECK(m->scale_.requires_grad());
  CHECK(m->zero_.requires_grad());

  auto out = m->forward(w);
  auto err = (out - w).abs().amax({1, 2, 3});
  auto p = m->params();
  for (int f = 0; f < 4; ++f)
    CHECK(err[f].item<double>() <= p.scale[f].item<double>() / 2 * (1 + 1e-12));

  out.sum().backward();
  CHECK(m->scale_.grad().defined());
  CHECK(m->scale_.grad().abs().sum().item<double>() > 0);

  // drive the raw scale below the floor: effective params stay pinned at it
  {
    torch::NoGradGuard ng;
    m->scale_.fill_(-3.0);
  }
  CHECK(m->params().scale.min().item<double>() >= kScaleMin);
  CHECK(m->forward(w).isfinite().all().item<bool>());

  // per-tensor variant carries scalar parameters
  WeightFakeQuant pt(0, 8, 0, torch::kFloat64);
  pt->init_from(w);
  CHECK(pt->scale_.dim() == 0);
  CHECK((pt->forward(w) - w).abs().max().item<double>() <=
        pt->params().scale.item<double>() / 2 * (1 + 1e-12));
}

TEST_CASE("dynamic activation fake-quant keeps gradients flowing") {
  torch::manual_seed(23);
  auto x = torch::randn({128}, torch::dtype(torch::kFloat64).requires_grad(true));
  auto y = fake_quant_acts_dynamic(x, 8);
  auto p = dynamic_act_params(x.detach(), 8);
  CHECK((y - x).abs().max().item<double>() <=
        p.scale.item<double>() / 2 * (1 + 1e-12));
  y.sum().backward();
  // pass-through everywhere except possibly the two extremes, where the
  // rounded zero point can push v marginally outside the clip range
  auto g = x.grad();
  CHECK(g.max().item<double>() == 1.0);
  CHECK(g.sum().item<double>() >= 126.0);
}

TEST_CASE("channel masks zero the quantized weights exactly") {
  torch::manual_seed(29);
  auto model = CodecModel(CodecConfig::desk());
  auto st = model->stage("g_a.1");
  st->attach_quant(8, 8);
  CHECK(st->quant_attached());

  std::vector<uint8_t> keep_out(st->out_channels(), 1), keep_in(st->in_channels(), 1);
  keep_out[3] = keep_out[17] = 0;
  keep_in[0] = keep_in[9] = 0;
  st->set_mask(keep_out, keep_in);

  auto w = st->effective_weight();
  CHECK(w.index({3}).abs().max().item<float>() == 0.0f);
  CHECK(w.index({17}).abs().max().item<float>() == 0.0f);
  CHECK(w.index({torch::indexing::Slice(), 0}).abs().max().item<float>() == 0.0f);
  CHECK(w.index({torch::indexing::Slice(), 9}).abs().max().item<float>() == 0.0f);
  // kept entries equal plain quantize-then-mask of the raw storage
  auto p = st->weight_quant()->params();
  auto wq = quantize_weights(st->weight_.detach(), p, st->filter_dim());
  auto mask = st->keep_out_.to(w.dtype()).reshape({-1, 1, 1, 1}) *
              st->keep_in_.to(w.dtype()).reshape({1, -1, 1, 1});
  CHECK(torch::equal(w, wq * mask));
}

TEST_CASE("disabling quantization restores the exact forward") {
  torch::manual_seed(31);
  auto model = CodecModel(CodecConfig::desk());
  model->eval();
  auto x = torch::rand({1, 3, 64, 64});
  auto before = model->forward(x, QuantMode::Round);

  attach_quantization(model, 8, 8);
  CHECK(quantization_attached(model));
  set_quantization_enabled(model, false);
  auto off = model->forward(x, QuantMode::Round);
  CHECK(torch::equal(before.x_hat, off.x_hat));

  set_quantization_enabled(model, true);
  auto on = model->forward(x, QuantMode::Round);
  CHECK((on.x_hat - before.x_hat).abs().max().item<float>() > 0);

  detach_quantization(model);
  CHECK(!quantization_attached(model));
  auto after = model->forward(x, QuantMode::Round);
  CHECK(torch::equal(before.x_hat, after.x_hat));
}

TEST_CASE("size accounting: dense float32 model is its own baseline") {
  auto model = CodecModel(CodecConfig::desk());
  auto r = model_size_bytes(model);
  CHECK(r.bytes == r.baseline_bytes);
  CHECK(r.compression_ratio == 1.0);

  int64_t sum = 0;
  for (auto& [k, v] : r.breakdown.items()) sum += v.get<int64_t>();
  CHECK(sum == r.bytes);
}

TEST_CASE("size accounting matches independent arithmetic") {
  torch::manual_seed(37);
  auto model = CodecModel(CodecConfig::desk());

  // prune two stages, quantize everything
  auto st = model->stage("g_a.1");
  std::vector<uint8_t> ko(st->out_channels(), 1), ki(st->in_channels(), 1);
  for (int i = 0; i < 8; ++i) ko[i] = 0;
  for (int i = 0; i < 4; ++i) ki[i] = 0;
  st->set_mask(ko, ki);
  auto st2 = model->stage("h_a.1");
  std::vector<uint8_t> ko2(st2->out_channels(), 1), ki2(st2->in_channels(), 1);
  for (int i = 0; i < 6; ++i) ko2[i] = 0;
  st2->set_mask(ko2, ki2);
  attach_quantization(model, 8, 8);

  auto r = model_size_bytes(model);

  int64_t expect = 0, expect_base = 0;
  for (auto& id : model->stage_ids()) {
    auto s = model->stage(id);
    const auto& sp = s->spec();
    int64_t keep_o = 0, keep_i = 0;
    for (auto v : s->keep_out_vec()) keep_o += v != 0;
    for (auto v : s->keep_in_vec()) keep_i += v != 0;
    expect += keep_o * keep_i * sp.kernel * sp.kernel;  // one byte per 8-bit weight
    expect += keep_o * 8;                               // scale + zero per filter
    if (sp.has_bias) expect += keep_o * 4;
    if (!s->gdn().is_empty()) expect += keep_o * keep_o + keep_o + 16;
    expect_base += sp.out_ch * sp.in_ch * sp.kernel * sp.kernel * 4;
    if (sp.has_bias) expect_base += sp.out_ch * 4;
    if (!s->gdn().is_empty()) expect_base += (sp.out_ch * sp.out_ch + sp.out_ch) * 4;
  }
  int64_t prior = 0;
  for (auto& p : model->z_prior_->parameters()) prior += p.numel();
  expect += prior * 4;
  expect_base += prior * 4;

  CHECK(r.bytes == expect);
  CHECK(r.baseline_bytes == expect_base);
  CHECK(r.compression_ratio ==
        doctest::Approx(double(expect_base) / double(expect)).epsilon(1e-12));
  // 8-bit weights with small overheads: squarely between 3.5x and 4.2x here
  CHECK(r.compression_ratio > 3.5);
  CHECK(r.compression_ratio < 4.2);
}

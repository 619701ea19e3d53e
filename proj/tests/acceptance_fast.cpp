// Fast acceptance checks. Each check pins its tolerance and a wall-clock
// budget, prints one line, and the process exits with the failure count.

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eval/bdrate.hpp"
#include "eval/metrics.hpp"
#include "lic/codec.hpp"
#include "nas/nas.hpp"
#include "prune/prune.hpp"
#include "quant/fake_quant.hpp"

using namespace licprune;

namespace {

using Clock = std::chrono::steady_clock;

struct Runner {
  int failures = 0;

  // body returns an empty string on success, otherwise the failed fact
  void check(const std::string& name, double budget_s,
             const std::function<std::string()>& body) {
    auto t0 = Clock::now();
    std::string note;
    try {
      note = body();
    } catch (const std::exception& e) {
      note = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (note.empty() && secs > budget_s) {
      std::ostringstream os;
      os << "exceeded time budget of " << budget_s << "s";
      note = os.str();
    }
    bool ok = note.empty();
    if (!ok) ++failures;
    std::printf("[%s] %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), secs,
                ok ? "" : ": ", note.c_str());
    std::fflush(stdout);
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. weight/activation quantizer exactness

std::string check_quantizer() {
  // exact grid round trip: every representable level maps to itself
  QuantParams p;
  p.bits = 8;
  p.scale = torch::tensor(0.125);
  p.zero_point = torch::tensor(64.0);
  p.signed_range = false;
  auto codes = torch::arange(0, 256, torch::kFloat32);
  auto grid = (codes - 64.0) * 0.125;
  auto w = grid.view({256, 1, 1, 1});
  if (!torch::equal(quantize_weights(w, p, 0), w))
    return "grid values did not round trip exactly";

  // saturation lands exactly on the range edges
  auto big = torch::tensor({1000.0f, -1000.0f}).view({2, 1, 1, 1});
  auto sat = quantize_weights(big, p, 0);
  float hi = (255.0f - 64.0f) * 0.125f, lo = (0.0f - 64.0f) * 0.125f;
  if (sat[0].item<float>() != hi || sat[1].item<float>() != lo)
    return "clipped values missed the range edges";

  // integer zero point keeps exact zeros exact
  auto z = torch::zeros({4, 1, 1, 1});
  if (!torch::equal(quantize_weights(z, p, 0), z)) return "zero was not preserved";

  // reconstruction error within half a step, weights and activations
  torch::manual_seed(91);
  auto wr = torch::rand({16, 8, 3, 3}) * 2.0 - 1.0;
  auto wp = init_weight_params(wr, 8);
  auto wq = quantize_weights(wr, wp, 0);
  double ws = wp.scale.max().item<double>();
  double werr = (wq - wr).abs().max().item<double>();
  if (werr > 0.5 * ws * (1.0 + 1e-6))
    return "weight error " + fmt(werr) + " above s/2 = " + fmt(0.5 * ws);

  auto ar = torch::rand({2, 8, 16, 16}) * 4.0 - 2.0;
  auto ap = dynamic_act_params(ar, 8);
  auto aq = quantize_acts(ar, ap);
  double as = ap.scale.item<double>();
  double aerr = (aq - ar).abs().max().item<double>();
  if (aerr > 0.5 * as * (1.0 + 1e-6))
    return "activation error " + fmt(aerr) + " above s/2 = " + fmt(0.5 * as);

  // quantizing twice equals quantizing once
  if (!torch::equal(quantize_weights(wq, wp, 0), wq)) return "not idempotent";
  return "";
}

// ---------------------------------------------------------------------------
// stub evaluator with injected delta landscapes, identity rankings

class StubEval : public DeltaRdEvaluator {
 public:
  explicit StubEval(CodecModel model) : model_(model) {}
  std::function<double(const std::string&, Direction, int64_t)> fn =
      [](const std::string&, Direction, int64_t) { return 0.0; };

  double delta_rd(const std::string& id, Direction dir, int64_t,
                  int64_t count) override {
    return fn(id, dir, count);
  }

  const std::vector<int64_t>& ranking(const std::string& id, Direction dir) override {
    auto key = id + "|" + to_string(dir);
    auto it = ranks_.find(key);
    if (it != ranks_.end()) return it->second;
    auto st = model_->stage(id);
    auto c = dir == Direction::OutputMaps ? st->out_channels() : st->in_channels();
    std::vector<int64_t> order(static_cast<size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    return ranks_.emplace(key, std::move(order)).first->second;
  }

 private:
  CodecModel model_;
  std::map<std::string, std::vector<int64_t>> ranks_;
};

CodecConfig wide_config() {
  auto c = CodecConfig::desk();
  c.n_channels = 64;
  c.m_channels = 64;
  return c;
}

int64_t prune_cap(int64_t channels) {
  auto keep = std::max<int64_t>(1, (channels * 5 + 99) / 100);
  return channels - keep;
}

// ---------------------------------------------------------------------------
// 2. per-layer ratio sweep equals the brute-force optimum

std::string check_ratio_search() {
  torch::manual_seed(1);
  auto model = CodecModel(wide_config());
  StubEval stub(model);
  auto ids = model->prunable_ids();
  std::mt19937_64 gen(12345);
  std::uniform_real_distribution<double> alpha_d(0.0, 0.1);
  std::uniform_real_distribution<double> delta_d(0.0, 0.2);

  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const auto& id = ids[gen() % ids.size()];
    auto dir = (gen() % 2 == 0) ? Direction::OutputMaps : Direction::InputMaps;
    int64_t k = std::vector<int64_t>{2, 4, 8}[gen() % 3];
    double alpha = alpha_d(gen);

    auto st = model->stage(id);
    auto c = dir == Direction::OutputMaps ? st->out_channels() : st->in_channels();
    auto cap = prune_cap(c);

    std::map<int64_t, double> landscape;
    for (int64_t n = k; n <= cap; n += k) landscape[n] = delta_d(gen);
    stub.fn = [&](const std::string&, Direction, int64_t n) { return landscape.at(n); };

    SearchConfig cfg;
    cfg.group_size = k;
    auto res = layer_ratio_search(model, id, dir, alpha, cfg, stub);

    int64_t best = 0;  // largest count whose delta stays within alpha
    for (const auto& [n, d] : landscape) {
      if (d <= alpha) best = std::max(best, n);
    }
    if (res.chosen_count != best) {
      return "trial " + std::to_string(t) + " on " + id + ": chose " +
             std::to_string(res.chosen_count) + ", brute force says " +
             std::to_string(best);
    }
    if (res.tested.size() != landscape.size())
      return "trial " + std::to_string(t) + ": sweep size mismatch";
  }
  return "";
}

// ---------------------------------------------------------------------------
// 3. outer threshold loop converges on monotone landscapes

std::string check_outer_convergence() {
  torch::manual_seed(2);
  auto model = CodecModel(wide_config());
  std::mt19937_64 gen(999);
  std::uniform_real_distribution<double> g_d(0.5, 2.0), q_d(1.0, 2.0);

  const int trials = 100;
  int converged = 0;
  for (int t = 0; t < trials; ++t) {
    StubEval stub(model);
    // per layer/direction: delta grows monotonically with the pruned count
    std::map<std::string, std::pair<double, double>> shape;
    stub.fn = [&](const std::string& id, Direction dir, int64_t n) {
      auto key = id + "|" + to_string(dir);
      auto it = shape.find(key);
      if (it == shape.end())
        it = shape.emplace(key, std::make_pair(g_d(gen), q_d(gen))).first;
      auto st = model->stage(id);
      auto c = dir == Direction::OutputMaps ? st->out_channels() : st->in_channels();
      double frac = static_cast<double>(n) / static_cast<double>(prune_cap(c));
      return it->second.first * std::pow(frac, it->second.second);
    };

    SearchConfig cfg;
    cfg.group_size = 4;
    cfg.s_target = 0.30;
    cfg.delta = 0.01;
    cfg.alpha_init = 0.01;
    cfg.max_outer_iters = 30;
    auto res = alpha_outer_search(model, cfg, stub);
    if (res.trace.converged && std::abs(res.achieved_s - 0.30) <= 0.01) ++converged;
  }
  if (converged < 99)
    return "only " + std::to_string(converged) + "/100 landscapes converged to 30% +- 1%";
  return "";
}

// ---------------------------------------------------------------------------
// 4. sparsity arithmetic

StructuredMask full_mask(ConvStage st) {
  StructuredMask m;
  m.layer_id = st->id();
  m.keep_out.assign(static_cast<size_t>(st->out_channels()), 1);
  m.keep_in.assign(static_cast<size_t>(st->in_channels()), 1);
  return m;
}

std::string check_sparsity_arithmetic() {
  // quarter of the filters and quarter of the channels: 1 - 0.75^2 = 43.75%
  LayerSpec sp;
  sp.kind = LayerKind::Conv;
  sp.in_ch = 32;
  sp.out_ch = 64;
  sp.kernel = 3;
  sp.stride = 1;
  sp.padding = 1;
  sp.has_bias = false;
  ConvStage st("solo", sp);
  auto m = full_mask(st);
  for (int i = 0; i < 16; ++i) m.keep_out[static_cast<size_t>(i)] = 0;
  for (int i = 0; i < 8; ++i) m.keep_in[static_cast<size_t>(i)] = 0;
  auto rep = sparsity_of_stages({st}, {m});
  if (rep.sparsity != 0.4375)
    return "single layer sparsity " + fmt(rep.sparsity) + " != 0.4375 exactly";

  // whole-model count agrees with literally counting zeroed elements
  torch::manual_seed(41);
  auto model = CodecModel(CodecConfig::desk());
  std::vector<StructuredMask> masks;
  for (auto& id : {"g_a.0", "g_a.2", "g_s.1", "h_a.1"}) {
    auto stage = model->stage(id);
    auto mask = full_mask(stage);
    for (int64_t i = 0; i < stage->out_channels() / 4; ++i)
      mask.keep_out[static_cast<size_t>(2 * i)] = 0;
    for (int64_t i = 0; i < stage->in_channels() / 8; ++i)
      mask.keep_in[static_cast<size_t>(3 * i)] = 0;
    masks.push_back(mask);
  }
  apply_masks(model, masks);
  auto report = sparsity(model);

  int64_t zeros = 0;
  for (const auto& id : model->prunable_ids()) {
    auto stage = model->stage(id);
    zeros += (stage->effective_weight() == 0.0).sum().item<int64_t>();
    auto b = stage->effective_bias();
    if (b.defined()) zeros += (b == 0.0).sum().item<int64_t>();
  }
  if (zeros != report.prunable_params_pruned)
    return "elementwise oracle counted " + std::to_string(zeros) +
           " zeros, report says " + std::to_string(report.prunable_params_pruned);
  return "";
}

// ---------------------------------------------------------------------------
// 5. compacted model is forward-equivalent to the masked one

std::string check_compaction() {
  torch::manual_seed(51);
  auto model = CodecModel(CodecConfig::desk());
  std::vector<StructuredMask> masks;
  for (auto& id : {"g_a.1", "g_a.2", "g_s.0", "g_s.1", "h_a.1", "h_s.0", "h_a.2"}) {
    auto stage = model->stage(id);
    auto mask = full_mask(stage);
    for (int64_t i = 0; i < stage->out_channels() / 4; ++i)
      mask.keep_out[static_cast<size_t>(2 * i)] = 0;
    for (int64_t i = 0; i < stage->in_channels() / 4; ++i)
      mask.keep_in[static_cast<size_t>(2 * i + 1)] = 0;
    masks.push_back(mask);
  }
  apply_masks(model, masks);
  auto small = compact(model);

  model->eval();
  small->eval();
  torch::NoGradGuard ng;
  double worst = 0;
  for (int draw = 0; draw < 20; ++draw) {
    auto x = torch::rand({1, 3, 64, 64});
    auto a = model->forward(x, QuantMode::Round);
    auto b = small->forward(x, QuantMode::Round);
    worst = std::max(worst, (a.x_hat - b.x_hat).abs().max().item<double>());
  }
  if (worst >= 1e-5)
    return "max reconstruction difference " + fmt(worst) + " not below 1e-5";
  return "";
}

// ---------------------------------------------------------------------------
// 6. bd-rate against closed forms and a dense numerical oracle

RdCurve curve_from(const std::string& label,
                   const std::vector<std::pair<double, double>>& pts) {
  RdCurve c;
  c.label = label;
  for (auto& [bpp, psnr] : pts) c.points.push_back({0.0, bpp, psnr});
  return c;
}

// independent implementation: long-double cubic fit via normal equations and
// gaussian elimination, then a dense trapezoid integration of the difference
double bd_rate_trapezoid(const RdCurve& ref, const RdCurve& test) {
  auto fit = [](const RdCurve& c) {
    std::array<long double, 4> coef{};
    std::array<std::array<long double, 5>, 4> m{};
    for (const auto& p : c.points) {
      long double x = p.psnr, y = std::log10((long double)p.bpp);
      std::array<long double, 4> basis{1.0L, x, x * x, x * x * x};
      for (int r = 0; r < 4; ++r) {
        for (int cc = 0; cc < 4; ++cc) m[r][cc] += basis[r] * basis[cc];
        m[r][4] += basis[r] * y;
      }
    }
    for (int col = 0; col < 4; ++col) {
      int piv = col;
      for (int r = col + 1; r < 4; ++r)
        if (std::fabs((double)m[r][col]) > std::fabs((double)m[piv][col])) piv = r;
      std::swap(m[col], m[piv]);
      for (int r = 0; r < 4; ++r) {
        if (r == col) continue;
        long double f = m[r][col] / m[col][col];
        for (int cc = col; cc < 5; ++cc) m[r][cc] -= f * m[col][cc];
      }
    }
    for (int r = 0; r < 4; ++r) coef[r] = m[r][4] / m[r][r];
    return coef;
  };
  auto lo = std::max(ref.points.front().psnr, test.points.front().psnr);
  auto hi = std::min(ref.points.back().psnr, test.points.back().psnr);
  auto cr = fit(ref), ct = fit(test);
  auto diff = [&](long double x) {
    long double r = 0, t = 0, xi = 1;
    for (int i = 0; i < 4; ++i, xi *= x) {
      r += cr[i] * xi;
      t += ct[i] * xi;
    }
    return t - r;
  };
  const int n = 200000;
  long double h = (hi - lo) / n, acc = 0;
  for (int i = 0; i <= n; ++i) {
    long double wgt = (i == 0 || i == n) ? 0.5L : 1.0L;
    acc += wgt * diff(lo + h * i);
  }
  long double avg = acc * h / (hi - lo);
  return (double)(std::pow(10.0L, avg) - 1.0L) * 100.0;
}

std::string check_bd_rate() {
  auto a = curve_from("a", {{0.2, 30}, {0.45, 33}, {0.9, 36}, {1.7, 38.5}});
  double same = bd_rate_percent(a, a);
  if (std::abs(same) > 1e-9) return "identical curves gave " + fmt(same) + "%, not 0";

  auto doubled = a;
  for (auto& p : doubled.points) p.bpp *= 2.0;
  double up = bd_rate_percent(a, doubled);
  if (std::abs(up - 100.0) > 100.0 * 1e-6)
    return "doubled rate gave " + fmt(up) + "%, not +100% to 1e-6 relative";

  std::mt19937_64 gen(777);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::pair<double, double>> pa, pb;
    double la = -2.0 + 0.3 * u01(gen), lb = la + 0.1 * (u01(gen) - 0.5);
    double qa = 29 + 2 * u01(gen), qb = qa + 1.5 * (u01(gen) - 0.5);
    for (int i = 0; i < 5; ++i) {
      pa.push_back({std::pow(10.0, la), qa});
      pb.push_back({std::pow(10.0, lb), qb});
      qa += 1.5 + u01(gen);
      qb += 1.5 + u01(gen);
      la += 0.18 + 0.1 * u01(gen);
      lb += 0.18 + 0.1 * u01(gen);
    }
    auto ca = curve_from("ref", pa), cb = curve_from("test", pb);
    double got = bd_rate_percent(ca, cb);
    double oracle = bd_rate_trapezoid(ca, cb);
    if (std::abs(got - oracle) > 0.1)
      return "random pair " + std::to_string(t) + ": " + fmt(got) + " vs oracle " +
             fmt(oracle) + " differ by more than 0.1 points";
  }
  return "";
}

// ---------------------------------------------------------------------------
// 7. analytic rate-distortion gradients match finite differences

std::string check_rd_gradients() {
  torch::manual_seed(61);
  auto cfg = CodecConfig::desk();
  cfg.n_channels = 8;
  cfg.m_channels = 8;
  CodecModel model(cfg, torch::kFloat64);
  auto x = torch::rand({2, 3, 64, 64}, torch::kFloat64);

  auto loss_at = [&]() {
    return model->rd_loss(x, 0.0067, QuantMode::Identity).total;
  };

  model->zero_grad();
  loss_at().backward();

  auto params = model->parameters();
  const double h = 1e-5;
  const double rel_tol = 1e-2;
  int checked = 0;
  torch::NoGradGuard ng;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.grad().defined()) continue;
    auto flat = p.view({-1});
    auto gflat = p.grad().view({-1});
    // probe each tensor at its strongest coordinate; weaker ones sit below
    // the cancellation noise a symmetric difference of the loss can resolve
    int64_t idx = gflat.abs().argmax().item<int64_t>();
    double g = gflat[idx].item<double>();
    if (std::abs(g) < 1e-4) continue;

    double orig = flat[idx].item<double>();
    flat[idx] = orig + h;
    double fp = loss_at().item<double>();
    flat[idx] = orig - h;
    double fm = loss_at().item<double>();
    flat[idx] = orig;

    double fd = (fp - fm) / (2.0 * h);
    if (std::abs(fd - g) / std::max(std::abs(fd), std::abs(g)) > rel_tol)
      return "parameter " + std::to_string(pi) + "[" + std::to_string(idx) +
             "]: analytic " + fmt(g) + " vs finite difference " + fmt(fd);
    ++checked;
  }
  if (checked < 15)
    return "only " + std::to_string(checked) + " gradient coordinates were comparable";
  return "";
}

}  // namespace

int main() {
  torch::set_num_threads(std::max(1u, std::thread::hardware_concurrency()));
  Runner r;
  r.check("quantizer exactness", 1.0, check_quantizer);
  r.check("ratio sweep equals brute force on 1000 landscapes", 10.0, check_ratio_search);
  r.check("outer loop convergence on 100 monotone landscapes", 30.0,
          check_outer_convergence);
  r.check("sparsity arithmetic", 5.0, check_sparsity_arithmetic);
  r.check("compaction forward equivalence", 60.0, check_compaction);
  r.check("bd-rate oracle agreement", 10.0, check_bd_rate);
  r.check("rd-loss gradients vs finite differences", 60.0, check_rd_gradients);
  std::printf("%d of 7 checks failed\n", r.failures);
  return r.failures;
}

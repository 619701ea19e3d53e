#include <torch/torch.h>

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lic/codec.hpp"
#include "prune/prune.hpp"
#include "util/csv.hpp"
#include "util/errors.hpp"

using namespace licprune;
namespace fs = std::filesystem;

namespace {

ImportanceScores fake_scores(std::vector<double> v, const std::string& id = "x") {
  ImportanceScores s;
  s.layer_id = id;
  s.scores = std::move(v);
  return s;
}

StructuredMask full_mask(ConvStage st) {
  StructuredMask m;
  m.layer_id = st->id();
  m.keep_out.assign(st->out_channels(), 1);
  m.keep_in.assign(st->in_channels(), 1);
  return m;
}

}  // namespace

TEST_CASE("keep floor: at least 5 percent, never below one channel") {
  CHECK(min_keep(1) == 1);
  CHECK(min_keep(3) == 1);
  CHECK(min_keep(20) == 1);
  CHECK(min_keep(21) == 2);
  CHECK(min_keep(32) == 2);
  CHECK(min_keep(64) == 4);
  CHECK(min_keep(100) == 5);
}

TEST_CASE("pruned count arithmetic floors and round-trips") {
  CHECK(pruned_count_for_ratio(64, 0.25) == 16);
  CHECK(pruned_count_for_ratio(64, 0.0) == 0);
  CHECK(pruned_count_for_ratio(10, 0.99) == 9);   // capped at the keep floor
  CHECK(pruned_count_for_ratio(64, 0.999) == 60);
  CHECK(max_prunable_count(64) == 60);
  CHECK(max_prunable_count(1) == 0);

  // ratios expressed as n/c recover n exactly for every feasible n
  for (int64_t c : {3, 10, 32, 48, 64, 100}) {
    for (int64_t n = 0; n <= max_prunable_count(c); ++n) {
      double kappa = static_cast<double>(n) / static_cast<double>(c);
      CHECK(pruned_count_for_ratio(c, kappa) == n);
    }
  }

  CHECK_THROWS_AS(pruned_count_for_ratio(64, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(pruned_count_for_ratio(64, -0.1), std::invalid_argument);
}

TEST_CASE("selection drops the lowest-scored channels") {
  auto zero = select_prune_sets(fake_scores({1, 2, 3}), fake_scores({4, 5}), 0.0, 0.0);
  CHECK(zero.keep_out == std::vector<uint8_t>{1, 1, 1});
  CHECK(zero.keep_in == std::vector<uint8_t>{1, 1});
  CHECK(zero.kept_out() == 3);

  torch::manual_seed(71);
  auto r = torch::rand({64}, torch::kFloat64);
  std::vector<double> sc(r.data_ptr<double>(), r.data_ptr<double>() + 64);
  auto m = select_prune_sets(fake_scores(sc), fake_scores({1.0, 2.0}), 0.25, 0.0);
  CHECK(m.kept_out() == 48);

  // brute-force oracle: sort (score, index), bottom 16 must be dropped
  std::vector<std::pair<double, int64_t>> order;
  for (int64_t i = 0; i < 64; ++i) order.push_back({sc[static_cast<size_t>(i)], i});
  std::sort(order.begin(), order.end());
  for (int64_t i = 0; i < 64; ++i) {
    bool should_drop = false;
    for (int64_t j = 0; j < 16; ++j)
      if (order[static_cast<size_t>(j)].second == i) should_drop = true;
    CHECK(m.keep_out[static_cast<size_t>(i)] == (should_drop ? 0 : 1));
  }

  // deterministic across repeated calls
  auto m2 = select_prune_sets(fake_scores(sc), fake_scores({1.0, 2.0}), 0.25, 0.0);
  CHECK(m.keep_out == m2.keep_out);

  // ties drop the lower index first
  auto tie = select_prune_sets(fake_scores({1, 1, 1, 1}), fake_scores({1, 1}), 0.5, 0.5);
  CHECK(tie.keep_out == std::vector<uint8_t>{0, 0, 1, 1});
  CHECK(tie.keep_in == std::vector<uint8_t>{0, 1});

  CHECK_THROWS_AS(select_prune_sets(fake_scores({}), fake_scores({1.0}), 0.0, 0.0),
                  std::invalid_argument);
}

TEST_CASE("single-layer sparsity: quarter pruning in both directions") {
  LayerSpec sp;
  sp.kind = LayerKind::Conv;
  sp.in_ch = 32;
  sp.out_ch = 64;
  sp.kernel = 3;
  sp.stride = 1;
  sp.padding = 1;
  sp.has_bias = false;
  ConvStage st("solo", sp);

  StructuredMask m = full_mask(st);
  for (int i = 0; i < 16; ++i) m.keep_out[static_cast<size_t>(i)] = 0;
  for (int i = 0; i < 8; ++i) m.keep_in[static_cast<size_t>(i)] = 0;

  auto rep = sparsity_of_stages({st}, {m});
  auto& ls = rep.per_layer.at("solo");
  CHECK(ls.weights_before == 18432);
  CHECK(ls.weights_after == 10368);  // 48 * 24 * 9
  CHECK(ls.kappa_out == 0.25);
  CHECK(ls.kappa_in == 0.25);
  CHECK(rep.sparsity == 1.0 - 10368.0 / 18432.0);  // exactly 43.75%
  CHECK(rep.sparsity == 0.4375);
}

TEST_CASE("model sparsity matches an elementwise zero-count oracle") {
  torch::manual_seed(73);
  auto model = CodecModel(CodecConfig::desk());
  CHECK(sparsity(model).sparsity == 0.0);

  std::vector<StructuredMask> masks;
  for (auto& id : {"g_a.0", "g_a.2", "g_s.1", "h_a.1"}) {
    auto st = model->stage(id);
    auto m = full_mask(st);
    auto drop_o = st->out_channels() / 4;
    for (int64_t i = 0; i < drop_o; ++i) m.keep_out[static_cast<size_t>(2 * i)] = 0;
    if (st->in_channels() > 8)
      for (int64_t i = 0; i < st->in_channels() / 8; ++i)
        m.keep_in[static_cast<size_t>(i)] = 0;
    masks.push_back(m);
  }
  apply_masks(model, masks);
  auto rep = sparsity(model);

  int64_t zeroed = 0;
  for (auto& id : model->prunable_ids()) {
    auto st = model->stage(id);
    auto w = st->effective_weight().detach();
    if (st->filter_dim() == 1) w = w.transpose(0, 1);
    zeroed += (w == 0).sum().item<int64_t>();
    if (st->spec().has_bias) zeroed += (st->effective_bias() == 0).sum().item<int64_t>();
  }
  // random weights are never exactly zero, so zeros == masked positions
  CHECK(rep.prunable_params_pruned == zeroed);
  CHECK(rep.sparsity > 0.0);

  int64_t total = 0;
  for (auto& p : model->parameters()) total += p.numel();
  CHECK(rep.model_params_total == total);
  CHECK(rep.model_params_after == total - zeroed);

  // growing a mask never decreases sparsity
  auto& grow = masks.front();
  int64_t flipped = 0;
  for (auto& v : grow.keep_out) {
    if (v && flipped < 2) {
      v = 0;
      ++flipped;
    }
  }
  apply_masks(model, {grow});
  CHECK(sparsity(model).sparsity > rep.sparsity);
}

TEST_CASE("mask application errors") {
  auto model = CodecModel(CodecConfig::desk());

  StructuredMask unknown;
  unknown.layer_id = "g_q.7";
  unknown.keep_out.assign(4, 1);
  unknown.keep_in.assign(4, 1);
  CHECK_THROWS_AS(apply_masks(model, {unknown}), StructuralError);

  // reconstruction output and entropy-parameter widths are off limits
  auto last = full_mask(model->stage("g_s.3"));
  CHECK_THROWS_AS(apply_masks(model, {last}), StructuralError);

  // keep floor: 1 of 32 kept is below min_keep(32) == 2
  auto floor_m = full_mask(model->stage("g_a.1"));
  for (size_t i = 1; i < floor_m.keep_out.size(); ++i) floor_m.keep_out[i] = 0;
  CHECK_THROWS_AS(apply_masks(model, {floor_m}), StructuralError);
}

TEST_CASE("masked forward equals a literal zero-weight copy") {
  torch::manual_seed(79);
  auto model = CodecModel(CodecConfig::desk());
  auto copy = CodecModel(model->clone_model());

  auto m1 = full_mask(model->stage("g_a.1"));
  for (int i : {1, 5, 9, 30}) m1.keep_out[static_cast<size_t>(i)] = 0;
  for (int i : {0, 7}) m1.keep_in[static_cast<size_t>(i)] = 0;
  auto m2 = full_mask(model->stage("g_s.1"));  // deconv
  for (int i : {2, 3}) m2.keep_out[static_cast<size_t>(i)] = 0;
  apply_masks(model, {m1, m2});

  {
    torch::NoGradGuard ng;
    auto st = copy->stage("g_a.1");
    for (int i : {1, 5, 9, 30}) {
      st->weight_.index_put_({i}, 0.0);
      st->bias_.index_put_({i}, 0.0);
    }
    for (int i : {0, 7}) st->weight_.index_put_({torch::indexing::Slice(), i}, 0.0);
    auto sd = copy->stage("g_s.1");  // deconv weight is (in, out, kh, kw)
    for (int i : {2, 3}) {
      sd->weight_.index_put_({torch::indexing::Slice(), i}, 0.0);
      sd->bias_.index_put_({i}, 0.0);
    }
  }

  auto x = torch::rand({2, 3, 64, 64});
  auto ym = model->forward(x, QuantMode::Round);
  auto yz = copy->forward(x, QuantMode::Round);
  CHECK((ym.x_hat - yz.x_hat).abs().max().item<float>() < 1e-6f);

  // idempotence: reapplying the same mask changes nothing
  apply_masks(model, {m1, m2});
  auto ym2 = model->forward(x, QuantMode::Round);
  CHECK(torch::equal(ym.x_hat, ym2.x_hat));

  clear_masks(model);
  auto yc = model->forward(x, QuantMode::Round);
  auto y0 = copy->forward(x, QuantMode::Round);  // copy has real zeros, skip
  (void)y0;
  CHECK(sparsity(model).sparsity == 0.0);
  CHECK((yc.x_hat - ym.x_hat).abs().max().item<float>() > 0.0f);  // masks mattered
}

TEST_CASE("masked positions stay zero through finetuning steps") {
  torch::manual_seed(83);
  auto model = CodecModel(CodecConfig::desk());
  auto st = model->stage("g_a.0");
  auto m = full_mask(st);
  m.keep_out[3] = 0;
  m.keep_out[12] = 0;
  apply_masks(model, {m});

  auto raw_before = st->weight_.index({3}).detach().clone();

  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(1e-3));
  for (int step = 0; step < 3; ++step) {
    opt.zero_grad();
    auto loss = model->rd_loss(torch::rand({2, 3, 64, 64}), 0.01, QuantMode::Noise);
    loss.total.backward();
    opt.step();
  }

  auto w = st->effective_weight().detach();
  CHECK(w.index({3}).abs().max().item<float>() == 0.0f);
  CHECK(w.index({12}).abs().max().item<float>() == 0.0f);
  // gradients to masked rows are cut, so even the raw storage holds still
  CHECK(torch::equal(st->weight_.index({3}).detach(), raw_before));
  // unmasked rows did move
  CHECK((w.index({0}).abs().max().item<float>()) > 0.0f);
}

TEST_CASE("compaction matches the masked view") {
  torch::manual_seed(89);
  auto model = CodecModel(CodecConfig::desk());

  std::vector<StructuredMask> masks;
  auto add = [&](const char* id, std::vector<int> drop_out, std::vector<int> drop_in) {
    auto m = full_mask(model->stage(id));
    for (int i : drop_out) m.keep_out[static_cast<size_t>(i)] = 0;
    for (int i : drop_in) m.keep_in[static_cast<size_t>(i)] = 0;
    masks.push_back(m);
  };
  add("g_a.0", {0, 9}, {});
  add("g_a.1", {1, 2, 3, 4, 5, 6, 7, 8}, {0, 9});
  add("g_a.3", {40, 41, 42, 43}, {30});
  add("g_s.0", {5, 6}, {40, 41, 42, 43});
  add("g_s.2", {11}, {});
  add("h_a.1", {20, 21, 22}, {});
  add("h_s.0", {17}, {2});
  apply_masks(model, masks);

  auto small = compact(model);
  CHECK(small->stage("g_a.1")->compact());
  CHECK(small->stage("g_a.1")->stored_out_channels() == 24);
  CHECK(small->stage("g_a.1")->stored_in_channels() == 30);
  CHECK(!small->stage("g_a.2")->compact());  // untouched stage stays dense

  for (int draw = 0; draw < 3; ++draw) {
    auto x = torch::rand({1, 3, 64, 64});
    auto ym = model->forward(x, QuantMode::Round);
    auto yc = small->forward(x, QuantMode::Round);
    CHECK((ym.x_hat - yc.x_hat).abs().max().item<float>() < 1e-5f);
    auto lm = model->rd_loss(x, 0.0067, QuantMode::Round);
    auto lc = small->rd_loss(x, 0.0067, QuantMode::Round);
    CHECK(lm.bpp.item<double>() == doctest::Approx(lc.bpp.item<double>()).epsilon(1e-4));
  }

  // physical storage shrank exactly by the per-layer kept counts
  auto rep = sparsity(model);
  int64_t compact_prunable = 0;
  for (auto& id : small->prunable_ids()) {
    auto st = small->stage(id);
    compact_prunable += st->weight_.numel();
    if (st->spec().has_bias) compact_prunable += st->bias_.numel();
  }
  CHECK(compact_prunable == rep.prunable_params_total - rep.prunable_params_pruned);

  // compacting an already-compact model is refused
  CHECK_THROWS_AS(compact(small), StateError);
}

TEST_CASE("pruning plan serializes and prints") {
  PruningPlan p;
  p.layers["g_a.0"] = {0.25, 0.0};
  p.layers["g_a.1"] = {0.25, 0.125};
  p.criterion = Criterion::Chip;
  p.provenance = PlanProvenance::Searched;
  p.s_target = 0.3;

  auto j = p.to_json();
  auto q = PruningPlan::from_json(j);
  CHECK(q.layers.size() == 2);
  CHECK(q.layers.at("g_a.1").kappa_out == 0.25);
  CHECK(q.layers.at("g_a.1").kappa_in == 0.125);
  CHECK(q.criterion == Criterion::Chip);
  CHECK(q.provenance == PlanProvenance::Searched);
  CHECK(q.s_target == 0.3);

  auto text = p.to_text();
  CHECK(text.find("chip") != std::string::npos);
  CHECK(text.find("g_a.1") != std::string::npos);
}

TEST_CASE("build_masks realizes plan ratios through the criterion") {
  torch::manual_seed(97);
  auto model = CodecModel(CodecConfig::desk());
  PruningPlan plan;
  plan.criterion = Criterion::L2;
  plan.layers["g_a.1"] = {0.25, 0.125};
  plan.layers["g_s.0"] = {0.25, 0.0};

  CalibrationSet calib;  // l2 reads weights only
  auto masks = build_masks(model, plan, calib);
  REQUIRE(masks.size() == 2);
  for (auto& m : masks) {
    auto st = model->stage(m.layer_id);
    auto want_out = pruned_count_for_ratio(st->out_channels(),
                                           plan.layers.at(m.layer_id).kappa_out);
    auto want_in = pruned_count_for_ratio(st->in_channels(),
                                          plan.layers.at(m.layer_id).kappa_in);
    CHECK(st->out_channels() - m.kept_out() == want_out);
    CHECK(st->in_channels() - m.kept_in() == want_in);
  }

  // cross-check one mask against direct selection
  auto st = model->stage("g_a.1");
  auto so = l2_importance(st->weight_.detach(), Direction::OutputMaps, "g_a.1");
  auto si = l2_importance(st->weight_.detach(), Direction::InputMaps, "g_a.1");
  auto direct = select_prune_sets(so, si, 0.25, 0.125);
  for (auto& m : masks)
    if (m.layer_id == "g_a.1") {
      CHECK(m.keep_out == direct.keep_out);
      CHECK(m.keep_in == direct.keep_in);
    }

  PruningPlan bad = plan;
  bad.layers["h_s.2"] = {0.25, 0.0};
  CHECK_THROWS_AS(build_masks(model, bad, calib), StructuralError);
}

TEST_CASE("sparsity report round-trips through csv") {
  LayerSpec sp;
  sp.in_ch = 8;
  sp.out_ch = 16;
  sp.kernel = 3;
  ConvStage st("a", sp);
  auto m = full_mask(st);
  m.keep_out[0] = 0;
  auto rep = sparsity_of_stages({st}, {m});

  auto path = fs::temp_directory_path() / "licprune_pruner_tests" / "sparsity.csv";
  fs::create_directories(path.parent_path());
  rep.write_csv(path);
  auto rows = read_csv(path);
  REQUIRE(rows.size() == 3);  // header, layer, total
  CHECK(rows[1][0] == "a");
  CHECK(std::stoll(rows[1][1]) == rep.per_layer.at("a").params_before);
  CHECK(rows[2][0] == "total");
}

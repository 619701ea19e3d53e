#include "nas/nas.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "util/errors.hpp"
#include "util/rng.hpp"

namespace licprune {

void SearchConfig::validate() const {
  if (alpha_init <= 0) throw std::invalid_argument("alpha_init must be positive");
  if (delta <= 0) throw std::invalid_argument("delta must be positive");
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  if (s_target <= 0 || s_target >= 1)
    throw std::invalid_argument("s_target must be inside (0,1)");
  if (max_outer_iters < 1) throw std::invalid_argument("max_outer_iters must be >= 1");
  if (finetune_steps < 0 || finetune_batch < 1 || finetune_lr < 0)
    throw std::invalid_argument("bad finetune settings");
}

nlohmann::json SearchConfig::to_json() const {
  return {{"alpha_init", alpha_init},
          {"delta", delta},
          {"group_size", group_size},
          {"s_target", s_target},
          {"criterion", to_string(criterion)},
          {"max_outer_iters", max_outer_iters},
          {"seed", seed},
          {"finetune_steps", finetune_steps},
          {"finetune_lr", finetune_lr},
          {"finetune_batch", finetune_batch}};
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j) {
  return from_json(j, SearchConfig());
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j, SearchConfig base) {
  SearchConfig c = base;
  c.alpha_init = j.value("alpha_init", c.alpha_init);
  c.delta = j.value("delta", c.delta);
  c.group_size = j.value("group_size", c.group_size);
  c.s_target = j.value("s_target", c.s_target);
  if (j.contains("criterion")) c.criterion = parse_criterion(j.at("criterion"));
  c.max_outer_iters = j.value("max_outer_iters", c.max_outer_iters);
  c.seed = j.value("seed", c.seed);
  c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
  c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
  c.finetune_batch = j.value("finetune_batch", c.finetune_batch);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// production evaluator
// ---------------------------------------------------------------------------

CodecDeltaRdEvaluator::CodecDeltaRdEvaluator(CodecModel model, Data data, double lambda,
                                             const SearchConfig& cfg,
                                             const CalibrationSet& criteria_calib)
    : model_(model), data_(std::move(data)), lambda_(lambda), cfg_(cfg),
      criteria_calib_(criteria_calib) {
  cfg_.validate();
  if (data_.eval_batches.empty())
    throw std::invalid_argument("evaluator needs eval batches");
  if (cfg_.finetune_steps > 0 && data_.train_batches.empty())
    throw std::invalid_argument("evaluator needs train batches when finetuning");
}

double CodecDeltaRdEvaluator::eval_loss(CodecModel m) {
  torch::NoGradGuard ng;
  double sum = 0;
  for (auto& b : data_.eval_batches)
    sum += m->rd_loss(b, lambda_, QuantMode::Round).total.item<double>();
  return sum / static_cast<double>(data_.eval_batches.size());
}

namespace {

void short_finetune(CodecModel m, const std::vector<torch::Tensor>& batches,
                    double lambda, int64_t steps, double lr) {
  if (steps <= 0) return;
  torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(lr));
  for (int64_t s = 0; s < steps; ++s) {
    auto& b = batches[static_cast<size_t>(s) % batches.size()];
    opt.zero_grad();
    auto loss = m->rd_loss(b, lambda, QuantMode::Noise);
    loss.total.backward();
    opt.step();
  }
}

}  // namespace

void CodecDeltaRdEvaluator::compute_baseline() {
  // the baseline gets the same short finetune as every candidate, so deltas
  // isolate the structural change rather than the extra training steps
  torch::manual_seed(derive_seed(cfg_.seed, "baseline"));
  auto clone = CodecModel(model_->clone_model());
  short_finetune(clone, data_.train_batches, lambda_, cfg_.finetune_steps,
                 cfg_.finetune_lr);
  baseline_ = eval_loss(clone);
}

double CodecDeltaRdEvaluator::baseline_loss() const {
  if (!baseline_) throw StateError("baseline loss not computed yet");
  return *baseline_;
}

const std::vector<int64_t>& CodecDeltaRdEvaluator::ranking(const std::string& layer_id,
                                                           Direction dir) {
  auto key = layer_id + "|" + to_string(dir);
  auto it = rankings_.find(key);
  if (it != rankings_.end()) return it->second;
  auto scores = compute_importance(model_, layer_id, dir, cfg_.criterion, criteria_calib_);
  auto order = rank_channels(scores);
  return rankings_.emplace(key, std::move(order)).first->second;
}

double CodecDeltaRdEvaluator::delta_rd(const std::string& layer_id, Direction dir,
                                       int64_t out_count_applied, int64_t count) {
  if (!baseline_) throw StateError("baseline loss not computed yet");
  auto st = model_->stage(layer_id);
  const int64_t c_dir =
      dir == Direction::OutputMaps ? st->out_channels() : st->in_channels();
  if (count < 0 || count > max_prunable_count(c_dir))
    throw std::invalid_argument("pruned count " + std::to_string(count) +
                                " out of range for " + layer_id);
  if (out_count_applied < 0 || out_count_applied > max_prunable_count(st->out_channels()))
    throw std::invalid_argument("applied output count out of range for " + layer_id);

  std::ostringstream key;
  key << layer_id << '|' << to_string(dir) << '|' << out_count_applied << '|' << count;
  if (auto it = cache_.find(key.str()); it != cache_.end()) {
    ++cache_hits_;
    return it->second;
  }

  StructuredMask m;
  m.layer_id = layer_id;
  m.keep_out.assign(static_cast<size_t>(st->out_channels()), 1);
  m.keep_in.assign(static_cast<size_t>(st->in_channels()), 1);
  const auto& out_rank = ranking(layer_id, Direction::OutputMaps);
  int64_t drop_out = dir == Direction::OutputMaps ? count : out_count_applied;
  for (int64_t i = 0; i < drop_out; ++i)
    m.keep_out[static_cast<size_t>(out_rank[static_cast<size_t>(i)])] = 0;
  if (dir == Direction::InputMaps) {
    const auto& in_rank = ranking(layer_id, Direction::InputMaps);
    for (int64_t i = 0; i < count; ++i)
      m.keep_in[static_cast<size_t>(in_rank[static_cast<size_t>(i)])] = 0;
  }

  torch::manual_seed(derive_seed(cfg_.seed, key.str()));
  auto clone = CodecModel(model_->clone_model());
  apply_masks(clone, {m});
  short_finetune(clone, data_.train_batches, lambda_, cfg_.finetune_steps,
                 cfg_.finetune_lr);
  double lp = eval_loss(clone);
  double delta = (lp - *baseline_) / *baseline_;
  cache_[key.str()] = delta;
  ++measurements_;
  return delta;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

LayerSearchResult layer_ratio_search(CodecModel model, const std::string& layer_id,
                                     Direction dir, double alpha,
                                     const SearchConfig& cfg, DeltaRdEvaluator& eval,
                                     int64_t out_count_applied) {
  cfg.validate();
  auto st = model->stage(layer_id);
  const int64_t c =
      dir == Direction::OutputMaps ? st->out_channels() : st->in_channels();
  LayerSearchResult r;
  r.layer_id = layer_id;
  r.direction = dir;
  const int64_t cap = max_prunable_count(c);
  for (int64_t n = cfg.group_size; n <= cap; n += cfg.group_size) {
    double d = eval.delta_rd(layer_id, dir, out_count_applied, n);
    r.tested.emplace_back(n, d);
    if (d <= alpha) r.chosen_count = n;  // keep the largest qualifying count
  }
  r.chosen_ratio = c > 0 ? static_cast<double>(r.chosen_count) / static_cast<double>(c) : 0.0;
  return r;
}

std::pair<PruningPlan, double> assign_ratios(CodecModel model, double alpha,
                                             const SearchConfig& cfg,
                                             DeltaRdEvaluator& eval) {
  PruningPlan plan;
  plan.criterion = cfg.criterion;
  plan.provenance = PlanProvenance::Searched;
  plan.s_target = cfg.s_target;
  for (auto& id : model->prunable_ids()) {
    auto out_res = layer_ratio_search(model, id, Direction::OutputMaps, alpha, cfg, eval, 0);
    auto in_res = layer_ratio_search(model, id, Direction::InputMaps, alpha, cfg, eval,
                                     out_res.chosen_count);
    plan.layers[id] = {out_res.chosen_ratio, in_res.chosen_ratio};
  }
  return {plan, plan_sparsity(model, plan, eval)};
}

std::vector<StructuredMask> plan_masks(CodecModel model, const PruningPlan& plan,
                                       DeltaRdEvaluator& eval) {
  std::vector<StructuredMask> masks;
  for (auto& [id, r] : plan.layers) {
    auto st = model->stage(id);
    StructuredMask m;
    m.layer_id = id;
    m.keep_out.assign(static_cast<size_t>(st->out_channels()), 1);
    m.keep_in.assign(static_cast<size_t>(st->in_channels()), 1);
    int64_t n_out = pruned_count_for_ratio(st->out_channels(), r.kappa_out);
    int64_t n_in = pruned_count_for_ratio(st->in_channels(), r.kappa_in);
    const auto& ro = eval.ranking(id, Direction::OutputMaps);
    for (int64_t i = 0; i < n_out; ++i)
      m.keep_out[static_cast<size_t>(ro[static_cast<size_t>(i)])] = 0;
    if (n_in > 0) {
      const auto& ri = eval.ranking(id, Direction::InputMaps);
      for (int64_t i = 0; i < n_in; ++i)
        m.keep_in[static_cast<size_t>(ri[static_cast<size_t>(i)])] = 0;
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

double plan_sparsity(CodecModel model, const PruningPlan& plan, DeltaRdEvaluator& eval) {
  auto masks = plan_masks(model, plan, eval);
  std::vector<ConvStage> stages;
  for (auto& id : model->prunable_ids()) stages.push_back(model->stage(id));
  return sparsity_of_stages(stages, masks).sparsity;
}

double adaptive_step(double alpha, double achieved_s, double s_target,
                     const std::vector<std::pair<double, double>>& history) {
  (void)alpha;
  (void)achieved_s;
  double lo = -1, hi = -1;  // below-target / above-target alphas
  double amax = 0, amin = std::numeric_limits<double>::infinity();
  bool any_above = false;
  for (auto& [a, s] : history) {
    amax = std::max(amax, a);
    amin = std::min(amin, a);
    if (s > s_target) {
      any_above = true;
      if (hi < 0 || a < hi) hi = a;
    } else {
      if (a > lo) lo = a;
    }
  }
  if (lo >= 0 && hi >= 0) return 0.5 * (lo + hi);
  if (!any_above) return amax * 2.0;
  return amin * 0.5;
}

nlohmann::json SearchTrace::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (auto& it : iters)
    arr.push_back({{"alpha", it.alpha},
                   {"achieved_s", it.achieved_s},
                   {"plan", it.plan.to_json()}});
  return {{"iters", arr}, {"converged", converged}};
}

std::string SearchTrace::to_text() const {
  std::ostringstream os;
  for (size_t i = 0; i < iters.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "iter=%zu alpha=%.8g S=%.6f\n", i + 1,
                  iters[i].alpha, iters[i].achieved_s);
    os << buf;
  }
  os << "terminated=" << (converged ? "converged" : "max_iters") << "\n";
  return os.str();
}

OuterSearchResult alpha_outer_search(const RatioAssigner& assign, const SearchConfig& cfg) {
  cfg.validate();
  OuterSearchResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  SearchTrace trace;
  std::vector<std::pair<double, double>> history;
  double alpha = cfg.alpha_init;
  for (int64_t it = 0; it < cfg.max_outer_iters; ++it) {
    auto [plan, s] = assign(alpha);
    trace.iters.push_back({alpha, s, plan});
    history.emplace_back(alpha, s);
    double gap = std::abs(s - cfg.s_target);
    if (gap < best_gap) {
      best_gap = gap;
      best.plan = plan;
      best.achieved_s = s;
    }
    if (gap <= cfg.delta) {
      trace.converged = true;
      best.plan = plan;
      best.achieved_s = s;
      best.trace = trace;
      return best;
    }
    alpha = adaptive_step(alpha, s, cfg.s_target, history);
  }
  trace.converged = false;
  best.trace = trace;
  return best;
}

OuterSearchResult alpha_outer_search(CodecModel model, const SearchConfig& cfg,
                                     DeltaRdEvaluator& eval) {
  return alpha_outer_search(
      [&](double a) { return assign_ratios(model, a, cfg, eval); }, cfg);
}

PruningPlan make_fixed_plan(CodecModel model, double s_target, bool filters_only,
                            Criterion crit) {
  if (s_target <= 0 || s_target >= 1)
    throw std::invalid_argument("s_target must be inside (0,1)");
  PruningPlan plan;
  plan.criterion = crit;
  plan.provenance = PlanProvenance::Fixed;
  plan.s_target = s_target;

  struct Dims {
    std::string id;
    int64_t co, ci, k2;
    bool bias;
  };
  std::vector<Dims> dims;
  for (auto& id : model->prunable_ids()) {
    auto st = model->stage(id);
    dims.push_back({id, st->out_channels(), st->in_channels(),
                    st->spec().kernel * st->spec().kernel, st->spec().has_bias});
  }
  auto realized = [&](double k) {
    int64_t total = 0, pruned = 0;
    for (auto& d : dims) {
      int64_t no = pruned_count_for_ratio(d.co, k);
      int64_t ni = filters_only ? 0 : pruned_count_for_ratio(d.ci, k);
      int64_t before = d.co * d.ci * d.k2 + (d.bias ? d.co : 0);
      int64_t after = (d.co - no) * (d.ci - ni) * d.k2 + (d.bias ? d.co - no : 0);
      total += before;
      pruned += before - after;
    }
    return total > 0 ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
  };

  double base = filters_only ? s_target : 1.0 - std::sqrt(1.0 - s_target);
  double best_k = base, best_gap = std::abs(realized(base) - s_target);
  for (int i = -80; i <= 80; ++i) {
    double k = base + 0.001 * i;
    if (k <= 0 || k >= 1) continue;
    double gap = std::abs(realized(k) - s_target);
    if (gap < best_gap - 1e-12 || (gap < best_gap + 1e-12 && k < best_k)) {
      best_gap = gap;
      best_k = k;
    }
  }
  for (auto& d : dims)
    plan.layers[d.id] = {best_k, filters_only ? 0.0 : best_k};
  return plan;
}

}  // namespace licprune

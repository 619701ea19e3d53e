#include "prune/prune.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "util/csv.hpp"
#include "util/errors.hpp"

namespace licprune {

int64_t min_keep(int64_t channels) {
  return std::max<int64_t>(1, static_cast<int64_t>(std::ceil(0.05 * static_cast<double>(channels))));
}

int64_t pruned_count_for_ratio(int64_t channels, double kappa) {
  if (kappa < 0.0 || kappa >= 1.0)
    throw std::invalid_argument("prune ratio must be in [0,1), got " + std::to_string(kappa));
  // tiny nudge so ratios built as n/c floor back to exactly n
  auto n = static_cast<int64_t>(std::floor(kappa * static_cast<double>(channels) + 1e-9));
  return std::min(n, max_prunable_count(channels));
}

int64_t max_prunable_count(int64_t channels) {
  return std::max<int64_t>(0, channels - min_keep(channels));
}

int64_t StructuredMask::kept_out() const {
  return std::count_if(keep_out.begin(), keep_out.end(), [](uint8_t v) { return v != 0; });
}

int64_t StructuredMask::kept_in() const {
  return std::count_if(keep_in.begin(), keep_in.end(), [](uint8_t v) { return v != 0; });
}

nlohmann::json PruningPlan::to_json() const {
  nlohmann::json layers_j = nlohmann::json::object();
  for (auto& [id, r] : layers)
    layers_j[id] = {{"kappa_out", r.kappa_out}, {"kappa_in", r.kappa_in}};
  return {{"layers", layers_j},
          {"criterion", to_string(criterion)},
          {"provenance", provenance == PlanProvenance::Fixed ? "fixed" : "searched"},
          {"s_target", s_target}};
}

PruningPlan PruningPlan::from_json(const nlohmann::json& j) {
  PruningPlan p;
  p.criterion = parse_criterion(j.at("criterion").get<std::string>());
  auto prov = j.at("provenance").get<std::string>();
  if (prov == "fixed") p.provenance = PlanProvenance::Fixed;
  else if (prov == "searched") p.provenance = PlanProvenance::Searched;
  else throw std::invalid_argument("unknown plan provenance: " + prov);
  p.s_target = j.value("s_target", 0.0);
  for (auto& [id, r] : j.at("layers").items())
    p.layers[id] = {r.at("kappa_out").get<double>(), r.at("kappa_in").get<double>()};
  return p;
}

std::string PruningPlan::to_text() const {
  std::ostringstream os;
  os << "pruning plan (" << (provenance == PlanProvenance::Fixed ? "fixed" : "searched")
     << ", criterion=" << to_string(criterion) << ", s_target=" << s_target << ")\n";
  os << "layer        kappa_out  kappa_in\n";
  for (auto& [id, r] : layers) {
    os << id;
    for (size_t i = id.size(); i < 13; ++i) os << ' ';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%9.4f %9.4f\n", r.kappa_out, r.kappa_in);
    os << buf;
  }
  return os.str();
}

StructuredMask select_prune_sets(const ImportanceScores& out_scores,
                                 const ImportanceScores& in_scores, double kappa_out,
                                 double kappa_in) {
  StructuredMask m;
  m.layer_id = out_scores.layer_id.empty() ? in_scores.layer_id : out_scores.layer_id;
  auto build = [](const ImportanceScores& s, double kappa) {
    const auto c = static_cast<int64_t>(s.scores.size());
    if (c == 0) throw std::invalid_argument("empty score vector in channel selection");
    std::vector<uint8_t> keep(c, 1);
    auto n = pruned_count_for_ratio(c, kappa);
    auto order = rank_channels(s);
    for (int64_t i = 0; i < n; ++i) keep[static_cast<size_t>(order[i])] = 0;
    return keep;
  };
  m.keep_out = build(out_scores, kappa_out);
  m.keep_in = build(in_scores, kappa_in);
  return m;
}

void apply_masks(CodecModel model, const std::vector<StructuredMask>& masks) {
  for (auto& m : masks) {
    if (!model->is_prunable(m.layer_id)) {
      std::string allowed;
      for (auto& id : model->prunable_ids()) allowed += (allowed.empty() ? "" : ", ") + id;
      throw StructuralError("layer is not prunable: '" + m.layer_id +
                            "' (prunable: " + allowed + ")");
    }
    auto st = model->stage(m.layer_id);
    if (m.kept_out() < min_keep(st->out_channels()) ||
        m.kept_in() < min_keep(st->in_channels()))
      throw StructuralError("mask for " + m.layer_id + " violates the keep floor");
    st->set_mask(m.keep_out, m.keep_in);
  }
}

void clear_masks(CodecModel model) {
  for (auto& id : model->stage_ids()) model->stage(id)->clear_mask();
}

std::vector<StructuredMask> build_masks(CodecModel model, const PruningPlan& plan,
                                        const CalibrationSet& calib) {
  std::vector<StructuredMask> out;
  for (auto& [id, r] : plan.layers) {
    if (!model->is_prunable(id))
      throw StructuralError("plan names a non-prunable layer: '" + id + "'");
    auto so = compute_importance(model, id, Direction::OutputMaps, plan.criterion, calib);
    auto si = compute_importance(model, id, Direction::InputMaps, plan.criterion, calib);
    out.push_back(select_prune_sets(so, si, r.kappa_out, r.kappa_in));
  }
  return out;
}

namespace {

LayerSparsity stage_sparsity(const ConvStage& st, const std::vector<uint8_t>& keep_out,
                             const std::vector<uint8_t>& keep_in) {
  LayerSparsity ls;
  const auto& sp = st->spec();
  const int64_t k2 = sp.kernel * sp.kernel;
  const auto co = static_cast<int64_t>(keep_out.size());
  const auto ci = static_cast<int64_t>(keep_in.size());
  int64_t ko = std::count_if(keep_out.begin(), keep_out.end(), [](uint8_t v) { return v != 0; });
  int64_t ki = std::count_if(keep_in.begin(), keep_in.end(), [](uint8_t v) { return v != 0; });
  ls.weights_before = co * ci * k2;
  ls.weights_after = ko * ki * k2;
  ls.params_before = ls.weights_before + (sp.has_bias ? co : 0);
  ls.params_after = ls.weights_after + (sp.has_bias ? ko : 0);
  ls.kappa_out = co > 0 ? 1.0 - static_cast<double>(ko) / static_cast<double>(co) : 0.0;
  ls.kappa_in = ci > 0 ? 1.0 - static_cast<double>(ki) / static_cast<double>(ci) : 0.0;
  return ls;
}

int64_t count_params(const torch::nn::Module& m) {
  int64_t n = 0;
  for (auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace

SparsityReport sparsity_of_stages(const std::vector<ConvStage>& stages,
                                  const std::vector<StructuredMask>& masks) {
  SparsityReport r;
  for (auto& st : stages) {
    const StructuredMask* m = nullptr;
    for (auto& cand : masks)
      if (cand.layer_id == st->id()) m = &cand;
    std::vector<uint8_t> ko(st->out_channels(), 1), ki(st->in_channels(), 1);
    if (m) {
      ko = m->keep_out;
      ki = m->keep_in;
    }
    auto ls = stage_sparsity(st, ko, ki);
    r.per_layer[st->id()] = ls;
    r.prunable_params_total += ls.params_before;
    r.prunable_params_pruned += ls.params_before - ls.params_after;
  }
  r.sparsity = r.prunable_params_total > 0
                   ? static_cast<double>(r.prunable_params_pruned) /
                         static_cast<double>(r.prunable_params_total)
                   : 0.0;
  return r;
}

SparsityReport sparsity(CodecModel model) {
  SparsityReport r;
  for (auto& id : model->prunable_ids()) {
    auto st = model->stage(id);
    auto ls = stage_sparsity(st, st->keep_out_vec(), st->keep_in_vec());
    r.per_layer[id] = ls;
    r.prunable_params_total += ls.params_before;
    r.prunable_params_pruned += ls.params_before - ls.params_after;
  }
  r.sparsity = r.prunable_params_total > 0
                   ? static_cast<double>(r.prunable_params_pruned) /
                         static_cast<double>(r.prunable_params_total)
                   : 0.0;
  r.model_params_total = count_params(*model);
  r.model_params_after = r.model_params_total - r.prunable_params_pruned;
  return r;
}

void SparsityReport::write_csv(const std::filesystem::path& path) const {
  CsvWriter w(path);
  w.row({"layer", "params_before", "params_after", "kappa_out", "kappa_in"});
  for (auto& [id, ls] : per_layer)
    w.row({id, std::to_string(ls.params_before), std::to_string(ls.params_after),
           fmt_double(ls.kappa_out, 6), fmt_double(ls.kappa_in, 6)});
  w.row({"total", std::to_string(prunable_params_total),
         std::to_string(prunable_params_total - prunable_params_pruned),
         fmt_double(sparsity, 6), ""});
}

CodecModel compact(CodecModel model) {
  CodecModel out(model->clone_model());
  for (auto& id : out->stage_ids()) {
    auto st = out->stage(id);
    if (st->compact())
      throw StateError("model is already compact (stage " + id + ")");
    if (!st->masked()) continue;  // dense stage, storage unchanged

    auto ko = st->keep_out_vec();
    auto ki = st->keep_in_vec();
    std::vector<int64_t> oi, ii;
    for (size_t i = 0; i < ko.size(); ++i)
      if (ko[i]) oi.push_back(static_cast<int64_t>(i));
    for (size_t i = 0; i < ki.size(); ++i)
      if (ki[i]) ii.push_back(static_cast<int64_t>(i));

    // carry learned quant state across the rebuild
    bool had_quant = st->quant_attached();
    int64_t wb = 0, ab = 0;
    torch::Tensor ws, wz, bqs, bqz, gqs, gqz;
    if (had_quant) {
      wb = st->weight_quant()->bits_;
      ab = st->act_bits();
      auto oi_t = torch::tensor(oi, torch::kLong);
      ws = st->weight_quant()->scale_.detach().index_select(0, oi_t).clone();
      wz = st->weight_quant()->zero_.detach().index_select(0, oi_t).clone();
      auto g = st->gdn();
      if (!g.is_empty() && g->quant_attached()) {
        bqs = g->beta_quant->scale_.detach().clone();
        bqz = g->beta_quant->zero_.detach().clone();
        gqs = g->gamma_quant->scale_.detach().clone();
        gqz = g->gamma_quant->zero_.detach().clone();
      }
      st->detach_quant();
    }
    st->make_compact(oi, ii);
    if (had_quant) {
      st->attach_quant(wb, ab);
      torch::NoGradGuard ng;
      st->weight_quant()->scale_.copy_(ws);
      st->weight_quant()->zero_.copy_(wz);
      auto g = st->gdn();
      if (!g.is_empty() && g->quant_attached() && bqs.defined()) {
        g->beta_quant->scale_.copy_(bqs);
        g->beta_quant->zero_.copy_(bqz);
        g->gamma_quant->scale_.copy_(gqs);
        g->gamma_quant->zero_.copy_(gqz);
      }
    }
  }
  return out;
}

}  // namespace licprune

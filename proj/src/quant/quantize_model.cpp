#include "quant/quantize_model.hpp"

#include <sstream>

#include "util/errors.hpp"

namespace licprune {

void attach_quantization(CodecModel model, int64_t weight_bits, int64_t act_bits) {
  for (auto& id : model->stage_ids())
    model->stage(id)->attach_quant(weight_bits, act_bits);
}

void detach_quantization(CodecModel model) {
  for (auto& id : model->stage_ids()) model->stage(id)->detach_quant();
}

bool quantization_attached(CodecModel model) {
  for (auto& id : model->stage_ids())
    if (model->stage(id)->quant_attached()) return true;
  return false;
}

void set_quantization_enabled(CodecModel model, bool on) {
  for (auto& id : model->stage_ids()) model->stage(id)->set_quant_enabled(on);
}

SizeReport model_size_bytes(CodecModel model) {
  SizeReport r;
  nlohmann::json parts = nlohmann::json::object();
  int64_t total = 0, base = 0;

  for (auto& id : model->stage_ids()) {
    auto st = model->stage(id);
    const auto& sp = st->spec();
    const int64_t k2 = sp.kernel * sp.kernel;
    auto ko_v = st->keep_out_vec();
    auto ki_v = st->keep_in_vec();
    int64_t ko = 0, ki = 0;
    for (auto v : ko_v) ko += v != 0;
    for (auto v : ki_v) ki += v != 0;

    int64_t layer_bytes = 0;
    const int64_t kept_w = ko * ki * k2;
    if (st->quant_attached()) {
      auto bits = st->weight_quant()->bits_;
      layer_bytes += (kept_w * bits + 7) / 8;  // packed integer weights
      layer_bytes += ko * 8;                   // (scale, zero) per kept filter
    } else {
      layer_bytes += kept_w * 4;
    }
    if (sp.has_bias) layer_bytes += ko * 4;

    auto g = st->gdn();
    if (!g.is_empty()) {
      const int64_t gp = ko * ko + ko;  // gamma + beta on kept channels
      if (g->quant_attached()) {
        layer_bytes += (gp * g->beta_quant->bits_ + 7) / 8;
        layer_bytes += 2 * 8;  // per-tensor (scale, zero) for beta and gamma
      } else {
        layer_bytes += gp * 4;
      }
    }
    parts[id] = layer_bytes;
    total += layer_bytes;

    int64_t layer_base = sp.out_ch * sp.in_ch * k2 * 4 + (sp.has_bias ? sp.out_ch * 4 : 0);
    if (!g.is_empty()) layer_base += (sp.out_ch * sp.out_ch + sp.out_ch) * 4;
    base += layer_base;
  }

  int64_t prior_params = 0;
  for (auto& p : model->z_prior_->parameters()) prior_params += p.numel();
  parts["z_prior"] = prior_params * 4;
  total += prior_params * 4;
  base += prior_params * 4;

  r.bytes = total;
  r.baseline_bytes = base;
  r.compression_ratio = total > 0 ? static_cast<double>(base) / static_cast<double>(total) : 0;
  r.breakdown = parts;
  return r;
}

std::string SizeReport::to_text() const {
  std::ostringstream os;
  os << "model bytes:    " << bytes << " (" << static_cast<double>(bytes) / 1e6 << " MB)\n";
  os << "baseline bytes: " << baseline_bytes << " ("
     << static_cast<double>(baseline_bytes) / 1e6 << " MB)\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "ratio:          %.3fx\n", compression_ratio);
  os << buf;
  return os.str();
}

}  // namespace licprune

#include "lic/codec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lic/ops.hpp"
#include "util/errors.hpp"

namespace licprune {

// ---------------------------------------------------------------------------
// latent quantization
// ---------------------------------------------------------------------------

QuantMode parse_quant_mode(const std::string& s) {
  if (s == "train") return QuantMode::Noise;
  if (s == "eval") return QuantMode::Round;
  if (s == "identity") return QuantMode::Identity;
  throw std::invalid_argument("unknown quantization mode: '" + s +
                              "' (expected train|eval|identity)");
}

std::string to_string(QuantMode m) {
  switch (m) {
    case QuantMode::Noise: return "train";
    case QuantMode::Round: return "eval";
    case QuantMode::Identity: return "identity";
  }
  return "?";
}

torch::Tensor quantize_latent(const torch::Tensor& y, const torch::Tensor& mu,
                              QuantMode mode) {
  switch (mode) {
    case QuantMode::Noise:
      return y + torch::empty_like(y).uniform_(-0.5, 0.5);
    case QuantMode::Round: {
      if (mu.defined()) return torch::round(y - mu) + mu;
      return torch::round(y);
    }
    case QuantMode::Identity:
      return y;
  }
  throw std::invalid_argument("unknown quantization mode");
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

CodecConfig CodecConfig::desk() {
  CodecConfig c;
  c.preset = "desk";
  c.n_channels = 32;
  c.m_channels = 48;
  return c;
}

CodecConfig CodecConfig::paper_like() {
  CodecConfig c;
  c.preset = "paper_like";
  c.n_channels = 128;
  c.m_channels = 192;
  return c;
}

CodecConfig CodecConfig::named(const std::string& preset) {
  if (preset == "desk") return desk();
  if (preset == "paper_like") return paper_like();
  throw std::invalid_argument("unknown codec preset: '" + preset + "'");
}

void CodecConfig::validate() const {
  if (n_channels < 1 || m_channels < 1 || input_channels < 1)
    throw std::invalid_argument("codec widths must be positive");
}

std::vector<std::pair<std::string, LayerSpec>> CodecConfig::layer_specs() const {
  validate();
  const int64_t N = n_channels, M = m_channels, C = input_channels;
  std::vector<std::pair<std::string, LayerSpec>> out;
  auto conv = [](Nonlin a, int64_t ci, int64_t co, int64_t k, int64_t s, int64_t p) {
    return LayerSpec{LayerKind::Conv, a, ci, co, k, s, p, 0, true};
  };
  auto deconv = [](Nonlin a, int64_t ci, int64_t co, int64_t k, int64_t s, int64_t p,
                   int64_t op) {
    return LayerSpec{LayerKind::Deconv, a, ci, co, k, s, p, op, true};
  };
  // analysis: four stride-2 5x5 convs, GDN between
  out.emplace_back("g_a.0", conv(Nonlin::Gdn, C, N, 5, 2, 2));
  out.emplace_back("g_a.1", conv(Nonlin::Gdn, N, N, 5, 2, 2));
  out.emplace_back("g_a.2", conv(Nonlin::Gdn, N, N, 5, 2, 2));
  out.emplace_back("g_a.3", conv(Nonlin::None, N, M, 5, 2, 2));
  // hyper analysis
  out.emplace_back("h_a.0", conv(Nonlin::Relu, M, N, 3, 1, 1));
  out.emplace_back("h_a.1", conv(Nonlin::Relu, N, N, 5, 2, 2));
  out.emplace_back("h_a.2", conv(Nonlin::None, N, N, 5, 2, 2));
  // hyper synthesis, ends in the (mu, sigma) head
  out.emplace_back("h_s.0", deconv(Nonlin::Relu, N, N, 5, 2, 2, 1));
  out.emplace_back("h_s.1", deconv(Nonlin::Relu, N, N, 5, 2, 2, 1));
  out.emplace_back("h_s.2", conv(Nonlin::None, N, 2 * M, 3, 1, 1));
  // synthesis mirrors the analysis
  out.emplace_back("g_s.0", deconv(Nonlin::Igdn, M, N, 5, 2, 2, 1));
  out.emplace_back("g_s.1", deconv(Nonlin::Igdn, N, N, 5, 2, 2, 1));
  out.emplace_back("g_s.2", deconv(Nonlin::Igdn, N, N, 5, 2, 2, 1));
  out.emplace_back("g_s.3", deconv(Nonlin::None, N, C, 5, 2, 2, 1));
  return out;
}

nlohmann::json CodecConfig::to_json() const {
  return {{"preset", preset},
          {"n_channels", n_channels},
          {"m_channels", m_channels},
          {"input_channels", input_channels}};
}

CodecConfig CodecConfig::from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.preset = j.value("preset", std::string("desk"));
  c.n_channels = j.value("n_channels", int64_t{32});
  c.m_channels = j.value("m_channels", int64_t{48});
  c.input_channels = j.value("input_channels", int64_t{3});
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// conv stage
// ---------------------------------------------------------------------------

namespace {

std::string reg_name(const std::string& id) {
  std::string r = id;
  std::replace(r.begin(), r.end(), '.', '_');
  return r;
}

torch::Tensor bool_buffer(int64_t n, torch::Device dev = torch::kCPU) {
  (void)dev;
  return torch::ones({n}, torch::TensorOptions().dtype(torch::kBool));
}

std::vector<int64_t> tensor_to_vec(const torch::Tensor& t) {
  auto a = t.to(torch::kLong).contiguous();
  const auto* p = a.data_ptr<int64_t>();
  return std::vector<int64_t>(p, p + a.numel());
}

}  // namespace

ConvStageImpl::ConvStageImpl(std::string id, const LayerSpec& spec,
                             torch::ScalarType dtype)
    : id_(std::move(id)), spec_(spec) {
  if (spec_.in_ch < 1 || spec_.out_ch < 1 || spec_.kernel < 1)
    throw StructuralError("bad layer spec for " + id_);
  auto opt = torch::TensorOptions().dtype(dtype);
  torch::Tensor w;
  if (spec_.kind == LayerKind::Conv)
    w = torch::empty({spec_.out_ch, spec_.in_ch, spec_.kernel, spec_.kernel}, opt);
  else
    w = torch::empty({spec_.in_ch, spec_.out_ch, spec_.kernel, spec_.kernel}, opt);
  torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
  weight_ = register_parameter("weight", w);
  if (spec_.has_bias) {
    double fan_in = static_cast<double>(w.size(1)) * spec_.kernel * spec_.kernel;
    double bound = 1.0 / std::sqrt(fan_in);
    bias_ = register_parameter("bias", torch::empty({spec_.out_ch}, opt).uniform_(-bound, bound));
  }
  keep_out_ = register_buffer("keep_out", bool_buffer(spec_.out_ch));
  keep_in_ = register_buffer("keep_in", bool_buffer(spec_.in_ch));
  kept_out_idx_ = register_buffer(
      "kept_out_idx", torch::arange(spec_.out_ch, torch::kLong));
  kept_in_idx_ = register_buffer(
      "kept_in_idx", torch::arange(spec_.in_ch, torch::kLong));
  if (spec_.act == Nonlin::Gdn)
    gdn_ = register_module("gdn", Gdn(spec_.out_ch, /*inverse=*/false, dtype));
  else if (spec_.act == Nonlin::Igdn)
    gdn_ = register_module("gdn", Gdn(spec_.out_ch, /*inverse=*/true, dtype));
}

void ConvStageImpl::set_mask(const std::vector<uint8_t>& keep_out,
                             const std::vector<uint8_t>& keep_in) {
  if (compact_)
    throw StateError("cannot mask a compacted stage: " + id_);
  if (static_cast<int64_t>(keep_out.size()) != spec_.out_ch ||
      static_cast<int64_t>(keep_in.size()) != spec_.in_ch)
    throw StructuralError("mask length mismatch for " + id_ + ": got " +
                          std::to_string(keep_out.size()) + "/" +
                          std::to_string(keep_in.size()) + ", want " +
                          std::to_string(spec_.out_ch) + "/" +
                          std::to_string(spec_.in_ch));
  int64_t kept_o = std::count_if(keep_out.begin(), keep_out.end(), [](uint8_t v) { return v != 0; });
  int64_t kept_i = std::count_if(keep_in.begin(), keep_in.end(), [](uint8_t v) { return v != 0; });
  if (kept_o < 1 || kept_i < 1)
    throw StructuralError("mask for " + id_ + " keeps no channels");
  torch::NoGradGuard ng;
  auto to_tensor = [](const std::vector<uint8_t>& v) {
    auto t = torch::zeros({static_cast<int64_t>(v.size())}, torch::kBool);
    auto* p = t.data_ptr<bool>();
    for (size_t i = 0; i < v.size(); ++i) p[i] = v[i] != 0;
    return t;
  };
  keep_out_.copy_(to_tensor(keep_out));
  keep_in_.copy_(to_tensor(keep_in));
}

void ConvStageImpl::clear_mask() {
  torch::NoGradGuard ng;
  keep_out_.fill_(true);
  keep_in_.fill_(true);
}

bool ConvStageImpl::masked() const {
  return !(keep_out_.all().item<bool>() && keep_in_.all().item<bool>());
}

std::vector<uint8_t> ConvStageImpl::keep_out_vec() const {
  auto t = keep_out_.to(torch::kByte).contiguous();
  const auto* p = t.data_ptr<uint8_t>();
  return std::vector<uint8_t>(p, p + t.numel());
}

std::vector<uint8_t> ConvStageImpl::keep_in_vec() const {
  auto t = keep_in_.to(torch::kByte).contiguous();
  const auto* p = t.data_ptr<uint8_t>();
  return std::vector<uint8_t>(p, p + t.numel());
}

void ConvStageImpl::make_compact(const std::vector<int64_t>& kept_out,
                                 const std::vector<int64_t>& kept_in) {
  if (compact_) throw StateError("stage already compact: " + id_);
  if (kept_out.empty() || kept_in.empty())
    throw StructuralError("compaction keeps no channels for " + id_);
  for (auto i : kept_out)
    if (i < 0 || i >= spec_.out_ch) throw StructuralError("bad kept output index for " + id_);
  for (auto i : kept_in)
    if (i < 0 || i >= spec_.in_ch) throw StructuralError("bad kept input index for " + id_);

  torch::NoGradGuard ng;
  auto oi = torch::tensor(kept_out, torch::kLong);
  auto ii = torch::tensor(kept_in, torch::kLong);
  torch::Tensor w;
  if (spec_.kind == LayerKind::Conv)
    w = weight_.index_select(0, oi).index_select(1, ii).clone();
  else
    w = weight_.index_select(0, ii).index_select(1, oi).clone();
  weight_.set_data(w);
  if (bias_.defined()) bias_.set_data(bias_.index_select(0, oi).clone());
  if (!gdn_.is_empty()) gdn_->compact_(oi);
  kept_out_idx_.set_data(oi);
  kept_in_idx_.set_data(ii);
  keep_out_.set_data(bool_buffer(oi.numel()));
  keep_in_.set_data(bool_buffer(ii.numel()));
  compact_ = true;
}

std::vector<int64_t> ConvStageImpl::kept_out_indices() const {
  return tensor_to_vec(kept_out_idx_);
}

std::vector<int64_t> ConvStageImpl::kept_in_indices() const {
  return tensor_to_vec(kept_in_idx_);
}

void ConvStageImpl::attach_quant(int64_t weight_bits, int64_t act_bits) {
  if (quant_attached()) detach_quant();
  wq_ = register_module("wq", WeightFakeQuant(stored_out_channels(), weight_bits,
                                              filter_dim(), weight_.scalar_type()));
  torch::Tensor w = weight_.detach();
  if (masked()) {
    auto om = keep_out_.to(w.dtype());
    auto im = keep_in_.to(w.dtype());
    if (spec_.kind == LayerKind::Conv)
      w = w * om.view({-1, 1, 1, 1}) * im.view({1, -1, 1, 1});
    else
      w = w * im.view({-1, 1, 1, 1}) * om.view({1, -1, 1, 1});
  }
  wq_->init_from(w);
  act_bits_ = act_bits;
  if (!gdn_.is_empty()) gdn_->attach_quant(weight_bits);
}

void ConvStageImpl::detach_quant() {
  if (!quant_attached()) return;
  unregister_module("wq");
  wq_ = nullptr;
  act_bits_ = 0;
  if (!gdn_.is_empty()) gdn_->detach_quant();
}

void ConvStageImpl::set_quant_enabled(bool on) {
  quant_enabled_ = on;
  if (!gdn_.is_empty()) gdn_->quant_enabled = on;
}

torch::Tensor ConvStageImpl::effective_weight() {
  torch::Tensor w = weight_;
  if (!wq_.is_empty() && quant_enabled_) w = wq_->forward(w);
  if (!compact_ && masked()) {
    auto om = keep_out_.to(w.dtype());
    auto im = keep_in_.to(w.dtype());
    if (spec_.kind == LayerKind::Conv)
      w = w * om.view({-1, 1, 1, 1}) * im.view({1, -1, 1, 1});
    else
      w = w * im.view({-1, 1, 1, 1}) * om.view({1, -1, 1, 1});
  }
  return w;
}

torch::Tensor ConvStageImpl::effective_bias() {
  if (!bias_.defined()) return bias_;
  if (!compact_ && masked()) return bias_ * keep_out_.to(bias_.dtype());
  return bias_;
}

torch::Tensor ConvStageImpl::run_act(const torch::Tensor& x) {
  switch (spec_.act) {
    case Nonlin::None: return x;
    case Nonlin::Relu: return torch::relu(x);
    case Nonlin::Gdn:
    case Nonlin::Igdn: return gdn_->forward(x);
  }
  return x;
}

torch::Tensor ConvStageImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_ch) {
    std::ostringstream os;
    os << id_ << " expects (B," << spec_.in_ch << ",H,W), got ";
    for (int64_t d = 0; d < x.dim(); ++d) os << (d ? "x" : "(") << x.size(d);
    os << ")";
    throw StructuralError(os.str());
  }
  torch::Tensor in = x;
  if (!wq_.is_empty() && quant_enabled_ && act_bits_ > 0)
    in = fake_quant_acts_dynamic(in, act_bits_);

  auto w = effective_weight();
  auto b = effective_bias();
  if (compact_) {
    auto xs = in.index_select(1, kept_in_idx_);
    torch::Tensor small;
    if (spec_.kind == LayerKind::Conv)
      small = torch::conv2d(xs, w, b, spec_.stride, spec_.padding);
    else
      small = torch::conv_transpose2d(xs, w, b, spec_.stride, spec_.padding,
                                      spec_.output_padding);
    small = run_act(small);
    auto out = torch::zeros({small.size(0), spec_.out_ch, small.size(2), small.size(3)},
                            small.options());
    return out.index_copy(1, kept_out_idx_, small);
  }
  torch::Tensor out;
  if (spec_.kind == LayerKind::Conv)
    out = torch::conv2d(in, w, b, spec_.stride, spec_.padding);
  else
    out = torch::conv_transpose2d(in, w, b, spec_.stride, spec_.padding,
                                  spec_.output_padding);
  return run_act(out);
}

// ---------------------------------------------------------------------------
// rd loss
// ---------------------------------------------------------------------------

void RdLoss::check_finite() const {
  auto bad = [](const torch::Tensor& t) {
    return !std::isfinite(t.item<double>());
  };
  if (bad(rate_bits_y)) throw NumericalError("rd loss term not finite: rate_bits_y");
  if (bad(rate_bits_z)) throw NumericalError("rd loss term not finite: rate_bits_z");
  if (bad(distortion)) throw NumericalError("rd loss term not finite: distortion");
  if (bad(total)) throw NumericalError("rd loss term not finite: total");
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

CodecModelImpl::CodecModelImpl(const CodecConfig& cfg, torch::ScalarType dtype)
    : cfg_(cfg), dtype_(dtype) {
  cfg_.validate();
  for (auto& [id, spec] : cfg_.layer_specs()) {
    auto stage = ConvStage(id, spec, dtype);
    register_module(reg_name(id), stage);
    registry_.emplace(id, stage);
    if (id.rfind("g_a", 0) == 0) ga_.push_back(stage);
    else if (id.rfind("g_s", 0) == 0) gs_.push_back(stage);
    else if (id.rfind("h_a", 0) == 0) ha_.push_back(stage);
    else if (id.rfind("h_s", 0) == 0) hs_.push_back(stage);
  }
  z_prior_ = register_module(
      "z_prior", FactorizedPrior(cfg_.hyper_channels(),
                                 std::vector<int64_t>{3, 3, 3, 3}, 10.0, dtype));
}

std::vector<std::string> CodecModelImpl::stage_ids() const {
  std::vector<std::string> ids;
  for (auto& s : ga_) ids.push_back(s->id());
  for (auto& s : ha_) ids.push_back(s->id());
  for (auto& s : hs_) ids.push_back(s->id());
  for (auto& s : gs_) ids.push_back(s->id());
  return ids;
}

std::vector<std::string> CodecModelImpl::prunable_ids() const {
  // everything except the reconstruction head and the (mu, sigma) head;
  // both must keep their full nominal interface
  std::vector<std::string> ids;
  for (auto& id : stage_ids())
    if (is_prunable(id)) ids.push_back(id);
  return ids;
}

bool CodecModelImpl::is_prunable(const std::string& id) const {
  if (registry_.find(id) == registry_.end()) return false;
  return id != "g_s.3" && id != "h_s.2";
}

ConvStage CodecModelImpl::stage(const std::string& id) {
  auto it = registry_.find(id);
  if (it == registry_.end())
    throw StructuralError("unknown layer id: '" + id + "'");
  return it->second;
}

void CodecModelImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != cfg_.input_channels) {
    std::ostringstream os;
    os << "codec expects (B," << cfg_.input_channels << ",H,W) input, got (";
    for (int64_t d = 0; d < x.dim(); ++d) os << (d ? "," : "") << x.size(d);
    os << ")";
    throw std::invalid_argument(os.str());
  }
  const int64_t f = cfg_.divisibility();
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    std::ostringstream os;
    os << "input sides must be divisible by " << f << ", got " << x.size(2) << "x"
       << x.size(3);
    throw std::invalid_argument(os.str());
  }
}

torch::Tensor CodecModelImpl::run_subnet(std::vector<ConvStage>& net, torch::Tensor x,
                                         const std::vector<std::string>* collect_ids,
                                         std::map<std::string, StageFeatures>* sink) {
  for (auto& s : net) {
    bool want = collect_ids && std::find(collect_ids->begin(), collect_ids->end(),
                                         s->id()) != collect_ids->end();
    if (want) (*sink)[s->id()].inputs.push_back(x.detach());
    x = s->forward(x);
    if (want) (*sink)[s->id()].outputs.push_back(x.detach());
  }
  return x;
}

CodecModelImpl::Output CodecModelImpl::forward(const torch::Tensor& x, QuantMode mode) {
  std::map<std::string, StageFeatures> unused;
  return forward_collect(x, mode, {}, unused);
}

CodecModelImpl::Output CodecModelImpl::forward_collect(
    const torch::Tensor& x, QuantMode mode, const std::vector<std::string>& ids,
    std::map<std::string, StageFeatures>& sink) {
  check_input(x);
  const std::vector<std::string>* cid = ids.empty() ? nullptr : &ids;
  std::map<std::string, StageFeatures>* sp = ids.empty() ? nullptr : &sink;

  Output o;
  o.y = run_subnet(ga_, x, cid, sp);
  o.z = run_subnet(ha_, o.y, cid, sp);
  o.z_hat = quantize_latent(o.z, torch::Tensor(), mode);
  auto params = run_subnet(hs_, o.z_hat, cid, sp);
  const int64_t M = cfg_.m_channels;
  o.mu = params.narrow(1, 0, M);
  auto sigma_raw = params.narrow(1, M, M);
  o.sigma = lower_bound(torch::softplus(sigma_raw), kSigmaFloor);
  o.y_hat = quantize_latent(o.y, o.mu, mode);
  o.x_hat = run_subnet(gs_, o.y_hat, cid, sp);
  o.p_y = gaussian_likelihood(o.y_hat, o.mu, o.sigma);
  o.p_z = z_prior_->likelihood(o.z_hat);
  return o;
}

RdLoss CodecModelImpl::rd_loss(const torch::Tensor& x, double lambda, QuantMode mode) {
  auto o = forward(x, mode);
  RdLoss l;
  l.lambda = lambda;
  const double ln2 = std::log(2.0);
  l.rate_bits_y = -o.p_y.log().sum() / ln2;
  l.rate_bits_z = -o.p_z.log().sum() / ln2;
  const auto pixels = static_cast<double>(x.size(0)) * x.size(2) * x.size(3);
  l.bpp = (l.rate_bits_y + l.rate_bits_z) / pixels;
  l.distortion = torch::mse_loss(o.x_hat, x);
  l.total = l.bpp + lambda * 255.0 * 255.0 * l.distortion;
  l.check_finite();
  return l;
}

std::shared_ptr<CodecModelImpl> CodecModelImpl::clone_model() {
  auto dst = std::make_shared<CodecModelImpl>(cfg_, dtype_);
  // replicate structure first (shapes), then copy values by name
  for (auto& id : stage_ids()) {
    auto src = stage(id);
    auto dstage = dst->stage(id);
    if (src->compact())
      dstage->make_compact(src->kept_out_indices(), src->kept_in_indices());
    else if (src->masked())
      dstage->set_mask(src->keep_out_vec(), src->keep_in_vec());
    if (src->quant_attached())
      dstage->attach_quant(src->weight_quant()->bits_, src->act_bits());
    dstage->set_quant_enabled(src->quant_enabled());
  }
  torch::NoGradGuard ng;
  auto sp = named_parameters();
  auto dp = dst->named_parameters();
  for (auto& item : sp) dp[item.key()].copy_(item.value());
  auto sb = named_buffers();
  auto db = dst->named_buffers();
  for (auto& item : sb) db[item.key()].copy_(item.value());
  return dst;
}

}  // namespace licprune

#pragma once

#include <torch/torch.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lic/entropy.hpp"
#include "lic/gdn.hpp"
#include "json.hpp"
#include "quant/fake_quant.hpp"

namespace licprune {

enum class LayerKind { Conv, Deconv };
enum class Nonlin { None, Gdn, Igdn, Relu };

// Latent handling: additive uniform noise while training, mean-centered
// rounding at eval time, identity for derivative checks.
enum class QuantMode { Noise, Round, Identity };

QuantMode parse_quant_mode(const std::string& s);  // "train" | "eval" | "identity"
std::string to_string(QuantMode m);

// round(y - mu) + mu (Round), y + U(-0.5, 0.5) (Noise), or y unchanged.
// mu may be an undefined tensor (treated as zero).
torch::Tensor quantize_latent(const torch::Tensor& y, const torch::Tensor& mu,
                              QuantMode mode);

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  Nonlin act = Nonlin::None;
  int64_t in_ch = 0;
  int64_t out_ch = 0;
  int64_t kernel = 5;
  int64_t stride = 2;
  int64_t padding = 2;
  int64_t output_padding = 0;
  bool has_bias = true;
};

struct CodecConfig {
  std::string preset = "desk";
  int64_t n_channels = 32;  // transform width
  int64_t m_channels = 48;  // main latent channels
  int64_t input_channels = 3;

  static CodecConfig desk();
  static CodecConfig paper_like();
  static CodecConfig named(const std::string& preset);

  int64_t hyper_channels() const { return n_channels; }
  // total downsampling any input side must divide (main path and hyper path)
  int64_t divisibility() const { return 64; }

  std::vector<std::pair<std::string, LayerSpec>> layer_specs() const;
  void validate() const;

  nlohmann::json to_json() const;
  static CodecConfig from_json(const nlohmann::json& j);
};

// One convolution (or transposed convolution) with its nonlinearity, pruning
// mask, optional compact storage and optional fake-quant state.
class ConvStageImpl : public torch::nn::Module {
 public:
  ConvStageImpl(std::string id, const LayerSpec& spec,
                torch::ScalarType dtype = torch::kFloat32);

  torch::Tensor forward(const torch::Tensor& x);

  const std::string& id() const { return id_; }
  const LayerSpec& spec() const { return spec_; }
  // nominal widths (the tensor interface widths, also for compact stages)
  int64_t out_channels() const { return spec_.out_ch; }
  int64_t in_channels() const { return spec_.in_ch; }

  // ---- masking (nominal-width storage) ----
  void set_mask(const std::vector<uint8_t>& keep_out, const std::vector<uint8_t>& keep_in);
  void clear_mask();
  bool masked() const;
  std::vector<uint8_t> keep_out_vec() const;
  std::vector<uint8_t> keep_in_vec() const;

  // ---- compaction ----
  // Rebuild parameters on the kept subset; tensors entering/leaving the stage
  // stay at nominal width (gather on entry, zero-scatter on exit).
  void make_compact(const std::vector<int64_t>& kept_out, const std::vector<int64_t>& kept_in);
  bool compact() const { return compact_; }
  std::vector<int64_t> kept_out_indices() const;
  std::vector<int64_t> kept_in_indices() const;
  int64_t stored_out_channels() const { return weight_.size(spec_.kind == LayerKind::Conv ? 0 : 1); }
  int64_t stored_in_channels() const { return weight_.size(spec_.kind == LayerKind::Conv ? 1 : 0); }

  // ---- quantization ----
  void attach_quant(int64_t weight_bits, int64_t act_bits);
  void detach_quant();
  bool quant_attached() const { return !wq_.is_empty(); }
  void set_quant_enabled(bool on);

  // weight after fake-quant and masking, as used by forward()
  torch::Tensor effective_weight();
  torch::Tensor effective_bias();
  // out-filter axis of the weight tensor (0 conv, 1 deconv)
  int64_t filter_dim() const { return spec_.kind == LayerKind::Conv ? 0 : 1; }

  Gdn gdn() { return gdn_; }
  WeightFakeQuant weight_quant() { return wq_; }
  int64_t act_bits() const { return act_bits_; }
  bool quant_enabled() const { return quant_enabled_; }

  torch::Tensor weight_, bias_;
  torch::Tensor keep_out_, keep_in_;  // kBool buffers at nominal width

 private:
  torch::Tensor run_act(const torch::Tensor& x);

  std::string id_;
  LayerSpec spec_;
  bool compact_ = false;
  torch::Tensor kept_out_idx_, kept_in_idx_;  // kLong buffers when compact
  Gdn gdn_{nullptr};
  WeightFakeQuant wq_{nullptr};
  int64_t act_bits_ = 0;
  bool quant_enabled_ = true;
};

TORCH_MODULE(ConvStage);

// Scalar loss pieces of one forward pass; tensors keep the autograd graph.
struct RdLoss {
  torch::Tensor total;        // bpp + lambda * 255^2 * mse
  torch::Tensor bpp;          // (bits_y + bits_z) / (B*H*W)
  torch::Tensor rate_bits_y;  // -sum log2 p_y
  torch::Tensor rate_bits_z;  // -sum log2 p_z
  torch::Tensor distortion;   // mean squared error on [0,1] inputs
  double lambda = 0;

  // Throws NumericalError naming the first non-finite term.
  void check_finite() const;
};

struct StageFeatures {
  std::vector<torch::Tensor> inputs;   // (B,C_in,H,W) per recorded batch
  std::vector<torch::Tensor> outputs;  // (B,C_out,H',W') per recorded batch
};

class CodecModelImpl : public torch::nn::Module {
 public:
  explicit CodecModelImpl(const CodecConfig& cfg,
                          torch::ScalarType dtype = torch::kFloat32);

  struct Output {
    torch::Tensor x_hat, y, y_hat, z, z_hat, mu, sigma, p_y, p_z;
  };

  Output forward(const torch::Tensor& x, QuantMode mode);
  RdLoss rd_loss(const torch::Tensor& x, double lambda, QuantMode mode);

  // Registry. Order is topological: g_a, h_a, h_s, g_s.
  std::vector<std::string> stage_ids() const;
  std::vector<std::string> prunable_ids() const;
  bool is_prunable(const std::string& id) const;
  ConvStage stage(const std::string& id);  // throws StructuralError on unknown id

  // Forward pass that records input/output feature maps of selected stages.
  Output forward_collect(const torch::Tensor& x, QuantMode mode,
                         const std::vector<std::string>& ids,
                         std::map<std::string, StageFeatures>& sink);

  // Structure-preserving deep copy (masks, compaction, quant state, values).
  std::shared_ptr<CodecModelImpl> clone_model();

  const CodecConfig& config() const { return cfg_; }
  torch::ScalarType dtype() const { return dtype_; }

  std::vector<ConvStage> ga_, gs_, ha_, hs_;
  FactorizedPrior z_prior_{nullptr};

 private:
  torch::Tensor run_subnet(std::vector<ConvStage>& net, torch::Tensor x,
                           const std::vector<std::string>* collect_ids,
                           std::map<std::string, StageFeatures>* sink);
  void check_input(const torch::Tensor& x) const;

  CodecConfig cfg_;
  torch::ScalarType dtype_;
  std::map<std::string, ConvStage> registry_;
};

TORCH_MODULE(CodecModel);

}  // namespace licprune

#pragma once

#include <filesystem>

#include "json.hpp"
#include "lic/codec.hpp"

namespace licprune {

// Installs learnable fake-quant on every conv/deconv stage (per-filter weight
// params, dynamic per-tensor activations) and on the normalization parameters.
// The entropy model stays full precision.
void attach_quantization(CodecModel model, int64_t weight_bits, int64_t act_bits);
void detach_quantization(CodecModel model);
bool quantization_attached(CodecModel model);
void set_quantization_enabled(CodecModel model, bool on);

struct SizeReport {
  int64_t bytes = 0;           // storage of this model as configured
  int64_t baseline_bytes = 0;  // same architecture, dense, float32
  double compression_ratio = 0;
  nlohmann::json breakdown;  // per-part byte counts

  std::string to_text() const;
};

// Storage accounting. Pruned filters/channels cost nothing; quantized conv
// weights cost bits/8 each plus 8 bytes per kept filter for (scale, zero);
// quantized normalization tensors add 16 bytes per tensor; everything kept
// unquantized (biases, entropy model) counts 4 bytes per value.
SizeReport model_size_bytes(CodecModel model);

}  // namespace licprune

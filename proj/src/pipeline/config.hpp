#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lic/codec.hpp"
#include "nas/nas.hpp"

namespace licprune {

// Experiment configuration, JSON round-trip, preset defaults, strict-ish
// validation. Precedence: command line > file > preset defaults.
struct ExperimentConfig {
  int version = 1;
  std::string preset = "desk";  // also selects the schedule defaults

  // data
  std::string train_dir;
  std::string calib_dir;  // empty -> train_dir
  std::string eval_dir;

  std::vector<double> lambdas = {0.0018, 0.0035, 0.0067, 0.0130, 0.0250};

  // codec width overrides (0 = from preset)
  int64_t n_channels = 0;
  int64_t m_channels = 0;

  // schedule
  int64_t baseline_epochs = 0;
  int64_t steps_per_epoch = 0;
  int64_t prune_finetune_epochs = 0;
  int64_t pq_pre_epochs = 0;   // full-precision finetune after pruning
  int64_t pq_post_epochs = 0;  // quantization-aware finetune afterwards
  int64_t batch_size = 0;
  int64_t crop_size = 0;
  double lr = 1e-4;
  std::string lr_schedule = "cosine";  // or "constant"
  uint64_t seed = 7;

  SearchConfig search;
  int64_t criteria_images = 10;  // images scored by data-driven criteria
  int64_t criteria_crop = 128;
  int64_t calib_images = 0;    // images behind the searcher's finetunes (0 = preset)
  int64_t calib_crop = 64;

  // prune stage switches
  std::string prune_mode = "nas";  // "nas" | "fixed"
  bool filters_only = false;

  // quantization
  bool quant_enabled = true;
  int64_t weight_bits = 8;
  int64_t act_bits = 8;

  std::string output_dir = "runs/exp";

  CodecConfig codec() const;
  void apply_preset_defaults();  // fills zeroed schedule fields
  void validate(bool check_paths) const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  uint64_t content_hash() const;
};

}  // namespace licprune

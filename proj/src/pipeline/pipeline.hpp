#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eval/metrics.hpp"
#include "json.hpp"
#include "nas/nas.hpp"
#include "pipeline/config.hpp"
#include "quant/quantize_model.hpp"

namespace licprune {

// Stable text tag for a lambda value, used in artifact names.
std::string lambda_tag(double lambda);

// Stage ledger persisted as manifest.json in the run directory. A stage is
// complete when it was recorded with the same relevant-config hash and all of
// its artifacts still exist, which is what makes reruns skip finished work.
class RunManifest {
 public:
  static RunManifest open(const std::filesystem::path& dir);

  bool stage_complete(const std::string& name, uint64_t config_hash) const;
  void mark_complete(const std::string& name, uint64_t config_hash,
                     const std::vector<std::filesystem::path>& artifacts, double seconds,
                     nlohmann::json info = nlohmann::json::object());
  nlohmann::json stage_info(const std::string& name) const;  // null if unknown
  std::vector<std::string> stage_names() const;
  std::vector<std::string> artifact_list() const;  // across all stages
  void set_config(const nlohmann::json& snapshot);
  void save() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json doc_;
};

struct StageLoss {
  std::string stage;  // "post_prune", "post_quant", "post_qat"
  double loss = 0;
  double bpp = 0;
  double psnr = 0;
};

struct CompressOutcome {
  std::filesystem::path checkpoint;
  PruningPlan plan;
  double achieved_s = 0;
  bool search_converged = true;
  SizeReport size;
  std::vector<StageLoss> stage_losses;  // joint pruning+quantization only
};

// Config-driven orchestration over one output directory. Every artifact a run
// writes lands in the manifest; completed stages are skipped on rerun.
class Pipeline {
 public:
  explicit Pipeline(const ExperimentConfig& cfg);

  const ExperimentConfig& config() const { return cfg_; }
  RunManifest& manifest() { return manifest_; }
  const std::filesystem::path& out() const { return out_; }

  std::filesystem::path baseline_ckpt(double lambda) const;
  std::filesystem::path variant_ckpt(const std::string& variant, double lambda) const;
  std::filesystem::path curve_csv(const std::string& variant) const;

  // One trained checkpoint per configured lambda.
  std::vector<std::filesystem::path> train_baselines();

  // Ratio search only: plan + trace artifacts, model untouched.
  OuterSearchResult search_only(double lambda);

  // Prune (searched or fixed plan per config), finetune, compact, report.
  CompressOutcome run_prune_pipeline(double lambda,
                                     const std::string& variant = "pruned");

  // Prune, full-precision finetune, then quantization-aware finetune. Falls
  // back to run_prune_pipeline when quantization is disabled.
  CompressOutcome run_joint_pq(double lambda, const std::string& variant = "joint_pq");

  // Rate-distortion curve of a variant's checkpoints over the eval set.
  // "baseline" evaluates the baseline checkpoints.
  RdCurve evaluate_variant(const std::string& variant);

  // Text tables plus the rate-distortion plot from whatever curves exist.
  void write_report();

 private:
  CodecModel load_ckpt(const std::filesystem::path& p) const;
  CalibrationSet criteria_calibration();
  CodecDeltaRdEvaluator::Data search_data(uint64_t seed);

  struct PlanBundle {
    PruningPlan plan;
    std::vector<StructuredMask> masks;
    bool converged = true;
    std::optional<SearchTrace> trace;
  };
  PlanBundle make_plan(CodecModel model, double lambda);

  CompressOutcome run_compress(double lambda, const std::string& variant,
                               bool with_quant);

  ExperimentConfig cfg_;
  std::filesystem::path out_;
  RunManifest manifest_;
};

}  // namespace licprune

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lic/codec.hpp"
#include "prune/prune.hpp"

namespace licprune {

struct SearchConfig {
  double alpha_init = 0.01;     // starting threshold on the relative loss change
  double delta = 0.01;          // |S - s_target| convergence band
  int64_t group_size = 4;       // channels are swept in multiples of this
  double s_target = 0.30;
  Criterion criterion = Criterion::Chip;
  int64_t max_outer_iters = 30;
  uint64_t seed = 0;

  // short finetune inside each measurement
  int64_t finetune_steps = 50;
  double finetune_lr = 1e-4;
  int64_t finetune_batch = 8;

  void validate() const;
  nlohmann::json to_json() const;
  // `base` supplies the fallback for fields the json leaves out
  static SearchConfig from_json(const nlohmann::json& j);
  static SearchConfig from_json(const nlohmann::json& j, SearchConfig base);
};

// Measurement seam: relative RD-loss change (L' - L0) / L0 after pruning
// `count` channels of `layer_id` in `dir`, with `out_count_applied` output
// filters of the same layer already dropped (0 when dir is the output side).
// All other layers stay uncompressed, which is what makes results cacheable.
class DeltaRdEvaluator {
 public:
  virtual ~DeltaRdEvaluator() = default;
  virtual double delta_rd(const std::string& layer_id, Direction dir,
                          int64_t out_count_applied, int64_t count) = 0;
  // channel order, least important first, for mask construction
  virtual const std::vector<int64_t>& ranking(const std::string& layer_id,
                                              Direction dir) = 0;
};

// Production evaluator: clones the model, applies the candidate mask,
// finetunes briefly on calibration crops, evaluates the RD loss in eval mode
// on the calibration set, and caches by (layer, dir, out_applied, count).
class CodecDeltaRdEvaluator : public DeltaRdEvaluator {
 public:
  struct Data {
    std::vector<torch::Tensor> train_batches;  // (B,3,h,w) minibatches
    std::vector<torch::Tensor> eval_batches;   // evaluated in eval mode
  };

  CodecDeltaRdEvaluator(CodecModel model, Data data, double lambda,
                        const SearchConfig& cfg, const CalibrationSet& criteria_calib);

  // must run before any measurement
  void compute_baseline();
  bool has_baseline() const { return baseline_.has_value(); }
  double baseline_loss() const;

  double delta_rd(const std::string& layer_id, Direction dir, int64_t out_count_applied,
                  int64_t count) override;
  const std::vector<int64_t>& ranking(const std::string& layer_id,
                                      Direction dir) override;

  int64_t measurements_done() const { return measurements_; }
  int64_t cache_hits() const { return cache_hits_; }

 private:
  double eval_loss(CodecModel m);

  CodecModel model_;
  Data data_;
  double lambda_;
  SearchConfig cfg_;
  CalibrationSet criteria_calib_;
  std::optional<double> baseline_;
  std::map<std::string, std::vector<int64_t>> rankings_;
  std::map<std::string, double> cache_;
  int64_t measurements_ = 0;
  int64_t cache_hits_ = 0;
};

struct LayerSearchResult {
  std::string layer_id;
  Direction direction = Direction::OutputMaps;
  std::vector<std::pair<int64_t, double>> tested;  // (pruned count, delta rd)
  int64_t chosen_count = 0;
  double chosen_ratio = 0;
};

// Sweeps pruned counts in multiples of group_size up to the keep floor and
// picks the largest count whose delta stays within alpha (not the first
// violation: later counts may dip back under).
LayerSearchResult layer_ratio_search(CodecModel model, const std::string& layer_id,
                                     Direction dir, double alpha,
                                     const SearchConfig& cfg, DeltaRdEvaluator& eval,
                                     int64_t out_count_applied = 0);

// Output direction first, then the input direction with the chosen output
// count applied; returns the plan plus the sparsity it realizes.
std::pair<PruningPlan, double> assign_ratios(CodecModel model, double alpha,
                                             const SearchConfig& cfg,
                                             DeltaRdEvaluator& eval);

// Next alpha from the (alpha, S) history: bisect once the target is bracketed,
// otherwise expand geometrically.
double adaptive_step(double alpha, double achieved_s, double s_target,
                     const std::vector<std::pair<double, double>>& history);

struct SearchTrace {
  struct Iter {
    double alpha = 0;
    double achieved_s = 0;
    PruningPlan plan;
  };
  std::vector<Iter> iters;
  bool converged = false;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

struct OuterSearchResult {
  PruningPlan plan;
  double achieved_s = 0;
  SearchTrace trace;
};

using RatioAssigner = std::function<std::pair<PruningPlan, double>(double alpha)>;

// Outer loop over alpha; on non-convergence returns the best plan seen.
OuterSearchResult alpha_outer_search(const RatioAssigner& assign, const SearchConfig& cfg);
OuterSearchResult alpha_outer_search(CodecModel model, const SearchConfig& cfg,
                                     DeltaRdEvaluator& eval);

// Sparsity a plan realizes on the model (masks built from evaluator rankings).
double plan_sparsity(CodecModel model, const PruningPlan& plan, DeltaRdEvaluator& eval);
std::vector<StructuredMask> plan_masks(CodecModel model, const PruningPlan& plan,
                                       DeltaRdEvaluator& eval);

// Uniform-ratio plans. Joint mode solves 1-(1-k)^2 = S per layer, filters-only
// uses k_out = S; the uniform k is then nudged over a small grid so the
// realized sparsity lands as close to the target as floor() allows.
PruningPlan make_fixed_plan(CodecModel model, double s_target, bool filters_only,
                            Criterion crit);

}  // namespace licprune

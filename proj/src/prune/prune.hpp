#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "criteria/criteria.hpp"
#include "json.hpp"
#include "lic/codec.hpp"

namespace licprune {

// Floor below which a layer may not shrink in either direction.
int64_t min_keep(int64_t channels);

struct StructuredMask {
  std::string layer_id;
  std::vector<uint8_t> keep_out;  // nominal width flags, 1 = keep
  std::vector<uint8_t> keep_in;

  int64_t kept_out() const;
  int64_t kept_in() const;
};

struct PruneRatios {
  double kappa_out = 0;
  double kappa_in = 0;
};

enum class PlanProvenance { Fixed, Searched };

struct PruningPlan {
  std::map<std::string, PruneRatios> layers;
  Criterion criterion = Criterion::L2;
  PlanProvenance provenance = PlanProvenance::Fixed;
  double s_target = 0;

  nlohmann::json to_json() const;
  static PruningPlan from_json(const nlohmann::json& j);
  std::string to_text() const;  // human-readable table
};

// Bottom floor(kappa*c) channels by score are dropped, capped so at least
// min_keep(c) survive. Ties break toward the lower index.
StructuredMask select_prune_sets(const ImportanceScores& out_scores,
                                 const ImportanceScores& in_scores, double kappa_out,
                                 double kappa_in);

// Pruned-count arithmetic shared by selection and the ratio search.
int64_t pruned_count_for_ratio(int64_t channels, double kappa);
int64_t max_prunable_count(int64_t channels);

void apply_masks(CodecModel model, const std::vector<StructuredMask>& masks);
void clear_masks(CodecModel model);

// Masks realized from a plan via the plan's criterion on the calibration set.
std::vector<StructuredMask> build_masks(CodecModel model, const PruningPlan& plan,
                                        const CalibrationSet& calib);

struct LayerSparsity {
  int64_t params_before = 0;  // weights + bias of this conv
  int64_t params_after = 0;
  int64_t weights_before = 0;  // weight elements only
  int64_t weights_after = 0;
  double kappa_out = 0;  // realized pruned fraction per direction
  double kappa_in = 0;
};

struct SparsityReport {
  std::map<std::string, LayerSparsity> per_layer;
  int64_t prunable_params_total = 0;  // over prunable convs
  int64_t prunable_params_pruned = 0;
  double sparsity = 0;  // pruned / total over prunable convs
  int64_t model_params_total = 0;  // every parameter in the model
  int64_t model_params_after = 0;

  void write_csv(const std::filesystem::path& path) const;
};

// Reads the masks currently applied to the model. A weight element counts as
// pruned iff its output filter or its input channel is dropped.
SparsityReport sparsity(CodecModel model);

// Same accounting for a bare stage list (single-layer checks).
SparsityReport sparsity_of_stages(const std::vector<ConvStage>& stages,
                                  const std::vector<StructuredMask>& masks);

// Dense small model: kept channels gathered, inter-stage tensors stay at
// nominal width (zero-filled on pruned channels). Output is forward-equivalent
// to the masked input model.
CodecModel compact(CodecModel model);

}  // namespace licprune

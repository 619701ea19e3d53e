#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "lic/codec.hpp"

namespace licprune {

enum class Direction { OutputMaps, InputMaps };
enum class Criterion { L2, HRank, Chip };

Direction parse_direction(const std::string& s);  // "output" | "input"
Criterion parse_criterion(const std::string& s);  // "l2" | "hrank" | "chip"
std::string to_string(Direction d);
std::string to_string(Criterion c);

struct ImportanceScores {
  std::string layer_id;
  Direction direction = Direction::OutputMaps;
  Criterion criterion = Criterion::L2;
  std::vector<double> scores;  // one per channel, higher = more important
};

// Images used for data-driven criteria (and nothing else).
struct CalibrationSet {
  std::vector<torch::Tensor> images;  // each (1,3,H,W), H/W divisible
};

// L2 norm of each filter (output direction) or each input-channel slice.
// Weights in canonical (c_out, c_in, kh, kw) layout.
ImportanceScores l2_importance(const torch::Tensor& weights, Direction dir,
                               const std::string& layer_id = "");

// Mean numerical rank of each channel's feature map across images.
// maps: one (C,H,W) tensor per image.
ImportanceScores hrank_importance(const std::vector<torch::Tensor>& maps,
                                  const std::string& layer_id = "");

// Nuclear-norm drop when the channel's row is removed from the flattened
// feature matrix (channels x pixels), averaged across images.
ImportanceScores chip_importance(const std::vector<torch::Tensor>& maps,
                                 const std::string& layer_id = "");

// Scores for one layer/direction of the model. Data-driven criteria run the
// model over the calibration set in eval mode; output direction consumes the
// layer's output maps, input direction the maps entering it.
ImportanceScores compute_importance(CodecModel model, const std::string& layer_id,
                                    Direction dir, Criterion crit,
                                    const CalibrationSet& calib);

// Channel indices sorted ascending by (score, index): least important first.
std::vector<int64_t> rank_channels(const ImportanceScores& s);

void write_importance_csv(const std::filesystem::path& path,
                          const std::vector<ImportanceScores>& all);

}  // namespace licprune

#pragma once

#include <filesystem>
#include <vector>

#include "eval/metrics.hpp"

namespace licprune {

// Writes an SVG of the rate-distortion curves plus a sibling CSV with the
// plotted values (same basename, .csv extension).
void emit_plot(const std::vector<RdCurve>& curves, const std::filesystem::path& svg_path);

}  // namespace licprune

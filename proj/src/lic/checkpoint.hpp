#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "lic/codec.hpp"

namespace licprune {

// Single-file container: magic, version, JSON header (config, structure,
// metadata, tensor index), then raw little-endian tensor bytes. Values
// round-trip bit-exactly.
struct CheckpointMeta {
  int64_t step = 0;
  double lambda = 0;
  uint64_t seed = 0;
  std::string stage_name;  // pipeline stage that produced this ("baseline", ...)
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, CodecModel model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  CodecModel model{nullptr};
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace licprune

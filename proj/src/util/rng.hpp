#pragma once

#include <cstdint>
#include <string>

namespace licprune {

// splitmix64 step; decent avalanche, used to derive per-measurement seeds.
uint64_t mix64(uint64_t x);

// Combine a base seed with a string key (layer ids etc.) into a derived seed.
uint64_t derive_seed(uint64_t base, const std::string& key);
uint64_t derive_seed(uint64_t base, const std::string& key, int64_t a);
uint64_t derive_seed(uint64_t base, const std::string& key, int64_t a, int64_t b);

// FNV-1a over a byte string / file contents (manifest content hashes).
uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_str(const std::string& s);
uint64_t fnv1a64_file(const std::string& path);

}  // namespace licprune

#include "util/errors.hpp"

// Out-of-line anchor so the vtables land in one TU.
namespace licprune {
namespace {
[[maybe_unused]] void anchor() {}
}  // namespace
}  // namespace licprune

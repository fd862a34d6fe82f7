#pragma once

#include <string>

#include "refocus/policy.hpp"

namespace refocus::ckpt {

// Writes <prefix>.json (manifest: name, shape, dtype, byte_offset) and
// <prefix>.bin (little-endian raw f64 blob). Round trips are bit-exact.
void save_checkpoint(const policy::PolicyParams& p, const std::string& prefix);

policy::PolicyParams load_checkpoint(const std::string& prefix);

}  // namespace refocus::ckpt

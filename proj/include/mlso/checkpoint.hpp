#pragma once

#include <filesystem>

#include "mlso/params.hpp"

namespace mlso {

/// Checkpoint layout: one text header line
///   mlso-ckpt v1 <name>=<d0>x<d1>x... <name>=<dims> ...
/// followed by every parameter's values as little-endian f64 in header order.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);

/// Loads values into `params`; names, shapes, and order must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParamSet& params);

}  // namespace mlso

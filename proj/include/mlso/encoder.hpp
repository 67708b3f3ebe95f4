#pragma once

#include <utility>
#include <vector>

#include "mlso/params.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

struct EncoderConfig {
  std::vector<int> channels{64, 64, 64, 64};  // per conv block
  int levels = 4;       // D: taps at the outputs of the last D blocks
  int scales = 3;       // S: scale s uses the input downsampled (s-1) times
  int input_size = 28;  // square inputs
  int in_channels = 1;

  int blocks() const { return static_cast<int>(channels.size()); }
  void validate() const;
};

/// Convolutional feature map flattened to [K, N] with its tap coordinates.
struct FeatureMap {
  Tensor values;  // [K, N]
  int level = 1;  // d in [1, D]
  int scale = 1;  // s in [1, S]
  int channels = 0;
  int height = 0;
  int width = 0;
};

/// Conv-4 style feature encoder: each block is conv 3x3 (stride 1, pad 1),
/// learnable per-channel scale/shift, ReLU, 2x2 max-pool. One parameter set
/// is shared across scales and across support/query images.
class FeatureEncoder {
 public:
  FeatureEncoder(const EncoderConfig& config, ParamSet& params, Rng& rng);

  /// Average-pools the image (scale-1) times; scale 1 is the identity.
  static Tensor downsample(const Tensor& image, int scale, int max_scale);

  /// One forward pass through all blocks at the given scale; returns feature
  /// maps for levels 1..D (level D is the deepest block).
  std::vector<FeatureMap> encode_levels(const Tensor& image, int scale) const;

  /// Feature map for a single (level, scale); recomputes the shared pass.
  FeatureMap encode(const Tensor& image, int level, int scale) const;

  /// Shape oracle: expected (height, width) of the level-d map at scale s.
  std::pair<int, int> level_extent(int level, int scale) const;
  int level_channels(int level) const;

  const EncoderConfig& config() const { return config_; }

 private:
  struct Block {
    Tensor kernels;  // [C_out, C_in, 3, 3]
    Tensor gamma;    // [C_out]
    Tensor beta;     // [C_out]
  };
  EncoderConfig config_;
  std::vector<Block> blocks_;
};

}  // namespace mlso

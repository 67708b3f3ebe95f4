#include "mlso/encoder.hpp"

#include <string>

namespace mlso {

void EncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("encoder: at least one conv block required");
  for (int c : channels) {
    if (c < 1) throw ConfigError("encoder: channel counts must be positive");
  }
  if (levels < 1 || levels > blocks()) {
    throw ConfigError("encoder: levels must be in [1, blocks]");
  }
  if (scales < 1) throw ConfigError("encoder: scales must be >= 1");
  if (input_size < 1) throw ConfigError("encoder: input_size must be positive");
  // Every tapped level at every scale must keep a nonzero spatial extent.
  for (int s = 1; s <= scales; ++s) {
    int extent = input_size;
    for (int i = 1; i < s; ++i) extent = (extent + 1) / 2;
    for (int b = 0; b < blocks(); ++b) {
      extent = extent / 2;  // conv keeps the extent (pad 1), max-pool halves it
      if (extent == 0) {
        throw ConfigError("encoder: feature map collapses to zero extent at block " +
                          std::to_string(b + 1) + ", scale " + std::to_string(s));
      }
    }
  }
}

FeatureEncoder::FeatureEncoder(const EncoderConfig& config, ParamSet& params, Rng& rng)
    : config_(config) {
  config_.validate();
  int cin = config_.in_channels;
  for (int b = 0; b < config_.blocks(); ++b) {
    const int cout = config_.channels[static_cast<std::size_t>(b)];
    const std::string prefix = "fen.block" + std::to_string(b) + ".";
    Block block;
    block.kernels = params.kaiming(prefix + "kernels", {cout, cin, 3, 3}, cin * 9, rng);
    block.gamma = params.full(prefix + "scale", {cout}, 1.0);
    block.beta = params.zeros(prefix + "shift", {cout});
    blocks_.push_back(std::move(block));
    cin = cout;
  }
}

Tensor FeatureEncoder::downsample(const Tensor& image, int scale, int max_scale) {
  if (scale < 1 || scale > max_scale) {
    throw ConfigError("downsample: scale " + std::to_string(scale) + " outside [1, " +
                      std::to_string(max_scale) + "]");
  }
  Tensor out = image;
  for (int i = 1; i < scale; ++i) out = avgpool2x2(out);
  return out;
}

std::vector<FeatureMap> FeatureEncoder::encode_levels(const Tensor& image, int scale) const {
  if (image.rank() != 3) throw ShapeError("encode expects an image [C,H,W]");
  Tensor x = downsample(image, scale, config_.scales);
  std::vector<FeatureMap> maps;
  const int first_tap = config_.blocks() - config_.levels;  // 0-based block index of level 1
  for (int b = 0; b < config_.blocks(); ++b) {
    const auto& block = blocks_[static_cast<std::size_t>(b)];
    x = maxpool2x2(relu(channel_affine(conv2d(x, block.kernels, 1, 1), block.gamma, block.beta)));
    if (b >= first_tap) {
      FeatureMap fm;
      fm.channels = x.dim(0);
      fm.height = x.dim(1);
      fm.width = x.dim(2);
      fm.values = reshape(x, {fm.channels, fm.height * fm.width});
      fm.level = b - first_tap + 1;
      fm.scale = scale;
      maps.push_back(std::move(fm));
    }
  }
  return maps;
}

FeatureMap FeatureEncoder::encode(const Tensor& image, int level, int scale) const {
  if (level < 1 || level > config_.levels) throw ConfigError("encode: level out of range");
  auto maps = encode_levels(image, scale);
  return maps[static_cast<std::size_t>(level - 1)];
}

std::pair<int, int> FeatureEncoder::level_extent(int level, int scale) const {
  if (level < 1 || level > config_.levels) throw ConfigError("level_extent: level out of range");
  if (scale < 1 || scale > config_.scales) throw ConfigError("level_extent: scale out of range");
  int extent = config_.input_size;
  for (int i = 1; i < scale; ++i) extent = (extent + 1) / 2;
  const int tap_block = config_.blocks() - config_.levels + level;  // 1-based
  for (int b = 0; b < tap_block; ++b) extent = extent / 2;
  return {extent, extent};
}

int FeatureEncoder::level_channels(int level) const {
  const int tap_block = config_.blocks() - config_.levels + level;
  return config_.channels[static_cast<std::size_t>(tap_block - 1)];
}

}  // namespace mlso

#include "mlso/simnet.hpp"

#include <string>

namespace mlso {

void SimNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("simnet: in_channels must be positive");
  if (conv_channels < 1) throw ConfigError("simnet: conv_channels must be positive");
  if (fc_hidden < 1) throw ConfigError("simnet: fc_hidden must be positive");
}

SimilarityNet::SimilarityNet(const SimNetConfig& config, int set_count, ParamSet& params,
                             Rng& rng)
    : config_(config) {
  config_.validate();
  if (set_count < 1) throw ConfigError("simnet: set_count must be >= 1");
  const int c = config_.conv_channels;
  for (int d = 0; d < set_count; ++d) {
    const std::string prefix = "sn.set" + std::to_string(d) + ".";
    Set set;
    set.conv1 = params.kaiming(prefix + "conv1", {c, config_.in_channels, 3, 3},
                               config_.in_channels * 9, rng);
    set.gamma1 = params.full(prefix + "scale1", {c}, 1.0);
    set.beta1 = params.zeros(prefix + "shift1", {c});
    set.conv2 = params.kaiming(prefix + "conv2", {c, c, 3, 3}, c * 9, rng);
    set.gamma2 = params.full(prefix + "scale2", {c}, 1.0);
    set.beta2 = params.zeros(prefix + "shift2", {c});
    set.fc1_w = params.kaiming(prefix + "fc1.w", {config_.fc_hidden, c}, c, rng);
    set.fc1_b = params.zeros(prefix + "fc1.b", {config_.fc_hidden});
    set.fc2_w = params.kaiming(prefix + "fc2.w", {1, config_.fc_hidden}, config_.fc_hidden, rng);
    set.fc2_b = params.zeros(prefix + "fc2.b", {1});
    sets_.push_back(std::move(set));
  }
}

Tensor SimilarityNet::relate(const Tensor& descriptor, int set_index) const {
  if (descriptor.rank() != 3) throw ShapeError("relate expects a descriptor [C,K',K']");
  if (descriptor.dim(0) != config_.in_channels) {
    throw ShapeError("relate: descriptor has " + std::to_string(descriptor.dim(0)) +
                     " channels, expected " + std::to_string(config_.in_channels));
  }
  if (set_index < 0 || set_index >= set_count()) {
    throw ConfigError("relate: parameter set index out of range");
  }
  const Set& set = sets_[static_cast<std::size_t>(set_index)];
  Tensor x = maxpool2x2(relu(channel_affine(conv2d(descriptor, set.conv1, 1, 1),
                                            set.gamma1, set.beta1)));
  x = maxpool2x2(relu(channel_affine(conv2d(x, set.conv2, 1, 1), set.gamma2, set.beta2)));
  Tensor features = spatial_mean(x);
  Tensor hidden = relu(linear(set.fc1_w, features, set.fc1_b));
  Tensor score = sigmoid(linear(set.fc2_w, hidden, set.fc2_b));
  return reshape(score, {});
}

GateModule::GateModule(ParamSet& params, Rng& rng, int conv_channels)
    : conv_channels_(conv_channels) {
  conv_ = params.kaiming("gate.conv", {conv_channels_, 1, 3, 3}, 9, rng);
  fc_w_ = params.kaiming("gate.fc.w", {1, conv_channels_}, conv_channels_, rng);
  fc_b_ = params.zeros("gate.fc.b", {1});
}

Tensor GateModule::gate(const Tensor& pooled) const {
  if (pooled.rank() != 2) throw ShapeError("gate expects a pooled rep [K,K]");
  Tensor x = relu(conv2d(reshape(pooled, {1, pooled.dim(0), pooled.dim(1)}), conv_, 1, 1));
  Tensor score = sigmoid(linear(fc_w_, spatial_mean(x), fc_b_));
  return reshape(score, {});
}

}  // namespace mlso

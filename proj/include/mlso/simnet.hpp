#pragma once

#include <vector>

#include "mlso/params.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

struct SimNetConfig {
  int in_channels = 2;     // descriptor channels
  int conv_channels = 64;  // per conv block
  int fc_hidden = 8;
  void validate() const;
};

/// Base learner r: two conv blocks (3x3, scale/shift, ReLU, 2x2 max-pool), an
/// adaptive global average over the remaining extent, then two FC layers with
/// a sigmoid output. Holds D parameter sets in intra-level mode or one shared
/// set in inter-level mode.
class SimilarityNet {
 public:
  SimilarityNet(const SimNetConfig& config, int set_count, ParamSet& params, Rng& rng);

  /// Relation score in (0,1) for a descriptor [C,K',K'].
  Tensor relate(const Tensor& descriptor, int set_index = 0) const;

  int set_count() const { return static_cast<int>(sets_.size()); }
  const SimNetConfig& config() const { return config_; }

 private:
  struct Set {
    Tensor conv1, gamma1, beta1;
    Tensor conv2, gamma2, beta2;
    Tensor fc1_w, fc1_b;
    Tensor fc2_w, fc2_b;
  };
  SimNetConfig config_;
  std::vector<Set> sets_;
};

/// Gate head g mapping a pooled rep [K,K] to a scalar in (0,1); the pair
/// weight of the Gate Module matching is g(support) * g(query).
class GateModule {
 public:
  GateModule(ParamSet& params, Rng& rng, int conv_channels = 8);

  Tensor gate(const Tensor& pooled_rep) const;

 private:
  Tensor conv_, fc_w_, fc_b_;
  int conv_channels_;
};

}  // namespace mlso

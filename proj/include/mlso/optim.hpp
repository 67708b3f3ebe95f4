#pragma once

#include <vector>

#include "mlso/params.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction; per-parameter state in registration order.
class Adam {
 public:
  Adam(const ParamSet& params, const AdamConfig& config);

  void step(const GradientMap& grads);

 private:
  AdamConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace mlso

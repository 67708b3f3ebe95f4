#include "mlso/optim.hpp"

#include <cmath>

namespace mlso {

Adam::Adam(const ParamSet& params, const AdamConfig& config) : config_(config) {
  for (const auto& [name, tensor] : params.items()) {
    params_.push_back(tensor);
    m_.emplace_back(static_cast<std::size_t>(tensor.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(tensor.size()), 0.0);
  }
}

void Adam::step(const GradientMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (!grads.contains(params_[p])) continue;  // parameter unused this step
    const Tensor g = grads.grad(params_[p]);
    auto& m = m_[p];
    auto& v = v_[p];
    auto& w = params_[p].raw();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data()[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace mlso

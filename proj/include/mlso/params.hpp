#pragma once

#include <string>
#include <vector>

#include "mlso/rng.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

/// Ordered collection of named trainable tensors. Registration order is the
/// checkpoint and optimizer order, so it must be deterministic.
class ParamSet {
 public:
  Tensor create(const std::string& name, Shape shape, std::vector<double> values) {
    Tensor t = Tensor::param(std::move(shape), std::move(values));
    entries_.emplace_back(name, t);
    return t;
  }

  Tensor zeros(const std::string& name, Shape shape) {
    const auto n = static_cast<std::size_t>(shape_size(shape));
    return create(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  Tensor full(const std::string& name, Shape shape, double value) {
    const auto n = static_cast<std::size_t>(shape_size(shape));
    return create(name, std::move(shape), std::vector<double>(n, value));
  }

  /// Kaiming-style fan-in normal init.
  Tensor kaiming(const std::string& name, Shape shape, int fan_in, Rng& rng) {
    const auto n = static_cast<std::size_t>(shape_size(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> values(n);
    for (double& v : values) v = rng.normal(0.0, stddev);
    return create(name, std::move(shape), std::move(values));
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace mlso

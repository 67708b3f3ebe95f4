#pragma once

#include <vector>

#include "mlso/sop.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

/// Relationship descriptor variants combining support and query feature maps.
enum class DescriptorKind {
  Otimes,   // per-side autocorrelations, supports summed over shots
  OtimesR,  // per-side autocorrelations, supports concatenated over locations
  OtimesF,  // one autocorrelation of the feature-wise concatenation
};

/// Full single autocorrelation of support and query features stacked along
/// the feature mode (support shots first, query last). Requires all maps to
/// share N. Returns [1, (Z+1)K, (Z+1)K].
Tensor theta_full(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params);

/// Supports concatenated along locations into K x (Z*N), pooled as channel 1;
/// the query pooled as channel 2. Returns [2, K, K].
Tensor theta_rank(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params);

/// Supports summed over shots, pooled as channel 1; the query pooled as
/// channel 2. Returns [2, K, K].
Tensor theta_mean(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params);

Tensor relation_descriptor(DescriptorKind kind, const std::vector<Tensor>& supports,
                           const Tensor& query, PnKind pn, const PnParams& params);

/// Channel count of a descriptor variant (1 for OtimesF, otherwise 2).
int descriptor_channels(DescriptorKind kind);

}  // namespace mlso

#include "mlso/reldesc.hpp"

namespace mlso {

namespace {

void check_supports(const std::vector<Tensor>& supports) {
  if (supports.empty()) throw ShapeError("relation descriptor: at least one support required");
  const int k = supports.front().dim(0);
  for (const auto& s : supports) {
    if (s.rank() != 2 || s.dim(0) != k) {
      throw ShapeError("relation descriptor: support maps must share the channel count");
    }
  }
}

Tensor pooled_channel(const Tensor& phi, PnKind pn, const PnParams& params) {
  Tensor psi = pooled_rep(phi, pn, params);
  return reshape(psi, {1, psi.dim(0), psi.dim(1)});
}

}  // namespace

Tensor theta_full(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params) {
  check_supports(supports);
  const int n = query.dim(1);
  for (const auto& s : supports) {
    if (s.dim(1) != n) throw ShapeError("theta_full: all maps must share N");
  }
  std::vector<Tensor> rows = supports;
  rows.push_back(query);
  Tensor stacked = concat(rows, 0);  // [(Z+1)K, N]
  return pooled_channel(stacked, pn, params);
}

Tensor theta_rank(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params) {
  check_supports(supports);
  if (query.rank() != 2 || query.dim(0) != supports.front().dim(0)) {
    throw ShapeError("theta_rank: query channel count mismatch");
  }
  Tensor support_cat = supports.size() == 1 ? supports.front() : concat(supports, 1);
  return concat({pooled_channel(support_cat, pn, params), pooled_channel(query, pn, params)}, 0);
}

Tensor theta_mean(const std::vector<Tensor>& supports, const Tensor& query, PnKind pn,
                  const PnParams& params) {
  check_supports(supports);
  if (query.rank() != 2 || query.dim(0) != supports.front().dim(0)) {
    throw ShapeError("theta_mean: query channel count mismatch");
  }
  Tensor summed = supports.front();
  for (std::size_t i = 1; i < supports.size(); ++i) summed = add(summed, supports[i]);
  return concat({pooled_channel(summed, pn, params), pooled_channel(query, pn, params)}, 0);
}

Tensor relation_descriptor(DescriptorKind kind, const std::vector<Tensor>& supports,
                           const Tensor& query, PnKind pn, const PnParams& params) {
  switch (kind) {
    case DescriptorKind::Otimes:
      return theta_mean(supports, query, pn, params);
    case DescriptorKind::OtimesR:
      return theta_rank(supports, query, pn, params);
    case DescriptorKind::OtimesF:
      return theta_full(supports, query, pn, params);
  }
  throw DomainError("unknown descriptor kind");
}

int descriptor_channels(DescriptorKind kind) {
  return kind == DescriptorKind::OtimesF ? 1 : 2;
}

}  // namespace mlso

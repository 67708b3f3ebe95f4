#include "mlso/sop.hpp"

#include <cmath>

namespace mlso {

Tensor autocorrelation(const Tensor& phi) {
  if (phi.rank() != 2) throw ShapeError("autocorrelation expects [K,N]");
  const int n = phi.dim(1);
  if (n == 0) throw ShapeError("autocorrelation: empty feature map (N = 0)");
  return mul_scalar(matmul(phi, transpose(phi)), 1.0 / static_cast<double>(n));
}

Tensor trace_normalize(const Tensor& m, double lambda) {
  Tensor denom = add_scalar(trace(m), lambda);
  return scale(m, pow_scalar(denom, -1.0));
}

Tensor pn_maxexp(const Tensor& m, double eta) {
  if (eta <= 0.0) throw DomainError("pn_maxexp: eta must be positive");
  return min_scalar(mul_scalar(m, eta), 1.0);
}

Tensor pn_maxexp_pm(const Tensor& m, double eta, double rho, double alpha) {
  if (rho < 0.0 || rho > 1.0) throw DomainError("pn_maxexp_pm: rho must be in [0,1]");
  if (eta <= 0.0) throw DomainError("pn_maxexp_pm: eta must be positive");
  if (alpha <= 0.0) throw DomainError("pn_maxexp_pm: alpha must be positive");
  // Bases are clamped at zero: the soft maximum overshoots max(0,x) by
  // log(2)/alpha, which can push a base slightly negative for extreme rho.
  Tensor neg_base = max_scalar(
      add_scalar(mul_scalar(soft_max0(neg(m), alpha), -(1.0 - rho)), 1.0), 0.0);
  Tensor pos_base = max_scalar(add_scalar(mul_scalar(soft_max0(m, alpha), -rho), 1.0), 0.0);
  return sub(pow_scalar(neg_base, eta), pow_scalar(pos_base, eta));
}

Tensor pn_sigme(const Tensor& m, double eta_prime, double lambda) {
  if (eta_prime <= 0.0) throw DomainError("pn_sigme: eta' must be positive");
  Tensor normalized = trace_normalize(m, lambda);
  return add_scalar(mul_scalar(sigmoid(mul_scalar(normalized, eta_prime)), 2.0), -1.0);
}

Tensor normalize_and_pn(const Tensor& autocorr, int n_locations, PnKind kind,
                        const PnParams& params) {
  const double eta = params.eta > 0.0 ? params.eta : static_cast<double>(n_locations);
  switch (kind) {
    case PnKind::MaxExp:
      return pn_maxexp(trace_normalize(autocorr, params.lambda), eta);
    case PnKind::MaxExpPM:
      return pn_maxexp_pm(trace_normalize(autocorr, params.lambda), eta, params.rho,
                          params.alpha_factor * eta);
    case PnKind::SigmE: {
      const double ep = params.eta_prime > 0.0 ? params.eta_prime : static_cast<double>(n_locations);
      return pn_sigme(autocorr, ep, params.lambda);
    }
    case PnKind::None:
      return trace_normalize(autocorr, params.lambda);
  }
  throw DomainError("unknown PN kind");
}

Tensor pooled_rep(const Tensor& phi, PnKind kind, const PnParams& params) {
  return normalize_and_pn(autocorrelation(phi), phi.dim(1), kind, params);
}

namespace pnref {

double maxexp(double p, double eta) { return 1.0 - std::pow(1.0 - p, eta); }

double maxexp_clamp(double p, double eta) { return std::min(eta * p, 1.0); }

double maxexp_pm_hard(double p, double eta, double rho) {
  return std::pow(1.0 - (1.0 - rho) * std::max(0.0, -p), eta) -
         std::pow(1.0 - rho * std::max(0.0, p), eta);
}

namespace {
double soft_max0_scalar(double x, double alpha) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(alpha * x))) / alpha;
}
}  // namespace

double maxexp_pm_soft(double p, double eta, double rho, double alpha) {
  const double neg_base = std::max(0.0, 1.0 - (1.0 - rho) * soft_max0_scalar(-p, alpha));
  const double pos_base = std::max(0.0, 1.0 - rho * soft_max0_scalar(p, alpha));
  return std::pow(neg_base, eta) - std::pow(pos_base, eta);
}

double sigme(double p, double eta_prime) {
  return 2.0 / (1.0 + std::exp(-eta_prime * p)) - 1.0;
}

double cooccurrence_difference(int n, double p, double q) {
  return std::pow(1.0 - q, n) - std::pow(1.0 - p, n);
}

}  // namespace pnref

}  // namespace mlso

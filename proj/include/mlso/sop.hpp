#pragma once

#include "mlso/tensor.hpp"

namespace mlso {

/// Power Normalization family applied to trace-normalized autocorrelations.
enum class PnKind { MaxExp, MaxExpPM, SigmE, None };

struct PnParams {
  double eta = 0.0;         // 0 selects eta = N of the pooled map
  double rho = 0.5;         // MaxExp(+-) mixing weight
  double alpha_factor = 20.0;  // soft-max sharpness alpha = alpha_factor * eta
  double eta_prime = 0.0;   // 0 selects eta' = N
  double lambda = 1e-6;     // trace regularizer
};

/// (1/N) Phi Phi^T for Phi of shape [K,N].
Tensor autocorrelation(const Tensor& phi);

/// M / (trace(M) + lambda); differentiable through the trace.
Tensor trace_normalize(const Tensor& m, double lambda = 1e-6);

/// min(eta*M, 1) elementwise; subgradient eta below the clamp, 0 above, with
/// the boundary treated as below.
Tensor pn_maxexp(const Tensor& m, double eta);

/// Smooth positive/negative co-occurrence pooling:
///   (1 - (1-rho)*smax(0,-m))^eta - (1 - rho*smax(0,m))^eta
/// with smax(0,x) = (1/alpha) log(exp(0) + exp(alpha x)).
Tensor pn_maxexp_pm(const Tensor& m, double eta, double rho, double alpha);

/// 2 / (1 + exp(-eta' * M / (trace(M) + lambda))) - 1; takes the raw
/// autocorrelation and trace-normalizes internally.
Tensor pn_sigme(const Tensor& m, double eta_prime, double lambda = 1e-6);

/// Full pooling chain for a feature map [K,N]: autocorrelation,
/// trace-normalization, then the selected PN operator. `eta`/`eta_prime`
/// default to N when left at 0.
Tensor pooled_rep(const Tensor& phi, PnKind kind, const PnParams& params);

/// Applies trace-normalization plus the selected PN to an autocorrelation
/// matrix whose pooled-map size was `n_locations`.
Tensor normalize_and_pn(const Tensor& autocorr, int n_locations, PnKind kind,
                        const PnParams& params);

// Scalar reference forms of the pooling family, used by verification suites.
namespace pnref {

/// 1 - (1-p)^eta: probability of at least one co-occurrence in eta trials.
double maxexp(double p, double eta);

/// min(eta*p, 1): the clamp upper bound of the MaxExp operator.
double maxexp_clamp(double p, double eta);

/// Hard MaxExp(+-): (1-(1-rho)max(0,-p))^eta - (1-rho max(0,p))^eta.
double maxexp_pm_hard(double p, double eta, double rho);

/// Soft MaxExp(+-) with soft maximum of sharpness alpha.
double maxexp_pm_soft(double p, double eta, double rho, double alpha);

/// SigmE: 2/(1+exp(-eta'*p)) - 1.
double sigme(double p, double eta_prime);

/// Closed form (1-q)^n - (1-p)^n: probability of at least one positive
/// co-occurrence minus at least one negative one in n trials.
double cooccurrence_difference(int n, double p, double q);

}  // namespace pnref

}  // namespace mlso

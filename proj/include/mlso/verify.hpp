#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mlso/rng.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

/// One verification check outcome.
struct VerifyCheck {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

// --- independent oracles -----------------------------------------------------

namespace oracle {

/// Brute-force kernel identity gap: |<F(A),F(B)>_F - (1/(N N*)) sum sum <a_n, b_n'>^2|
/// for column-major feature lists; both sides evaluated with plain loops.
double kernel_identity_gap(const std::vector<std::vector<double>>& phi_a,
                           const std::vector<std::vector<double>>& phi_b);

/// Brute-force multinomial double sum over trial outcomes: the probability of
/// at least one positive co-occurrence minus at least one negative one.
double multinomial_cooccurrence_sum(int n, double p, double q);

/// Random feasible transport plan via Sinkhorn-style rescaling of a random
/// positive matrix; marginal residual shrinks below ~1e-12.
std::vector<double> random_feasible_plan(int rows, int cols,
                                         const std::vector<double>& row_marginals,
                                         const std::vector<double>& col_marginals, Rng& rng);

/// Grid-searches eta' minimizing the max deviation of SigmE from the hard
/// MaxExp(+-) on p in [-1,1]; returns the minimal deviation, eta' via out-param.
double sigme_best_fit_deviation(double eta, double rho, double* best_eta_prime = nullptr);

/// Finite-difference gradient check against a parameter tensor that the
/// function reads in place (for model parameters).
double check_gradients_inplace(const std::function<Tensor()>& f, Tensor param,
                               double eps = 1e-5);

}  // namespace oracle

// --- verification suites -------------------------------------------------------

std::vector<VerifyCheck> verify_kernel_identity(int cases, std::uint64_t seed);
std::vector<VerifyCheck> verify_multinomial_identity();
std::vector<VerifyCheck> verify_pn_bound();
std::vector<VerifyCheck> verify_soft_hard_convergence();
std::vector<VerifyCheck> verify_ot(int instances, int random_plans, std::uint64_t seed);
std::vector<VerifyCheck> verify_rbf_prior();
std::vector<VerifyCheck> verify_inference_rule(int tables, std::uint64_t seed);
/// Finite-difference checks for every differentiable operation and loss.
std::vector<VerifyCheck> verify_gradients(std::uint64_t seed);

/// Every suite in a fixed order.
std::vector<VerifyCheck> run_verification(std::uint64_t seed);

}  // namespace mlso

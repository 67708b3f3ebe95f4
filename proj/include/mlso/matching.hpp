#pragma once

#include <vector>

#include "mlso/params.hpp"
#include "mlso/tensor.hpp"

namespace mlso {

enum class MatchStrategy { None, CM, GM, OT, GR };
enum class MatchMode { Intra, Inter };

/// RBF similarity prior over scale indexes: exp(-(s-s')^2 / (2 sigma'^2))
/// with sigma' = (S-1)/3, so the factor at the maximum gap S-1 is exp(-4.5).
double rbf_scale_prior(int s, int s_prime, int num_scales);

/// Clamped cosine similarity of two equal-length vectorized reps, in [0,1],
/// differentiable through both arguments.
Tensor cosine_match(const Tensor& psi_a, const Tensor& psi_b);

/// Eq-style reweighting of a relation score by a matching weight.
Tensor weighted_score(const Tensor& alpha, const Tensor& zeta);

/// Exact optimal plan of a balanced transportation problem.
struct TransportPlan {
  std::vector<double> flow;  // row-major [rows x cols]
  int rows = 0;
  int cols = 0;
  double objective = 0.0;

  double at(int r, int c) const { return flow[static_cast<std::size_t>(r) * cols + c]; }
  double max_marginal_residual(const std::vector<double>& row_marginals,
                               const std::vector<double>& col_marginals) const;
};

/// Solves min <w, cost> s.t. row sums = row_marginals, col sums = col_marginals,
/// w >= 0, by enumerating basic feasible solutions (exact for the small scale
/// counts used here; guarded to at most 5x5). Marginal masses must balance.
TransportPlan solve_transport(const std::vector<double>& cost, int rows, int cols,
                              std::vector<double> row_marginals,
                              std::vector<double> col_marginals);

/// Transport marginals: max(0, <psi_s, mean of the opposite side's reps>),
/// normalized to sum 1, with an all-zero fallback to uniform.
std::vector<double> transport_marginals(const std::vector<std::vector<double>>& side,
                                        const std::vector<std::vector<double>>& opposite);

/// GNN-based scale-graph matcher. Nodes are the S support reps followed by
/// the S query reps; the adjacency is the rep dot-product weighted by the RBF
/// scale prior; two propagation steps precede an MLP readout with a sigmoid.
class GraphMatcher {
 public:
  /// `feature_dims[i]` is the vectorized rep length K^2 of parameter set i;
  /// `num_nodes` is the graph size (2S intra, 2*D*S inter).
  GraphMatcher(std::vector<int> feature_dims, int num_nodes, ParamSet& params, Rng& rng,
               int hidden = 32);

  /// Relation score in (0,1) for one support/query pair given their pooled
  /// reps (each [K,K], vectorized internally). `scales[i]` is the 1-based
  /// scale index of node i (support nodes first, then query nodes).
  Tensor score(const std::vector<Tensor>& support_reps, const std::vector<Tensor>& query_reps,
               const std::vector<int>& scales, int num_scales, int set_index = 0) const;

  /// Adjacency over the node set; entries <psi_i, psi_j> * rbf(scale_i,
  /// scale_j). Exactly symmetric by construction.
  Tensor adjacency(const std::vector<Tensor>& support_reps,
                   const std::vector<Tensor>& query_reps, const std::vector<int>& scales,
                   int num_scales) const;

 private:
  struct Set {
    Tensor w1, w2;          // propagation weights
    Tensor mlp_w1, mlp_b1;  // readout
    Tensor mlp_w2, mlp_b2;
  };
  std::vector<int> feature_dims_;
  int num_nodes_;
  int hidden_;
  std::vector<Set> sets_;
};

}  // namespace mlso

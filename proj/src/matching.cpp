#include "mlso/matching.hpp"

#include <cmath>
#include <string>

namespace mlso {

double rbf_scale_prior(int s, int s_prime, int num_scales) {
  if (s == s_prime) return 1.0;
  if (num_scales < 2) throw ConfigError("rbf_scale_prior: distinct scales require S >= 2");
  const double sigma = (num_scales - 1) / 3.0;
  const double gap = s - s_prime;
  return std::exp(-(gap * gap) / (2.0 * sigma * sigma));
}

Tensor cosine_match(const Tensor& psi_a, const Tensor& psi_b) {
  if (psi_a.size() != psi_b.size()) throw ShapeError("cosine_match: length mismatch");
  Tensor a = psi_a.rank() == 1 ? psi_a : reshape(psi_a, {static_cast<int>(psi_a.size())});
  Tensor b = psi_b.rank() == 1 ? psi_b : reshape(psi_b, {static_cast<int>(psi_b.size())});
  Tensor norm_a = pow_scalar(sum(mul(a, a)), 0.5);
  Tensor norm_b = pow_scalar(sum(mul(b, b)), 0.5);
  Tensor denom = max_scalar(mul(norm_a, norm_b), 1e-24);
  return max_scalar(divide(dot(a, b), denom), 0.0);
}

Tensor weighted_score(const Tensor& alpha, const Tensor& zeta) { return mul(alpha, zeta); }

double TransportPlan::max_marginal_residual(const std::vector<double>& row_marginals,
                                            const std::vector<double>& col_marginals) const {
  double worst = 0.0;
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += at(r, c);
    worst = std::max(worst, std::abs(acc - row_marginals[static_cast<std::size_t>(r)]));
  }
  for (int c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += at(r, c);
    worst = std::max(worst, std::abs(acc - col_marginals[static_cast<std::size_t>(c)]));
  }
  return worst;
}

namespace {

// Solves the square system A x = rhs in place; returns false when singular.
bool solve_dense(std::vector<double>& a, std::vector<double>& rhs, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(a[static_cast<std::size_t>(col) * n + col]);
    for (int r = col + 1; r < n; ++r) {
      const double v = std::abs(a[static_cast<std::size_t>(r) * n + col]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best < 1e-11) return false;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) {
        std::swap(a[static_cast<std::size_t>(col) * n + c], a[static_cast<std::size_t>(pivot) * n + c]);
      }
      std::swap(rhs[static_cast<std::size_t>(col)], rhs[static_cast<std::size_t>(pivot)]);
    }
    const double inv = 1.0 / a[static_cast<std::size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r) * n + col] * inv;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) {
        a[static_cast<std::size_t>(r) * n + c] -= f * a[static_cast<std::size_t>(col) * n + c];
      }
      rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = rhs[static_cast<std::size_t>(r)];
    for (int c = r + 1; c < n; ++c) {
      acc -= a[static_cast<std::size_t>(r) * n + c] * rhs[static_cast<std::size_t>(c)];
    }
    rhs[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r) * n + r];
  }
  return true;
}

}  // namespace

TransportPlan solve_transport(const std::vector<double>& cost, int rows, int cols,
                              std::vector<double> row_marginals,
                              std::vector<double> col_marginals) {
  if (rows < 1 || cols < 1) throw ShapeError("solve_transport: empty problem");
  if (rows > 5 || cols > 5) {
    throw ConfigError("solve_transport: basis enumeration supports at most 5x5 problems");
  }
  if (static_cast<int>(cost.size()) != rows * cols) throw ShapeError("solve_transport: cost size");
  if (static_cast<int>(row_marginals.size()) != rows ||
      static_cast<int>(col_marginals.size()) != cols) {
    throw ShapeError("solve_transport: marginal size mismatch");
  }
  double row_mass = 0.0, col_mass = 0.0;
  for (double v : row_marginals) {
    if (v < 0.0) throw DomainError("solve_transport: negative row marginal");
    row_mass += v;
  }
  for (double v : col_marginals) {
    if (v < 0.0) throw DomainError("solve_transport: negative column marginal");
    col_mass += v;
  }
  if (std::abs(row_mass - col_mass) > 1e-9 * std::max(1.0, row_mass)) {
    throw DomainError("solve_transport: unbalanced marginals");
  }

  // One row-sum or column-sum constraint is redundant in a balanced problem;
  // drop the last column constraint and enumerate bases of the remaining
  // (rows + cols - 1) equality system. Exact and fast at these sizes.
  const int vars = rows * cols;
  const int basis_size = rows + cols - 1;
  std::vector<int> basis(static_cast<std::size_t>(basis_size));
  for (int i = 0; i < basis_size; ++i) basis[static_cast<std::size_t>(i)] = i;

  TransportPlan best;
  best.rows = rows;
  best.cols = cols;
  bool found = false;
  double best_objective = 0.0;

  std::vector<double> a(static_cast<std::size_t>(basis_size) * basis_size);
  std::vector<double> rhs(static_cast<std::size_t>(basis_size));

  auto try_basis = [&]() {
    std::fill(a.begin(), a.end(), 0.0);
    for (int i = 0; i < basis_size; ++i) {
      const int var = basis[static_cast<std::size_t>(i)];
      const int r = var / cols, c = var % cols;
      a[static_cast<std::size_t>(r) * basis_size + i] = 1.0;  // row-sum constraints
      if (c < cols - 1) {
        a[static_cast<std::size_t>(rows + c) * basis_size + i] = 1.0;  // column-sum constraints
      }
    }
    for (int r = 0; r < rows; ++r) rhs[static_cast<std::size_t>(r)] = row_marginals[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols - 1; ++c) {
      rhs[static_cast<std::size_t>(rows + c)] = col_marginals[static_cast<std::size_t>(c)];
    }
    std::vector<double> mat = a;
    std::vector<double> x = rhs;
    if (!solve_dense(mat, x, basis_size)) return;
    double objective = 0.0;
    for (int i = 0; i < basis_size; ++i) {
      if (x[static_cast<std::size_t>(i)] < -1e-12) return;  // infeasible vertex
      objective += x[static_cast<std::size_t>(i)] * cost[static_cast<std::size_t>(basis[static_cast<std::size_t>(i)])];
    }
    if (!found || objective < best_objective - 1e-15) {
      found = true;
      best_objective = objective;
      best.flow.assign(static_cast<std::size_t>(vars), 0.0);
      for (int i = 0; i < basis_size; ++i) {
        best.flow[static_cast<std::size_t>(basis[static_cast<std::size_t>(i)])] =
            std::max(0.0, x[static_cast<std::size_t>(i)]);
      }
    }
  };

  // Lexicographic enumeration of all C(vars, basis_size) supports.
  while (true) {
    try_basis();
    int i = basis_size - 1;
    while (i >= 0 && basis[static_cast<std::size_t>(i)] == vars - basis_size + i) --i;
    if (i < 0) break;
    ++basis[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < basis_size; ++j) {
      basis[static_cast<std::size_t>(j)] = basis[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  if (!found) throw DomainError("solve_transport: no feasible vertex found");
  best.objective = best_objective;
  if (best.max_marginal_residual(row_marginals, col_marginals) > 1e-8) {
    throw DomainError("solve_transport: plan violates the marginal constraints");
  }
  return best;
}

std::vector<double> transport_marginals(const std::vector<std::vector<double>>& side,
                                        const std::vector<std::vector<double>>& opposite) {
  if (side.empty() || opposite.empty()) throw ShapeError("transport_marginals: empty side");
  const std::size_t dim = opposite.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& v : opposite) {
    if (v.size() != dim) throw ShapeError("transport_marginals: rep length mismatch");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  }
  for (double& v : mean) v /= static_cast<double>(opposite.size());

  std::vector<double> marginals(side.size(), 0.0);
  double mass = 0.0;
  for (std::size_t s = 0; s < side.size(); ++s) {
    if (side[s].size() != dim) throw ShapeError("transport_marginals: rep length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) acc += side[s][i] * mean[i];
    marginals[s] = std::max(0.0, acc);
    mass += marginals[s];
  }
  if (mass <= 0.0) {
    // Degenerate input: fall back to uniform marginals.
    std::fill(marginals.begin(), marginals.end(), 1.0 / static_cast<double>(side.size()));
  } else {
    for (double& v : marginals) v /= mass;
  }
  return marginals;
}

GraphMatcher::GraphMatcher(std::vector<int> feature_dims, int num_nodes, ParamSet& params,
                           Rng& rng, int hidden)
    : feature_dims_(std::move(feature_dims)), num_nodes_(num_nodes), hidden_(hidden) {
  if (feature_dims_.empty()) throw ConfigError("graph matcher: at least one parameter set");
  if (num_nodes_ < 2) throw ConfigError("graph matcher: at least two nodes");
  for (std::size_t d = 0; d < feature_dims_.size(); ++d) {
    const int dim = feature_dims_[d];
    if (dim < 1) throw ConfigError("graph matcher: invalid feature dim");
    const std::string prefix = "gr.set" + std::to_string(d) + ".";
    Set set;
    set.w1 = params.kaiming(prefix + "w1", {dim, hidden_}, dim, rng);
    set.w2 = params.kaiming(prefix + "w2", {hidden_, hidden_}, hidden_, rng);
    set.mlp_w1 = params.kaiming(prefix + "mlp.w1", {32, num_nodes_ * hidden_},
                                num_nodes_ * hidden_, rng);
    set.mlp_b1 = params.zeros(prefix + "mlp.b1", {32});
    set.mlp_w2 = params.kaiming(prefix + "mlp.w2", {1, 32}, 32, rng);
    set.mlp_b2 = params.zeros(prefix + "mlp.b2", {1});
    sets_.push_back(std::move(set));
  }
}

namespace {

Tensor node_matrix(const std::vector<Tensor>& support_reps,
                   const std::vector<Tensor>& query_reps) {
  std::vector<Tensor> rows;
  rows.reserve(support_reps.size() + query_reps.size());
  for (const auto& rep : support_reps) {
    rows.push_back(reshape(rep, {1, static_cast<int>(rep.size())}));
  }
  for (const auto& rep : query_reps) {
    rows.push_back(reshape(rep, {1, static_cast<int>(rep.size())}));
  }
  return concat(rows, 0);  // [2S, K^2]
}

}  // namespace

Tensor GraphMatcher::adjacency(const std::vector<Tensor>& support_reps,
                               const std::vector<Tensor>& query_reps,
                               const std::vector<int>& scales, int num_scales) const {
  const int nodes = static_cast<int>(support_reps.size() + query_reps.size());
  if (static_cast<int>(scales.size()) != nodes) {
    throw ShapeError("graph matcher: one scale index per node required");
  }
  Tensor h = node_matrix(support_reps, query_reps);
  Tensor dots = matmul(h, transpose(h));  // symmetric by commutativity of each product
  // Constant RBF prior over the scale index of each node.
  std::vector<double> prior(static_cast<std::size_t>(nodes) * nodes);
  for (int i = 0; i < nodes; ++i) {
    for (int j = 0; j < nodes; ++j) {
      prior[static_cast<std::size_t>(i) * nodes + j] =
          rbf_scale_prior(scales[static_cast<std::size_t>(i)],
                          scales[static_cast<std::size_t>(j)], num_scales);
    }
  }
  return mul(dots, Tensor::from({nodes, nodes}, std::move(prior)));
}

Tensor GraphMatcher::score(const std::vector<Tensor>& support_reps,
                           const std::vector<Tensor>& query_reps, const std::vector<int>& scales,
                           int num_scales, int set_index) const {
  if (set_index < 0 || set_index >= static_cast<int>(sets_.size())) {
    throw ConfigError("graph matcher: parameter set index out of range");
  }
  const Set& set = sets_[static_cast<std::size_t>(set_index)];
  const int nodes = static_cast<int>(support_reps.size() + query_reps.size());
  if (nodes != num_nodes_) {
    throw ShapeError("graph matcher: expected " + std::to_string(num_nodes_) + " nodes, got " +
                     std::to_string(nodes));
  }
  Tensor h = node_matrix(support_reps, query_reps);
  if (h.dim(1) != feature_dims_[static_cast<std::size_t>(set_index)]) {
    throw ShapeError("graph matcher: rep length mismatch for this parameter set");
  }
  Tensor adj = adjacency(support_reps, query_reps, scales, num_scales);
  h = relu(matmul(adj, matmul(h, set.w1)));
  h = relu(matmul(adj, matmul(h, set.w2)));
  Tensor flat = reshape(h, {num_nodes_ * hidden_});
  Tensor hidden = relu(linear(set.mlp_w1, flat, set.mlp_b1));
  return reshape(sigmoid(linear(set.mlp_w2, hidden, set.mlp_b2)), {});
}

}  // namespace mlso

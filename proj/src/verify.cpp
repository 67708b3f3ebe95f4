#include "mlso/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mlso/config.hpp"
#include "mlso/episodes.hpp"
#include "mlso/matching.hpp"
#include "mlso/objectives.hpp"
#include "mlso/pipeline.hpp"
#include "mlso/simnet.hpp"
#include "mlso/sop.hpp"

namespace mlso {

namespace oracle {

double kernel_identity_gap(const std::vector<std::vector<double>>& phi_a,
                           const std::vector<std::vector<double>>& phi_b) {
  const std::size_t dim = phi_a.front().size();
  const auto n_a = static_cast<double>(phi_a.size());
  const auto n_b = static_cast<double>(phi_b.size());

  auto autocorr = [&](const std::vector<std::vector<double>>& phis) {
    std::vector<double> m(dim * dim, 0.0);
    for (const auto& phi : phis) {
      for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) m[i * dim + j] += phi[i] * phi[j];
      }
    }
    for (double& v : m) v /= static_cast<double>(phis.size());
    return m;
  };
  const auto fa = autocorr(phi_a);
  const auto fb = autocorr(phi_b);
  double frob = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) frob += fa[i] * fb[i];

  double double_sum = 0.0;
  for (const auto& a : phi_a) {
    for (const auto& b : phi_b) {
      double inner = 0.0;
      for (std::size_t i = 0; i < dim; ++i) inner += a[i] * b[i];
      double_sum += inner * inner;
    }
  }
  double_sum /= n_a * n_b;
  return std::abs(frob - double_sum);
}

double multinomial_cooccurrence_sum(int n, double p, double q) {
  static const double kFactorial[] = {1, 1, 2, 6, 24, 120, 720, 5040, 40320, 362880, 3628800};
  double total = 0.0;
  for (int k = 1; k <= n; ++k) {
    for (int k2 = 0; k2 <= n - k; ++k2) {
      const int rest = n - k - k2;
      const double coeff = kFactorial[n] / (kFactorial[k] * kFactorial[k2] * kFactorial[rest]);
      const double signed_term = std::pow(p, k) * std::pow(q, k2) - std::pow(p, k2) * std::pow(q, k);
      total += coeff * signed_term * std::pow(1.0 - p - q, rest);
    }
  }
  return total;
}

std::vector<double> random_feasible_plan(int rows, int cols,
                                         const std::vector<double>& row_marginals,
                                         const std::vector<double>& col_marginals, Rng& rng) {
  std::vector<double> plan(static_cast<std::size_t>(rows) * cols);
  for (double& v : plan) v = rng.uniform(0.05, 1.0);
  for (int iter = 0; iter < 200; ++iter) {
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int c = 0; c < cols; ++c) acc += plan[static_cast<std::size_t>(r) * cols + c];
      const double f = acc > 0.0 ? row_marginals[static_cast<std::size_t>(r)] / acc : 0.0;
      for (int c = 0; c < cols; ++c) plan[static_cast<std::size_t>(r) * cols + c] *= f;
    }
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r) acc += plan[static_cast<std::size_t>(r) * cols + c];
      const double f = acc > 0.0 ? col_marginals[static_cast<std::size_t>(c)] / acc : 0.0;
      for (int r = 0; r < rows; ++r) plan[static_cast<std::size_t>(r) * cols + c] *= f;
    }
  }
  return plan;
}

double sigme_best_fit_deviation(double eta, double rho, double* best_eta_prime) {
  double best_dev = 1e300;
  double best_ep = 0.0;
  for (double ep = 0.5; ep <= 120.0; ep += 0.05) {
    double dev = 0.0;
    for (int i = -1000; i <= 1000; ++i) {
      const double p = i / 1000.0;
      dev = std::max(dev, std::abs(pnref::sigme(p, ep) - pnref::maxexp_pm_hard(p, eta, rho)));
      if (dev >= best_dev) break;
    }
    if (dev < best_dev) {
      best_dev = dev;
      best_ep = ep;
    }
  }
  if (best_eta_prime) *best_eta_prime = best_ep;
  return best_dev;
}

double check_gradients_inplace(const std::function<Tensor()>& f, Tensor param, double eps) {
  Tape tape;
  Tensor analytic;
  {
    TapeScope scope(tape);
    Tensor y = f();
    GradientMap grads = tape.backward(y);
    analytic = grads.grad(param);
  }
  double worst = 0.0;
  auto& values = param.raw();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + eps;
    const double up = f().value();
    values[i] = keep - eps;
    const double down = f().value();
    values[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12));
  }
  return worst;
}

}  // namespace oracle

namespace {

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

VerifyCheck make_check(const std::string& suite, const std::string& name, bool passed,
                       const std::string& detail) {
  return VerifyCheck{suite, name, passed, detail};
}

}  // namespace

std::vector<VerifyCheck> verify_kernel_identity(int cases, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    const int dim = rng.uniform_int(2, 8);
    const int n_a = rng.uniform_int(1, 6);
    const int n_b = rng.uniform_int(1, 6);
    auto draw = [&](int count) {
      std::vector<std::vector<double>> phis(static_cast<std::size_t>(count));
      for (auto& phi : phis) {
        phi.resize(static_cast<std::size_t>(dim));
        for (double& v : phi) v = rng.uniform(-1.5, 1.5);
      }
      return phis;
    };
    worst = std::max(worst, oracle::kernel_identity_gap(draw(n_a), draw(n_b)));
  }
  return {make_check("kernel_identity",
                     "frobenius inner product equals the mean squared dot-product double sum",
                     worst < 1e-10, "max gap " + format_value(worst) + " (bound 1e-10)")};
}

std::vector<VerifyCheck> verify_multinomial_identity() {
  double worst = 0.0;
  for (int n = 1; n <= 6; ++n) {
    for (int pi = 0; pi <= 10; ++pi) {
      for (int qi = 0; pi + qi <= 10; ++qi) {
        const double p = pi / 10.0;
        const double q = qi / 10.0;
        const double gap = std::abs(pnref::cooccurrence_difference(n, p, q) -
                                    oracle::multinomial_cooccurrence_sum(n, p, q));
        worst = std::max(worst, gap);
      }
    }
  }
  return {make_check("multinomial_identity",
                     "closed form matches the brute-force multinomial double sum",
                     worst < 1e-9, "max gap " + format_value(worst) + " (bound 1e-9)")};
}

std::vector<VerifyCheck> verify_pn_bound() {
  bool holds = true;
  double worst_violation = 0.0;
  for (double eta : {5.0, 20.0, 50.0}) {
    for (int i = 0; i <= 1000; ++i) {
      const double p = i / 1000.0;
      const double lhs = pnref::maxexp(p, eta);
      const double rhs = pnref::maxexp_clamp(p, eta);
      if (lhs > rhs + 1e-12) {
        holds = false;
        worst_violation = std::max(worst_violation, lhs - rhs);
      }
    }
  }
  return {make_check("pn_bound", "1-(1-p)^eta <= min(eta p, 1) on the unit grid", holds,
                     holds ? "no violations" : "violation " + format_value(worst_violation))};
}

std::vector<VerifyCheck> verify_soft_hard_convergence() {
  std::vector<VerifyCheck> checks;
  const double eta = 20.0, rho = 0.5;
  std::vector<double> deviations;
  for (double alpha : {100.0, 400.0, 1600.0}) {
    double dev = 0.0;
    for (int i = -1000; i <= 1000; ++i) {
      const double p = i / 1000.0;
      dev = std::max(dev, std::abs(pnref::maxexp_pm_soft(p, eta, rho, alpha) -
                                   pnref::maxexp_pm_hard(p, eta, rho)));
    }
    deviations.push_back(dev);
  }
  const bool decreasing = deviations[0] > deviations[1] && deviations[1] > deviations[2];
  checks.push_back(make_check(
      "soft_hard", "soft MaxExp(+-) deviation strictly decreases with alpha", decreasing,
      format_value(deviations[0]) + " > " + format_value(deviations[1]) + " > " +
          format_value(deviations[2])));

  const bool antisym = [&] {
    for (int i = 0; i <= 1000; ++i) {
      const double p = i / 1000.0;
      if (std::abs(pnref::maxexp_pm_hard(p, eta, 0.5) + pnref::maxexp_pm_hard(-p, eta, 0.5)) >
          1e-12) {
        return false;
      }
    }
    return true;
  }();
  checks.push_back(make_check("soft_hard", "hard MaxExp(+-) is odd at rho = 0.5", antisym,
                              antisym ? "psi(p) = -psi(-p)" : "asymmetry detected"));
  return checks;
}

std::vector<VerifyCheck> verify_ot(int instances, int random_plans, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VerifyCheck> checks;

  double worst_residual = 0.0;
  bool optimal = true;
  for (int i = 0; i < instances; ++i) {
    const int s = 3;
    std::vector<double> cost(9);
    for (double& v : cost) v = rng.uniform(0.0, 1.0);
    std::vector<double> rowm(3), colm(3);
    double rmass = 0.0, cmass = 0.0;
    for (double& v : rowm) {
      v = rng.uniform(0.05, 1.0);
      rmass += v;
    }
    for (double& v : colm) {
      v = rng.uniform(0.05, 1.0);
      cmass += v;
    }
    for (double& v : rowm) v /= rmass;
    for (double& v : colm) v /= cmass;

    TransportPlan plan = solve_transport(cost, s, s, rowm, colm);
    worst_residual = std::max(worst_residual, plan.max_marginal_residual(rowm, colm));
    for (int r = 0; r < random_plans; ++r) {
      const auto feasible = oracle::random_feasible_plan(s, s, rowm, colm, rng);
      double objective = 0.0;
      for (std::size_t k = 0; k < feasible.size(); ++k) objective += feasible[k] * cost[k];
      if (plan.objective > objective + 1e-9) optimal = false;
    }
  }
  checks.push_back(make_check("ot", "plan marginal residuals below 1e-8", worst_residual < 1e-8,
                              "max residual " + format_value(worst_residual)));
  checks.push_back(make_check("ot", "objective never exceeds any random feasible plan", optimal,
                              std::to_string(instances) + " instances x " +
                                  std::to_string(random_plans) + " plans"));

  // Hand-derived 2x2 instance: the feasible family is one-dimensional.
  TransportPlan plan = solve_transport({0.0, 1.0, 1.0, 0.0}, 2, 2, {0.7, 0.3}, {0.4, 0.6});
  const bool exact = std::abs(plan.at(0, 0) - 0.4) < 1e-12 && std::abs(plan.at(0, 1) - 0.3) < 1e-12 &&
                     std::abs(plan.at(1, 0) - 0.0) < 1e-12 && std::abs(plan.at(1, 1) - 0.3) < 1e-12 &&
                     std::abs(plan.objective - 0.3) < 1e-12;
  checks.push_back(make_check("ot", "2x2 instance yields the hand-derived optimal plan", exact,
                              "objective " + format_value(plan.objective)));
  return checks;
}

std::vector<VerifyCheck> verify_rbf_prior() {
  bool exact = true;
  bool monotone = true;
  for (int s_count : {2, 3, 4}) {
    const double at_max = rbf_scale_prior(1, s_count, s_count);
    if (std::abs(at_max - std::exp(-4.5)) > 1e-12) exact = false;
    double prev = rbf_scale_prior(1, 1, s_count);
    for (int gap = 1; gap < s_count; ++gap) {
      const double v = rbf_scale_prior(1, 1 + gap, s_count);
      if (v >= prev) monotone = false;
      prev = v;
    }
  }
  return {make_check("rbf_prior", "factor at the maximum scale gap equals exp(-4.5)", exact,
                     "sigma' = (S-1)/3 for S in {2,3,4}"),
          make_check("rbf_prior", "prior decays monotonically in |s - s'|", monotone, "")};
}

std::vector<VerifyCheck> verify_inference_rule(int tables, std::uint64_t seed) {
  Rng rng(seed);
  bool brute_match = true;
  bool argmax_match = true;
  for (int t = 0; t < tables; ++t) {
    const int way = rng.uniform_int(2, 10);
    const int levels = rng.uniform_int(1, 4);
    std::vector<std::vector<std::pair<double, double>>> votes(static_cast<std::size_t>(way));
    for (auto& v : votes) {
      for (int d = 0; d < levels; ++d) v.emplace_back(1.0, rng.uniform(0.0, 1.0));
    }
    const int predicted = infer_class(votes);
    // Independent enumeration of the deviation sums.
    int expected = -1;
    double best = 1e300;
    for (int l = 0; l < way; ++l) {
      double dev = 0.0;
      for (const auto& [w, val] : votes[static_cast<std::size_t>(l)]) {
        dev += w * (val - 1.0) * (val - 1.0);
      }
      if (dev < best) {
        best = dev;
        expected = l;
      }
    }
    if (predicted != expected) brute_match = false;
    if (levels == 1) {
      int argmax = 0;
      for (int l = 1; l < way; ++l) {
        if (votes[static_cast<std::size_t>(l)][0].second >
            votes[static_cast<std::size_t>(argmax)][0].second) {
          argmax = l;
        }
      }
      if (predicted != argmax) argmax_match = false;
    }
  }
  return {make_check("inference", "vote rule matches brute-force enumeration", brute_match,
                     std::to_string(tables) + " random tables"),
          make_check("inference", "single-level rule equals argmax", argmax_match, "")};
}

// --- gradient suite ------------------------------------------------------------

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> values(static_cast<std::size_t>(shape_size(shape)));
  for (double& v : values) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(values));
}

struct GradientCase {
  std::string name;
  std::function<double(Rng&)> run;  // returns max rel error over one random point
};

// Weighted sum turns any output into a scalar with distinctive gradients.
// Weights depend only on the shape, so repeated evaluations of the same
// probe function see identical weights (finite differences require this).
Tensor weighted(const Tensor& t) {
  Rng rng(0xC0FFEEULL ^ splitmix64(static_cast<std::uint64_t>(shape_size(t.shape()))));
  Tensor w = random_tensor(t.shape(), rng, 0.3, 1.3);
  return sum(mul(t, w));
}

}  // namespace

std::vector<VerifyCheck> verify_gradients(std::uint64_t seed) {
  std::vector<GradientCase> cases;
  auto add_case = [&](const std::string& name, std::function<double(Rng&)> run) {
    cases.push_back({name, std::move(run)});
  };

  add_case("matmul/lhs", [](Rng& rng) {
    Tensor b = random_tensor({4, 2}, rng);
    Tensor x = random_tensor({3, 4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(matmul(t, b)); }, x);
  });
  add_case("matmul/rhs", [](Rng& rng) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor x = random_tensor({4, 2}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(matmul(a, t)); }, x);
  });
  add_case("transpose", [](Rng& rng) {
    Tensor x = random_tensor({3, 5}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(transpose(t)); }, x);
  });
  add_case("conv2d/input", [](Rng& rng) {
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor x = random_tensor({2, 5, 5}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(conv2d(t, k, 1, 1)); }, x);
  });
  add_case("conv2d/kernels", [](Rng& rng) {
    Tensor img = random_tensor({2, 5, 5}, rng);
    Tensor x = random_tensor({3, 2, 3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(conv2d(img, t, 1, 1)); },
                           x);
  });
  add_case("conv2d/stride2", [](Rng& rng) {
    Tensor k = random_tensor({2, 1, 3, 3}, rng);
    Tensor x = random_tensor({1, 7, 7}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(conv2d(t, k, 2, 0)); }, x);
  });
  add_case("add", [](Rng& rng) {
    Tensor b = random_tensor({3, 3}, rng);
    Tensor x = random_tensor({3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(add(t, b)); }, x);
  });
  add_case("sub/rhs", [](Rng& rng) {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor x = random_tensor({3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(sub(a, t)); }, x);
  });
  add_case("mul", [](Rng& rng) {
    Tensor b = random_tensor({3, 3}, rng, 0.2, 1.5);
    Tensor x = random_tensor({3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(mul(t, b)); }, x);
  });
  add_case("divide/lhs", [](Rng& rng) {
    Tensor b = random_tensor({3, 3}, rng, 0.5, 2.0);
    Tensor x = random_tensor({3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(divide(t, b)); }, x);
  });
  add_case("divide/rhs", [](Rng& rng) {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor x = random_tensor({3, 3}, rng, 0.5, 2.0);
    return check_gradients([&](const Tensor& t) { return weighted(divide(a, t)); }, x);
  });
  add_case("add_scalar", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(add_scalar(t, 0.7)); }, x);
  });
  add_case("mul_scalar", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(mul_scalar(t, -1.3)); },
                           x);
  });
  add_case("pow_scalar/1.7", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng, 0.4, 1.8);
    return check_gradients([&](const Tensor& t) { return weighted(pow_scalar(t, 1.7)); }, x);
  });
  add_case("pow_scalar/0.5", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng, 0.5, 4.0);
    return check_gradients([&](const Tensor& t) { return weighted(pow_scalar(t, 0.5)); }, x);
  });
  add_case("exp", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(exp(t)); }, x);
  });
  add_case("log", [](Rng& rng) {
    Tensor x = random_tensor({4}, rng, 0.3, 3.0);
    return check_gradients([&](const Tensor& t) { return weighted(log(t)); }, x);
  });
  add_case("relu", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng);
    for (double& v : x.raw()) {
      if (std::abs(v) < 0.05) v = 0.15;  // keep away from the kink
    }
    return check_gradients([&](const Tensor& t) { return weighted(relu(t)); }, x);
  });
  add_case("sigmoid", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng, -3.0, 3.0);
    return check_gradients([&](const Tensor& t) { return weighted(sigmoid(t)); }, x);
  });
  add_case("min_scalar", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng);
    for (double& v : x.raw()) {
      if (std::abs(v - 0.2) < 0.05) v = 0.5;  // keep away from the clamp
    }
    return check_gradients([&](const Tensor& t) { return weighted(min_scalar(t, 0.2)); }, x);
  });
  add_case("max_scalar", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng);
    for (double& v : x.raw()) {
      if (std::abs(v + 0.1) < 0.05) v = 0.4;
    }
    return check_gradients([&](const Tensor& t) { return weighted(max_scalar(t, -0.1)); },
                           x);
  });
  add_case("soft_max0", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng, -2.0, 2.0);
    return check_gradients([&](const Tensor& t) { return weighted(soft_max0(t, 3.0)); }, x);
  });
  add_case("scale/lhs", [](Rng& rng) {
    Tensor s = Tensor::scalar(rng.uniform(0.5, 1.5));
    Tensor x = random_tensor({3, 3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(scale(t, s)); }, x);
  });
  add_case("scale/rhs", [](Rng& rng) {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor x = Tensor::scalar(rng.uniform(0.5, 1.5));
    return check_gradients([&](const Tensor& t) { return weighted(scale(a, t)); }, x);
  });
  add_case("sum", [](Rng& rng) {
    Tensor x = random_tensor({3, 4}, rng);
    return check_gradients([&](const Tensor& t) { return sum(t); }, x);
  });
  add_case("mean", [](Rng& rng) {
    Tensor x = random_tensor({5}, rng);
    return check_gradients([&](const Tensor& t) { return mean(t); }, x);
  });
  add_case("trace", [](Rng& rng) {
    Tensor x = random_tensor({4, 4}, rng);
    return check_gradients([&](const Tensor& t) { return trace(t); }, x);
  });
  add_case("logsumexp", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng, -2.0, 2.0);
    return check_gradients([&](const Tensor& t) { return logsumexp(t); }, x);
  });
  add_case("reshape", [](Rng& rng) {
    Tensor x = random_tensor({2, 6}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(reshape(t, {3, 4})); }, x);
  });
  add_case("concat/part0", [](Rng& rng) {
    Tensor b = random_tensor({2, 3}, rng);
    Tensor x = random_tensor({2, 3}, rng);
    return check_gradients(
        [&](const Tensor& t) { return weighted(concat({t, b}, 0)); }, x);
  });
  add_case("concat/part1-axis1", [](Rng& rng) {
    Tensor a = random_tensor({2, 3}, rng);
    Tensor x = random_tensor({2, 2}, rng);
    return check_gradients(
        [&](const Tensor& t) { return weighted(concat({a, t}, 1)); }, x);
  });
  add_case("maxpool2x2", [](Rng& rng) {
    Tensor x = random_tensor({2, 4, 4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(maxpool2x2(t)); }, x);
  });
  add_case("avgpool2x2/odd", [](Rng& rng) {
    Tensor x = random_tensor({1, 5, 5}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(avgpool2x2(t)); }, x);
  });
  add_case("spatial_mean", [](Rng& rng) {
    Tensor x = random_tensor({3, 4, 4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(spatial_mean(t)); }, x);
  });
  add_case("channel_affine/x", [](Rng& rng) {
    Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({2}, rng);
    Tensor x = random_tensor({2, 3, 3}, rng);
    return check_gradients(
        [&](const Tensor& t) { return weighted(channel_affine(t, gamma, beta)); }, x);
  });
  add_case("channel_affine/gamma", [](Rng& rng) {
    Tensor img = random_tensor({2, 3, 3}, rng);
    Tensor beta = random_tensor({2}, rng);
    Tensor x = random_tensor({2}, rng, 0.5, 1.5);
    return check_gradients(
        [&](const Tensor& t) { return weighted(channel_affine(img, t, beta)); }, x);
  });
  add_case("channel_affine/beta", [](Rng& rng) {
    Tensor img = random_tensor({2, 3, 3}, rng);
    Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
    Tensor x = random_tensor({2}, rng);
    return check_gradients(
        [&](const Tensor& t) { return weighted(channel_affine(img, gamma, t)); }, x);
  });
  add_case("linear/weights", [](Rng& rng) {
    Tensor v = random_tensor({4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor x = random_tensor({3, 4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(linear(t, v, b)); }, x);
  });
  add_case("linear/input", [](Rng& rng) {
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor x = random_tensor({4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(linear(w, t, b)); }, x);
  });
  add_case("linear/bias", [](Rng& rng) {
    Tensor w = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({4}, rng);
    Tensor x = random_tensor({3}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(linear(w, v, t)); }, x);
  });

  // Pooling and PN operators.
  add_case("sop/autocorrelation", [](Rng& rng) {
    Tensor x = random_tensor({3, 4}, rng);
    return check_gradients([&](const Tensor& t) { return weighted(autocorrelation(t)); }, x);
  });
  add_case("sop/trace_normalize", [](Rng& rng) {
    Tensor x = random_tensor({3, 3}, rng, 0.1, 1.0);
    return check_gradients([&](const Tensor& t) { return weighted(trace_normalize(t)); }, x);
  });
  add_case("sop/pn_maxexp", [](Rng& rng) {
    Tensor x = random_tensor({3, 3}, rng, 0.01, 0.12);  // below the clamp at eta = 5
    return check_gradients([&](const Tensor& t) { return weighted(pn_maxexp(t, 5.0)); }, x);
  });
  add_case("sop/pn_maxexp_pm", [](Rng& rng) {
    Tensor x = random_tensor({3, 3}, rng, -0.8, 0.8);
    return check_gradients(
        [&](const Tensor& t) { return weighted(pn_maxexp_pm(t, 4.0, 0.5, 80.0)); }, x);
  });
  add_case("sop/pn_sigme", [](Rng& rng) {
    Tensor x = random_tensor({3, 3}, rng, 0.05, 1.0);
    return check_gradients([&](const Tensor& t) { return weighted(pn_sigme(t, 12.0)); }, x);
  });

  // Matching primitives.
  add_case("matching/cosine", [](Rng& rng) {
    Tensor b = random_tensor({6}, rng, 0.1, 1.0);
    Tensor x = random_tensor({6}, rng, 0.1, 1.0);
    return check_gradients([&](const Tensor& t) { return cosine_match(t, b); }, x);
  });
  add_case("matching/weighted_score", [](Rng& rng) {
    Tensor z = Tensor::scalar(rng.uniform(0.2, 0.8));
    Tensor x = Tensor::scalar(rng.uniform(0.2, 0.8));
    return check_gradients([&](const Tensor& t) { return weighted_score(t, z); }, x);
  });

  // Model heads: gradients flow through conv/FC stacks to the inputs.
  add_case("simnet/relate", [](Rng& rng) {
    ParamSet params;
    Rng init(rng.next_u64());
    SimNetConfig sc;
    sc.in_channels = 2;
    sc.conv_channels = 4;
    sc.fc_hidden = 4;
    SimilarityNet sn(sc, 1, params, init);
    Tensor x = random_tensor({2, 4, 4}, rng, 0.05, 0.9);
    return check_gradients([&](const Tensor& t) { return sn.relate(t, 0); }, x);
  });
  add_case("simnet/gate", [](Rng& rng) {
    ParamSet params;
    Rng init(rng.next_u64());
    GateModule gate(params, init, 4);
    Tensor x = random_tensor({4, 4}, rng, 0.05, 0.9);
    return check_gradients([&](const Tensor& t) { return gate.gate(t); }, x);
  });
  add_case("matching/graph_score", [](Rng& rng) {
    // Redraw until the readout sigmoid is unsaturated; at a saturated score
    // the true derivative underflows and central differences see only
    // rounding noise (a degenerate point for this check).
    for (int attempt = 0; attempt < 50; ++attempt) {
      ParamSet params;
      Rng init(rng.next_u64());
      GraphMatcher gr({4}, 4, params, init, 6);
      Tensor r2 = random_tensor({2, 2}, rng, 0.05, 0.9);
      Tensor q1 = random_tensor({2, 2}, rng, 0.05, 0.9);
      Tensor q2 = random_tensor({2, 2}, rng, 0.05, 0.9);
      Tensor x = random_tensor({2, 2}, rng, 0.05, 0.9);
      const double score = gr.score({x, r2}, {q1, q2}, {1, 2, 1, 2}, 2, 0).value();
      if (score < 1e-3 || score > 1.0 - 1e-3) continue;
      return check_gradients(
          [&](const Tensor& t) { return gr.score({t, r2}, {q1, q2}, {1, 2, 1, 2}, 2, 0); }, x);
    }
    throw ContractError("graph_score gradient check: no unsaturated point found");
  });

  // Losses, driven through a sigmoid so scores stay in (0,1).
  auto score_from = [](const Tensor& x, int index) {
    std::vector<double> onehot(static_cast<std::size_t>(x.size()), 0.0);
    onehot[static_cast<std::size_t>(index)] = 1.0;
    return sigmoid(dot(x, Tensor::from({static_cast<int>(x.size())}, std::move(onehot))));
  };
  add_case("loss/supervised", [score_from](Rng& rng) {
    const int way = 3, levels = 2;
    Tensor x = random_tensor({way * levels}, rng, -2.0, 2.0);
    return check_gradients(
        [&](const Tensor& t) {
          std::vector<std::vector<std::vector<Tensor>>> scores(1);
          scores[0].resize(way);
          int idx = 0;
          for (int l = 0; l < way; ++l) {
            for (int d = 0; d < levels; ++d) scores[0][static_cast<std::size_t>(l)].push_back(score_from(t, idx++));
          }
          return loss_supervised(scores, {1});
        },
        x);
  });
  add_case("loss/scalewise", [score_from](Rng& rng) {
    const int way = 2, levels = 1, scales = 2;
    Tensor x = random_tensor({way * levels * scales * scales}, rng, -2.0, 2.0);
    return check_gradients(
        [&](const Tensor& t) {
          std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>> scores(1);
          scores[0].resize(way);
          int idx = 0;
          for (int l = 0; l < way; ++l) {
            auto& per_class = scores[0][static_cast<std::size_t>(l)];
            per_class.resize(levels);
            for (int d = 0; d < levels; ++d) {
              per_class[static_cast<std::size_t>(d)].resize(scales);
              for (int si = 0; si < scales; ++si) {
                for (int sj = 0; sj < scales; ++sj) {
                  per_class[static_cast<std::size_t>(d)][static_cast<std::size_t>(si)].push_back(
                      score_from(t, idx++));
                }
              }
            }
          }
          return loss_scalewise(scores, {0});
        },
        x);
  });
  add_case("loss/matched", [score_from](Rng& rng) {
    const int way = 2, shot = 2, levels = 2;
    Tensor x = random_tensor({way * shot * levels}, rng, -2.0, 2.0);
    return check_gradients(
        [&](const Tensor& t) {
          std::vector<std::vector<std::vector<std::vector<Tensor>>>> scores(1);
          scores[0].resize(way);
          int idx = 0;
          for (int l = 0; l < way; ++l) {
            auto& per_class = scores[0][static_cast<std::size_t>(l)];
            per_class.resize(shot);
            for (int n = 0; n < shot; ++n) {
              for (int d = 0; d < levels; ++d) {
                per_class[static_cast<std::size_t>(n)].push_back(score_from(t, idx++));
              }
            }
          }
          return loss_matched(scores, {1});
        },
        x);
  });
  add_case("loss/valsd_ce", [](Rng& rng) {
    Tensor x = random_tensor({6}, rng, -2.0, 2.0);
    return check_gradients(
        [&](const Tensor& t) { return loss_valsd({t, mul_scalar(t, 0.5)}, {2, 4}); }, x);
  });
  add_case("loss/unsupervised", [score_from](Rng& rng) {
    const int levels = 1, m = 2;
    Tensor x = random_tensor({3 * m * m}, rng, -2.0, 2.0);
    return check_gradients(
        [&](const Tensor& t) {
          auto mat = [&](int base) {
            std::vector<std::vector<std::vector<Tensor>>> out(levels);
            out[0].resize(m);
            int idx = base;
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < m; ++j) out[0][static_cast<std::size_t>(i)].push_back(score_from(t, idx++));
            }
            return out;
          };
          return loss_unsupervised(mat(0), mat(m * m), mat(2 * m * m));
        },
        x);
  });

  Rng rng(seed);
  std::vector<VerifyCheck> checks;
  for (auto& grad_case : cases) {
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) worst = std::max(worst, grad_case.run(rng));
    checks.push_back(make_check("gradients", grad_case.name, worst < 1e-4,
                                "max rel err " + format_value(worst) + " (bound 1e-4)"));
  }

  // Full episode loss on a tiny network, differentiated against real
  // parameters in place.
  {
    RunConfig rc;
    rc.seed = 17;
    rc.way = 2;
    rc.shot = 1;
    rc.levels = 1;
    rc.scales = 1;
    rc.channels = {4};
    rc.sn_channels = 4;
    rc.sn_hidden = 4;
    rc.input_size = 8;
    rc.matching = "none";
    rc.synth_classes = 2;
    rc.synth_test_classes = 2;
    FewShotModel model(rc, 99);
    Rng img_rng(seed ^ 0xE91DULL);
    std::vector<Image> images;
    for (int i = 0; i < 4; ++i) {
      Image img;
      img.height = img.width = 8;
      img.pixels.resize(64);
      for (double& v : img.pixels) v = img_rng.uniform(0.0, 1.0);
      images.push_back(std::move(img));
    }
    Episode episode;
    episode.way = 2;
    episode.shot = 1;
    episode.classes = {0, 1};
    episode.support = {{&images[0]}, {&images[1]}};
    episode.queries = {&images[2], &images[3]};
    episode.query_class = {0, 1};

    auto loss_fn = [&]() { return model.score_episode(episode).relation_loss(); };
    double worst = 0.0;
    for (const auto& [name, tensor] : model.params().items()) {
      if (name == "fen.block0.shift" || name == "sn.set0.fc1.w") {
        worst = std::max(worst, oracle::check_gradients_inplace(loss_fn, tensor));
      }
    }
    checks.push_back(make_check("gradients", "episode loss vs finite differences", worst < 1e-4,
                                "max rel err " + format_value(worst) + " (bound 1e-4)"));
  }

  return checks;
}

std::vector<VerifyCheck> run_verification(std::uint64_t seed) {
  std::vector<VerifyCheck> all;
  auto append = [&](std::vector<VerifyCheck> checks) {
    for (auto& c : checks) all.push_back(std::move(c));
  };
  append(verify_kernel_identity(50, splitmix64(seed ^ 1)));
  append(verify_multinomial_identity());
  append(verify_pn_bound());
  append(verify_soft_hard_convergence());
  append(verify_ot(50, 50, splitmix64(seed ^ 2)));
  append(verify_rbf_prior());
  append(verify_inference_rule(1000, splitmix64(seed ^ 3)));
  append(verify_gradients(splitmix64(seed ^ 4)));
  return all;
}

}  // namespace mlso

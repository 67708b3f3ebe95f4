#include <doctest.h>

#include <cmath>

#include "mlso/matching.hpp"
#include "mlso/pipeline.hpp"
#include "mlso/rng.hpp"
#include "mlso/verify.hpp"

using namespace mlso;

namespace {

Tensor rand_vec(int n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from({n}, std::move(v));
}

Tensor unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  const int n = static_cast<int>(v.size());
  return Tensor::from({n}, std::move(v));
}

Image random_image(int size, Rng& rng) {
  Image img;
  img.height = img.width = size;
  img.pixels.resize(static_cast<std::size_t>(size) * size);
  for (double& v : img.pixels) v = rng.uniform(0.0, 1.0);
  return img;
}

}  // namespace

TEST_SUITE("matching") {

TEST_CASE("cosine match on aligned, orthogonal, and random pairs") {
  Tensor a = unit({1.0, 2.0, 2.0});
  CHECK(cosine_match(a, a).value() == doctest::Approx(1.0));

  Tensor e1 = Tensor::from({3}, {1.0, 0.0, 0.0});
  Tensor e2 = Tensor::from({3}, {0.0, 1.0, 0.0});
  CHECK(cosine_match(e1, e2).value() == 0.0);

  Rng rng(3);
  Tensor x = rand_vec(6, rng);
  Tensor y = rand_vec(6, rng);
  double dot_xy = 0.0, nx = 0.0, ny = 0.0;
  for (int i = 0; i < 6; ++i) {
    dot_xy += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  CHECK(cosine_match(x, y).value() ==
        doctest::Approx(std::max(0.0, dot_xy / std::sqrt(nx * ny))));
  CHECK_THROWS_AS(cosine_match(rand_vec(4, rng), rand_vec(5, rng)), ShapeError);
}

TEST_CASE("weighted score endpoints and gradient flow") {
  Tensor zeta = Tensor::scalar(0.64);
  CHECK(weighted_score(Tensor::scalar(0.0), zeta).value() == 0.0);
  CHECK(weighted_score(Tensor::scalar(1.0), zeta).value() == doctest::Approx(0.64));

  Tensor packed = Tensor::from({2}, {0.4, 0.7});
  const double err = check_gradients(
      [](const Tensor& t) {
        Tensor alpha = dot(t, Tensor::from({2}, {1.0, 0.0}));
        Tensor score = dot(t, Tensor::from({2}, {0.0, 1.0}));
        return weighted_score(alpha, score);
      },
      packed, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("transport: diagonal-dominant cost with uniform marginals picks the diagonal") {
  std::vector<double> cost(9, 1.0);
  for (int i = 0; i < 3; ++i) cost[static_cast<std::size_t>(i) * 3 + i] = 0.0;
  const std::vector<double> uniform(3, 1.0 / 3.0);
  TransportPlan plan = solve_transport(cost, 3, 3, uniform, uniform);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(plan.at(i, j) == doctest::Approx(i == j ? 1.0 / 3.0 : 0.0));
    }
  }
  CHECK(plan.objective == doctest::Approx(0.0));
}

TEST_CASE("transport: hand-derived 2x2 instance") {
  TransportPlan plan = solve_transport({0.0, 1.0, 1.0, 0.0}, 2, 2, {0.7, 0.3}, {0.4, 0.6});
  CHECK(plan.at(0, 0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(plan.at(0, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(plan.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(plan.at(1, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(plan.objective == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("transport: feasibility and optimality against random feasible plans") {
  Rng rng(7);
  for (int instance = 0; instance < 25; ++instance) {
    std::vector<double> cost(9);
    for (double& v : cost) v = rng.uniform(0.0, 1.0);
    std::vector<double> rowm(3), colm(3);
    double rmass = 0.0, cmass = 0.0;
    for (double& v : rowm) rmass += (v = rng.uniform(0.05, 1.0));
    for (double& v : colm) cmass += (v = rng.uniform(0.05, 1.0));
    for (double& v : rowm) v /= rmass;
    for (double& v : colm) v /= cmass;

    TransportPlan plan = solve_transport(cost, 3, 3, rowm, colm);
    CHECK(plan.max_marginal_residual(rowm, colm) < 1e-8);
    for (double v : plan.flow) CHECK(v >= 0.0);
    for (int trial = 0; trial < 100; ++trial) {
      const auto feasible = oracle::random_feasible_plan(3, 3, rowm, colm, rng);
      double objective = 0.0;
      for (std::size_t i = 0; i < feasible.size(); ++i) objective += feasible[i] * cost[i];
      CHECK(plan.objective <= objective + 1e-9);
    }
  }
}

TEST_CASE("transport marginals: paper definition with uniform fallback") {
  std::vector<std::vector<double>> side{{1.0, 0.0}, {0.0, 2.0}};
  std::vector<std::vector<double>> opposite{{1.0, 1.0}, {1.0, 3.0}};
  // mean of opposite = (1, 2); dots = (1, 4) -> normalized (0.2, 0.8)
  const auto marginals = transport_marginals(side, opposite);
  CHECK(marginals[0] == doctest::Approx(0.2));
  CHECK(marginals[1] == doctest::Approx(0.8));

  std::vector<std::vector<double>> zeros{{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  const auto fallback = transport_marginals(zeros, opposite);
  for (double v : fallback) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("rbf prior values and monotone decay") {
  for (int s_count : {2, 3, 4}) {
    CHECK(rbf_scale_prior(1, 1, s_count) == 1.0);
    CHECK(std::abs(rbf_scale_prior(1, s_count, s_count) - std::exp(-4.5)) < 1e-12);
    double prev = 1.0;
    for (int gap = 1; gap < s_count; ++gap) {
      const double v = rbf_scale_prior(1, 1 + gap, s_count);
      CHECK(v < prev);
      prev = v;
    }
  }
  CHECK(rbf_scale_prior(2, 2, 1) == 1.0);
  // exp(-4.5) reference value
  CHECK(std::exp(-4.5) == doctest::Approx(0.011109).epsilon(1e-4));
}

TEST_CASE("graph adjacency is exactly symmetric") {
  ParamSet params;
  Rng rng(11);
  GraphMatcher gr({9}, 4, params, rng, 6);
  Rng input_rng(13);
  auto rep = [&] {
    std::vector<double> v(9);
    for (double& x : v) x = input_rng.uniform(0.0, 1.0);
    return Tensor::from({3, 3}, std::move(v));
  };
  std::vector<Tensor> sup{rep(), rep()};
  std::vector<Tensor> qry{rep(), rep()};
  Tensor adj = gr.adjacency(sup, qry, {1, 2, 1, 2}, 2);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(adj.data()[static_cast<std::size_t>(i) * 4 + j] ==
            adj.data()[static_cast<std::size_t>(j) * 4 + i]);  // bitwise equality
    }
  }
}

TEST_CASE("graph score is relabeling-equivariant under support/query swap") {
  ParamSet params;
  Rng rng(17);
  GraphMatcher gr({4}, 4, params, rng, 6);
  Rng input_rng(19);
  auto rep = [&] {
    std::vector<double> v(4);
    for (double& x : v) x = input_rng.uniform(0.0, 1.0);
    return Tensor::from({2, 2}, std::move(v));
  };
  Tensor s1 = rep(), s2 = rep(), q1 = rep(), q2 = rep();
  // Swapping the support and query blocks permutes the adjacency rows and
  // columns consistently, so propagation features permute and the node-order
  // sensitive readout sees permuted-but-equal content. Check the adjacency
  // permutation explicitly.
  Tensor adj_a = gr.adjacency({s1, s2}, {q1, q2}, {1, 2, 1, 2}, 2);
  Tensor adj_b = gr.adjacency({q1, q2}, {s1, s2}, {1, 2, 1, 2}, 2);
  const int perm[4] = {2, 3, 0, 1};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(adj_a.data()[static_cast<std::size_t>(i) * 4 + j] ==
            doctest::Approx(adj_b.data()[static_cast<std::size_t>(perm[i]) * 4 + perm[j]]));
    }
  }
  const double score = gr.score({s1, s2}, {q1, q2}, {1, 2, 1, 2}, 2, 0).value();
  CHECK(score > 0.0);
  CHECK(score < 1.0);
}

TEST_CASE("episode assembly: strategies share inputs and emit scores in [0,1]") {
  Rng img_rng(23);
  std::vector<Image> images;
  for (int i = 0; i < 8; ++i) images.push_back(random_image(16, img_rng));
  Episode episode;
  episode.way = 2;
  episode.shot = 2;
  episode.classes = {0, 1};
  episode.support = {{&images[0], &images[1]}, {&images[2], &images[3]}};
  episode.queries = {&images[4], &images[5]};
  episode.query_class = {0, 1};

  for (const std::string& strategy : {"cm", "gm", "ot", "gr"}) {
    RunConfig config;
    config.seed = 5;
    config.way = 2;
    config.shot = 2;
    config.levels = 2;
    config.scales = 2;
    config.channels = {4, 4};
    config.sn_channels = 4;
    config.sn_hidden = 4;
    config.input_size = 16;
    config.matching = strategy;
    FewShotModel model(config, 77);
    EpisodeScores scores = model.score_episode(episode);
    REQUIRE(scores.matched.size() == 2);
    for (const auto& per_class : scores.matched) {
      for (const auto& per_support : per_class) {
        for (const auto& per_level : per_support) {
          for (const Tensor& score : per_level) {
            CHECK(score.value() >= 0.0);
            CHECK(score.value() <= 1.0);
          }
        }
      }
    }
    CHECK_NOTHROW(scores.relation_loss());
  }
}

TEST_CASE("episode assembly: degenerate single-pair CM with identical unit reps") {
  // D = S = 1 and cosine weight 1 reduces to the plain relation score.
  Rng img_rng(29);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(random_image(16, img_rng));
  Episode episode;
  episode.way = 2;
  episode.shot = 1;
  episode.classes = {0, 1};
  episode.support = {{&images[0]}, {&images[1]}};
  episode.queries = {&images[0]};  // query equals class-0 support
  episode.query_class = {0};

  RunConfig config;
  config.seed = 6;
  config.way = 2;
  config.shot = 1;
  config.levels = 1;
  config.scales = 1;
  config.channels = {4};
  config.sn_channels = 4;
  config.sn_hidden = 4;
  config.input_size = 16;
  config.matching = "cm";
  FewShotModel model(config, 91);
  EpisodeScores withcm = model.score_episode(episode);

  config.matching = "none";
  FewShotModel plain(config, 91);
  EpisodeScores baseline = plain.score_episode(episode);

  // Same init seed: identical encoder and SN parameters; for the matching
  // class the query rep equals the support rep, so alpha = 1 and the scores
  // coincide.
  CHECK(withcm.matched[0][0][0][0].value() ==
        doctest::Approx(baseline.plain[0][0][0].value()).epsilon(1e-9));
}

TEST_CASE("episode assembly: intra-level parameter isolation across levels") {
  Rng img_rng(31);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(random_image(16, img_rng));
  Episode episode;
  episode.way = 2;
  episode.shot = 1;
  episode.classes = {0, 1};
  episode.support = {{&images[0]}, {&images[1]}};
  episode.queries = {&images[2]};
  episode.query_class = {0};

  RunConfig config;
  config.seed = 7;
  config.way = 2;
  config.shot = 1;
  config.levels = 2;
  config.scales = 1;
  config.channels = {4, 4};
  config.sn_channels = 4;
  config.sn_hidden = 4;
  config.input_size = 16;
  config.matching = "none";
  FewShotModel model(config, 55);
  const double level1_before = model.score_episode(episode).plain[0][0][0].value();
  for (const auto& [name, tensor] : model.params().items()) {
    if (name.rfind("sn.set1.", 0) == 0) {
      Tensor t = tensor;
      for (double& v : t.raw()) v += 0.21;
    }
  }
  CHECK(model.score_episode(episode).plain[0][0][0].value() == level1_before);
  CHECK(model.score_episode(episode).plain[0][0][1].value() != doctest::Approx(level1_before));
}

TEST_CASE("episode assembly: inter mode enumerates all rep pairs") {
  Rng img_rng(37);
  std::vector<Image> images;
  for (int i = 0; i < 6; ++i) images.push_back(random_image(16, img_rng));
  Episode episode;
  episode.way = 2;
  episode.shot = 2;
  episode.classes = {0, 1};
  episode.support = {{&images[0], &images[1]}, {&images[2], &images[3]}};
  episode.queries = {&images[4]};
  episode.query_class = {0};

  RunConfig config;
  config.seed = 8;
  config.way = 2;
  config.shot = 2;
  config.levels = 2;
  config.scales = 2;
  config.channels = {4, 4};
  config.sn_channels = 4;
  config.sn_hidden = 4;
  config.input_size = 16;
  config.matching = "cm";
  config.matching_mode = "inter";
  FewShotModel model(config, 21);
  EpisodeScores scores = model.score_episode(episode);
  // Per (query, class, support): (D*S)^2 = 16 rep pairs; L*Z supports = 4
  // support-side images, each contributing D*S = 4 reps: 8 support reps
  // against 4 query reps per class = 32 pairs per class, 64 in total.
  CHECK(scores.pair_evaluations == 64);
  // Inter mode emits one fused score per (query, class, support).
  for (const auto& per_class : scores.matched[0]) {
    for (const auto& per_support : per_class) CHECK(per_support.size() == 1);
  }
}

TEST_CASE("strategy scores feed a strategy-agnostic training loss") {
  Rng img_rng(41);
  std::vector<Image> images;
  for (int i = 0; i < 4; ++i) images.push_back(random_image(16, img_rng));
  Episode episode;
  episode.way = 2;
  episode.shot = 1;
  episode.classes = {0, 1};
  episode.support = {{&images[0]}, {&images[1]}};
  episode.queries = {&images[2], &images[3]};
  episode.query_class = {0, 1};

  for (const std::string& strategy : {"none", "cm", "gm", "ot", "gr"}) {
    RunConfig config;
    config.seed = 9;
    config.way = 2;
    config.shot = 1;
    config.levels = 1;
    config.scales = 2;
    config.channels = {4};
    config.sn_channels = 4;
    config.sn_hidden = 4;
    config.input_size = 16;
    config.matching = strategy;
    FewShotModel model(config, 33);
    Tape tape;
    TapeScope scope(tape);
    EpisodeScores scores = model.score_episode(episode);
    Tensor loss = scores.relation_loss();
    CHECK(loss.value() >= 0.0);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.size() > 0);
  }
}

}  // TEST_SUITE

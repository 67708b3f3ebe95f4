#include <doctest.h>

#include <cmath>

#include "mlso/objectives.hpp"
#include "mlso/rng.hpp"

using namespace mlso;

namespace {

Tensor s(double v) { return Tensor::scalar(v); }

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("supervised loss: exact targets give zero, 0.5 scores give 1.25") {
  // L = 5, D = 1, one query of class 0.
  std::vector<std::vector<std::vector<Tensor>>> exact(1);
  std::vector<std::vector<std::vector<Tensor>>> half(1);
  for (int l = 0; l < 5; ++l) {
    exact[0].push_back({s(l == 0 ? 1.0 : 0.0)});
    half[0].push_back({s(0.5)});
  }
  CHECK(loss_supervised(exact, {0}).value() == 0.0);
  CHECK(loss_supervised(half, {0}).value() == doctest::Approx(1.25));
}

TEST_CASE("supervised loss equals the hand-computed double sum on random scores") {
  Rng rng(3);
  const int way = 4, levels = 3, queries = 2;
  std::vector<std::vector<std::vector<Tensor>>> scores(queries);
  std::vector<int> labels{1, 3};
  double expected = 0.0;
  for (int q = 0; q < queries; ++q) {
    scores[static_cast<std::size_t>(q)].resize(way);
    for (int l = 0; l < way; ++l) {
      for (int d = 0; d < levels; ++d) {
        const double v = rng.uniform(0.0, 1.0);
        scores[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].push_back(s(v));
        const double target = l == labels[static_cast<std::size_t>(q)] ? 1.0 : 0.0;
        expected += (v - target) * (v - target);
      }
    }
  }
  expected /= queries;
  CHECK(loss_supervised(scores, labels).value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("supervised loss rejects labels outside the episode") {
  std::vector<std::vector<std::vector<Tensor>>> scores(1);
  scores[0].push_back({s(0.5)});
  scores[0].push_back({s(0.5)});
  CHECK_THROWS_AS(loss_supervised(scores, {2}), ContractError);
}

TEST_CASE("scale-wise loss weight arithmetic") {
  // D=1, S=2, all scores 0, matching class: sum = (1 + 1/2 + 1/2 + 1/4) = 2.25.
  std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>> scores(1);
  scores[0].resize(1);
  scores[0][0].resize(1);
  scores[0][0][0] = {{s(0.0), s(0.0)}, {s(0.0), s(0.0)}};
  CHECK(loss_scalewise(scores, {0}).value() == doctest::Approx(2.25));

  // Perfect scores: zero loss.
  std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>> perfect(1);
  perfect[0].resize(1);
  perfect[0][0].resize(1);
  perfect[0][0][0] = {{s(1.0), s(1.0)}, {s(1.0), s(1.0)}};
  CHECK(loss_scalewise(perfect, {0}).value() == 0.0);
}

TEST_CASE("scale-wise loss with S=1 equals the supervised loss") {
  Rng rng(5);
  const int way = 3, levels = 2;
  std::vector<std::vector<std::vector<Tensor>>> plain(1);
  std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>> scalewise(1);
  plain[0].resize(way);
  scalewise[0].resize(way);
  for (int l = 0; l < way; ++l) {
    scalewise[0][static_cast<std::size_t>(l)].resize(levels);
    for (int d = 0; d < levels; ++d) {
      const double v = rng.uniform(0.0, 1.0);
      plain[0][static_cast<std::size_t>(l)].push_back(s(v));
      scalewise[0][static_cast<std::size_t>(l)][static_cast<std::size_t>(d)] = {{s(v)}};
    }
  }
  CHECK(loss_scalewise(scalewise, {1}).value() ==
        doctest::Approx(loss_supervised(plain, {1}).value()).epsilon(1e-12));
}

TEST_CASE("matched loss: perfect scores and brute-force triple sum") {
  std::vector<std::vector<std::vector<std::vector<Tensor>>>> perfect(1);
  perfect[0] = {{{s(1.0), s(1.0)}}, {{s(0.0), s(0.0)}}};
  CHECK(loss_matched(perfect, {0}).value() == 0.0);

  Rng rng(7);
  const int way = 3, shot = 2, levels = 2, queries = 2;
  std::vector<std::vector<std::vector<std::vector<Tensor>>>> scores(queries);
  std::vector<int> labels{2, 0};
  double expected = 0.0;
  for (int q = 0; q < queries; ++q) {
    scores[static_cast<std::size_t>(q)].resize(way);
    for (int l = 0; l < way; ++l) {
      scores[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].resize(shot);
      for (int n = 0; n < shot; ++n) {
        for (int d = 0; d < levels; ++d) {
          const double v = rng.uniform(0.0, 1.0);
          scores[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)]
                [static_cast<std::size_t>(n)].push_back(s(v));
          const double target = l == labels[static_cast<std::size_t>(q)] ? 1.0 : 0.0;
          expected += (v - target) * (v - target);
        }
      }
    }
  }
  expected /= queries;
  CHECK(loss_matched(scores, labels).value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("valsd loss: uniform logits give ln(D*S)") {
  // D=3, S=3 -> 9 classes; uniform logits -> ln 9.
  Tensor logits = Tensor::zeros({9});
  CHECK(loss_valsd({logits}, {4}).value() == doctest::Approx(std::log(9.0)).epsilon(1e-9));

  // Strongly correct logits push the loss toward zero.
  std::vector<double> confident(9, -30.0);
  confident[4] = 30.0;
  CHECK(loss_valsd({Tensor::from({9}, confident)}, {4}).value() < 1e-9);

  Rng rng(9);
  std::vector<double> raw(9);
  for (double& v : raw) v = rng.uniform(-2.0, 2.0);
  Tensor random_logits = Tensor::from({9}, raw);
  double lse = 0.0;
  const double m = *std::max_element(raw.begin(), raw.end());
  for (double v : raw) lse += std::exp(v - m);
  const double expected = m + std::log(lse) - raw[7];
  CHECK(loss_valsd({random_logits}, {7}).value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("unsupervised loss optimum and hand arithmetic") {
  auto mat = [](double v, int m) {
    std::vector<std::vector<std::vector<Tensor>>> out(1);
    out[0].resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) out[0][static_cast<std::size_t>(i)].push_back(s(v));
    }
    return out;
  };
  CHECK(loss_unsupervised(mat(1.0, 2), mat(1.0, 2), mat(0.0, 2)).value() == 0.0);
  // All 0.5, m=2, D=1: 3 matrices x 4 entries x 0.25 = 3.0.
  CHECK(loss_unsupervised(mat(0.5, 2), mat(0.5, 2), mat(0.5, 2)).value() ==
        doctest::Approx(3.0));

  Rng rng(11);
  auto rand_mat = [&](int m) {
    std::vector<std::vector<std::vector<Tensor>>> out(1);
    out[0].resize(static_cast<std::size_t>(m));
    double acc_to_one = 0.0;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        const double v = rng.uniform(0.0, 1.0);
        out[0][static_cast<std::size_t>(i)].push_back(s(v));
      }
    }
    (void)acc_to_one;
    return out;
  };
  auto zx = rand_mat(3);
  auto zy = rand_mat(3);
  auto zc = rand_mat(3);
  double expected = 0.0;
  for (const auto* mats : {&zx, &zy}) {
    for (const auto& row : (*mats)[0]) {
      for (const auto& e : row) expected += (e.value() - 1.0) * (e.value() - 1.0);
    }
  }
  for (const auto& row : zc[0]) {
    for (const auto& e : row) expected += e.value() * e.value();
  }
  CHECK(loss_unsupervised(zx, zy, zc).value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("inference: argmax equivalence at D=1 and all-ones class wins") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int way = rng.uniform_int(2, 8);
    std::vector<std::vector<std::pair<double, double>>> votes(static_cast<std::size_t>(way));
    int argmax = 0;
    for (int l = 0; l < way; ++l) {
      const double v = rng.uniform(0.0, 1.0);
      votes[static_cast<std::size_t>(l)] = {{1.0, v}};
      if (v > votes[static_cast<std::size_t>(argmax)][0].second) argmax = l;
    }
    CHECK(infer_class(votes) == argmax);
  }

  std::vector<std::vector<std::pair<double, double>>> votes{
      {{1.0, 0.4}, {1.0, 0.2}}, {{1.0, 1.0}, {1.0, 1.0}}, {{1.0, 0.9}, {1.0, 0.1}}};
  CHECK(infer_class(votes) == 1);
}

TEST_CASE("inference matches brute-force enumeration on random tables") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int way = rng.uniform_int(2, 10);
    const int levels = rng.uniform_int(1, 4);
    std::vector<std::vector<std::pair<double, double>>> votes(static_cast<std::size_t>(way));
    for (auto& v : votes) {
      for (int d = 0; d < levels; ++d) v.emplace_back(1.0, rng.uniform(0.0, 1.0));
    }
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
    CHECK(infer_class(votes) == expected);
  }
}

TEST_CASE("inference breaks ties toward the lowest class index") {
  std::vector<std::vector<std::pair<double, double>>> votes{
      {{1.0, 0.7}}, {{1.0, 0.7}}, {{1.0, 0.3}}};
  CHECK(infer_class(votes) == 0);
}

TEST_CASE("loss gradients match finite differences through sigmoid heads") {
  Rng rng(19);
  std::vector<double> raw(6);
  for (double& v : raw) v = rng.uniform(-1.5, 1.5);
  Tensor x = Tensor::from({6}, raw);
  const double err = check_gradients(
      [](const Tensor& t) {
        std::vector<std::vector<std::vector<Tensor>>> scores(1);
        scores[0].resize(3);
        for (int l = 0; l < 3; ++l) {
          for (int d = 0; d < 2; ++d) {
            std::vector<double> mask(6, 0.0);
            mask[static_cast<std::size_t>(l * 2 + d)] = 1.0;
            scores[0][static_cast<std::size_t>(l)].push_back(
                sigmoid(dot(t, Tensor::from({6}, mask))));
          }
        }
        return loss_supervised(scores, {1});
      },
      x, 1e-5);
  CHECK(err < 1e-4);
}

}  // TEST_SUITE

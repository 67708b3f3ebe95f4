#include <doctest.h>

#include "mlso/rng.hpp"
#include "mlso/simnet.hpp"

using namespace mlso;

namespace {

Tensor rand_desc(int channels, int k, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(channels) * k * k);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from({channels, k, k}, std::move(v));
}

void zero_final_layer(ParamSet& params, const std::string& prefix) {
  for (const auto& [name, tensor] : params.items()) {
    if (name == prefix + "fc2.w" || name == prefix + "fc2.b") {
      Tensor t = tensor;
      std::fill(t.raw().begin(), t.raw().end(), 0.0);
    }
  }
}

}  // namespace

TEST_SUITE("simnet") {

TEST_CASE("zeroed final layer gives 0.5 for any input") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(3);
  SimilarityNet sn(config, 1, params, rng);
  zero_final_layer(params, "sn.set0.");
  Rng input_rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    CHECK(sn.relate(rand_desc(2, 8, input_rng), 0).value() == doctest::Approx(0.5));
  }
}

TEST_CASE("scores lie strictly inside (0,1)") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(7);
  SimilarityNet sn(config, 2, params, rng);
  Rng input_rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const double score = sn.relate(rand_desc(2, 8, input_rng), trial % 2).value();
    CHECK(score > 0.0);
    CHECK(score < 1.0);
  }
}

TEST_CASE("relate rejects channel mismatches and bad set indices") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(11);
  SimilarityNet sn(config, 1, params, rng);
  Rng input_rng(13);
  CHECK_THROWS_AS(sn.relate(rand_desc(1, 8, input_rng), 0), ShapeError);
  CHECK_THROWS_AS(sn.relate(rand_desc(2, 8, input_rng), 1), ConfigError);
}

TEST_CASE("adaptive pooling accepts descriptors of different extents") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(17);
  SimilarityNet sn(config, 1, params, rng);
  Rng input_rng(19);
  CHECK_NOTHROW(sn.relate(rand_desc(2, 8, input_rng), 0));
  CHECK_NOTHROW(sn.relate(rand_desc(2, 16, input_rng), 0));
  CHECK_NOTHROW(sn.relate(rand_desc(2, 5, input_rng), 0));
}

TEST_CASE("intra-level parameter isolation") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(23);
  SimilarityNet sn(config, 3, params, rng);
  Rng input_rng(29);
  Tensor desc = rand_desc(2, 8, input_rng);
  const double level0_before = sn.relate(desc, 0).value();
  // Perturb every parameter of set 1; set 0's score must not move.
  for (const auto& [name, tensor] : params.items()) {
    if (name.rfind("sn.set1.", 0) == 0) {
      Tensor t = tensor;
      for (double& v : t.raw()) v += 0.37;
    }
  }
  CHECK(sn.relate(desc, 0).value() == level0_before);
  CHECK(sn.relate(desc, 1).value() != doctest::Approx(level0_before));
}

TEST_CASE("relate is deterministic given parameters and input") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(31);
  SimilarityNet sn(config, 1, params, rng);
  Rng input_rng(37);
  Tensor desc = rand_desc(2, 8, input_rng);
  CHECK(sn.relate(desc, 0).value() == sn.relate(desc, 0).value());
}

TEST_CASE("relate gradient w.r.t. the descriptor matches finite differences") {
  SimNetConfig config;
  config.in_channels = 2;
  config.conv_channels = 4;
  config.fc_hidden = 4;
  ParamSet params;
  Rng rng(41);
  SimilarityNet sn(config, 1, params, rng);
  Rng input_rng(43);
  Tensor desc = rand_desc(2, 6, input_rng);
  const double err = check_gradients(
      [&](const Tensor& t) {
        Tensor diff = add_scalar(sn.relate(t, 0), -1.0);
        return mul(diff, diff);
      },
      desc, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("gate: zeroed head gives 0.5 and pair weight 0.25") {
  ParamSet params;
  Rng rng(47);
  GateModule gate(params, rng);
  for (const auto& [name, tensor] : params.items()) {
    Tensor t = tensor;
    std::fill(t.raw().begin(), t.raw().end(), 0.0);
  }
  Rng input_rng(53);
  Tensor psi_a = rand_desc(1, 6, input_rng);
  Tensor psi_b = rand_desc(1, 6, input_rng);
  Tensor ga = gate.gate(reshape(psi_a, {6, 6}));
  Tensor gb = gate.gate(reshape(psi_b, {6, 6}));
  CHECK(ga.value() == doctest::Approx(0.5));
  CHECK(mul(ga, gb).value() == doctest::Approx(0.25));
}

TEST_CASE("gate pair weight is symmetric and in (0,1)") {
  ParamSet params;
  Rng rng(59);
  GateModule gate(params, rng);
  Rng input_rng(61);
  Tensor a = reshape(rand_desc(1, 6, input_rng), {6, 6});
  Tensor b = reshape(rand_desc(1, 6, input_rng), {6, 6});
  const double ab = mul(gate.gate(a), gate.gate(b)).value();
  const double ba = mul(gate.gate(b), gate.gate(a)).value();
  CHECK(ab == doctest::Approx(ba));
  CHECK(ab > 0.0);
  CHECK(ab < 1.0);
}

}  // TEST_SUITE

#include <doctest.h>

#include "mlso/encoder.hpp"
#include "mlso/rng.hpp"

using namespace mlso;

namespace {

Tensor rand_image(int size, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(size) * size);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from({1, size, size}, std::move(v));
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("downsample identity, constants, and checkerboard means") {
  Rng rng(3);
  Tensor img = rand_image(8, rng);
  Tensor same = FeatureEncoder::downsample(img, 1, 3);
  CHECK(same.data() == img.data());

  Tensor constant = Tensor::full({1, 8, 8}, 0.42);
  for (int s = 1; s <= 3; ++s) {
    Tensor down = FeatureEncoder::downsample(constant, s, 3);
    for (std::int64_t i = 0; i < down.size(); ++i) CHECK(down[i] == doctest::Approx(0.42));
  }

  std::vector<double> checker(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) checker[static_cast<std::size_t>(y) * 4 + x] = (x + y) % 2;
  }
  Tensor board = Tensor::from({1, 4, 4}, checker);
  Tensor halved = FeatureEncoder::downsample(board, 2, 3);
  CHECK(halved.shape() == Shape{1, 2, 2});
  for (std::int64_t i = 0; i < halved.size(); ++i) CHECK(halved[i] == doctest::Approx(0.5));

  CHECK_THROWS_AS(FeatureEncoder::downsample(img, 4, 3), ConfigError);
  CHECK_THROWS_AS(FeatureEncoder::downsample(img, 0, 3), ConfigError);
}

TEST_CASE("zero image produces zero feature maps at every level") {
  EncoderConfig config;
  config.channels = {4, 4};
  config.levels = 2;
  config.scales = 2;
  config.input_size = 16;
  ParamSet params;
  Rng rng(5);
  FeatureEncoder fen(config, params, rng);
  Tensor zero_img = Tensor::zeros({1, 16, 16});
  for (int s = 1; s <= 2; ++s) {
    for (const auto& fm : fen.encode_levels(zero_img, s)) {
      for (std::int64_t i = 0; i < fm.values.size(); ++i) CHECK(fm.values[i] == 0.0);
    }
  }
}

TEST_CASE("28x28 input through four halving blocks reaches a 1x1 map") {
  EncoderConfig config;
  config.channels = {4, 4, 4, 4};
  config.levels = 4;
  config.scales = 1;
  config.input_size = 28;
  ParamSet params;
  Rng rng(7);
  FeatureEncoder fen(config, params, rng);
  // 28 -> 14 -> 7 -> 3 -> 1 with floor pooling.
  CHECK(fen.level_extent(1, 1) == std::pair<int, int>{14, 14});
  CHECK(fen.level_extent(2, 1) == std::pair<int, int>{7, 7});
  CHECK(fen.level_extent(3, 1) == std::pair<int, int>{3, 3});
  CHECK(fen.level_extent(4, 1) == std::pair<int, int>{1, 1});

  Rng img_rng(9);
  auto maps = fen.encode_levels(rand_image(28, img_rng), 1);
  REQUIRE(maps.size() == 4);
  CHECK(maps[3].values.shape() == Shape{4, 1});
  CHECK(maps[0].values.shape() == Shape{4, 14 * 14});
}

TEST_CASE("scale changes spatial extent by the expected pooling arithmetic") {
  EncoderConfig config;
  config.channels = {4, 4};
  config.levels = 2;
  config.scales = 2;
  config.input_size = 32;
  ParamSet params;
  Rng rng(11);
  FeatureEncoder fen(config, params, rng);
  Rng img_rng(13);
  Tensor img = rand_image(32, img_rng);
  auto full = fen.encode_levels(img, 1);
  auto half = fen.encode_levels(img, 2);
  for (int d = 0; d < 2; ++d) {
    const auto [h1, w1] = fen.level_extent(d + 1, 1);
    const auto [h2, w2] = fen.level_extent(d + 1, 2);
    CHECK(full[static_cast<std::size_t>(d)].values.dim(1) == h1 * w1);
    CHECK(half[static_cast<std::size_t>(d)].values.dim(1) == h2 * w2);
    CHECK(h2 == h1 / 2);
  }
}

TEST_CASE("config validation rejects collapsing extents") {
  EncoderConfig config;
  config.channels = {4, 4, 4};
  config.levels = 3;
  config.scales = 3;
  config.input_size = 8;  // scale 3 gives 2x2, which dies in block 2
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("support and query share one parameter set") {
  EncoderConfig config;
  config.channels = {4};
  config.levels = 1;
  config.scales = 1;
  config.input_size = 8;
  ParamSet params;
  Rng rng(17);
  FeatureEncoder fen(config, params, rng);
  const std::size_t after_one = params.size();
  // Encoding two different images adds no parameters and reuses storage.
  Rng img_rng(19);
  Tensor support = rand_image(8, img_rng);
  Tensor query = rand_image(8, img_rng);
  auto sup_maps = fen.encode_levels(support, 1);
  auto qry_maps = fen.encode_levels(query, 1);
  CHECK(params.size() == after_one);
  CHECK(sup_maps[0].values.shape() == qry_maps[0].values.shape());
}

TEST_CASE("deterministic encodings for a fixed seed") {
  auto encode_once = [] {
    EncoderConfig config;
    config.channels = {4, 4};
    config.levels = 2;
    config.scales = 1;
    config.input_size = 12;
    ParamSet params;
    Rng rng(21);
    FeatureEncoder fen(config, params, rng);
    Rng img_rng(23);
    return fen.encode_levels(rand_image(12, img_rng), 1)[1].values.data();
  };
  CHECK(encode_once() == encode_once());
}

TEST_CASE("channel permutation of first-layer kernels permutes outputs") {
  EncoderConfig config;
  config.channels = {3};
  config.levels = 1;
  config.scales = 1;
  config.input_size = 8;

  ParamSet params_a;
  Rng rng_a(31);
  FeatureEncoder fen_a(config, params_a, rng_a);
  ParamSet params_b;
  Rng rng_b(31);
  FeatureEncoder fen_b(config, params_b, rng_b);

  // Permute output channels of B's conv kernels: (0,1,2) -> (2,0,1).
  const std::vector<int> perm{2, 0, 1};
  {
    const auto& [name, kernels_a] = params_a.items()[0];
    auto& [name_b, kernels_b] = const_cast<std::pair<std::string, Tensor>&>(params_b.items()[0]);
    REQUIRE(name == "fen.block0.kernels");
    auto& dst = kernels_b.raw();
    const auto& src = kernels_a.data();
    const std::size_t per_channel = 9;
    for (int co = 0; co < 3; ++co) {
      for (std::size_t i = 0; i < per_channel; ++i) {
        dst[static_cast<std::size_t>(perm[static_cast<std::size_t>(co)]) * per_channel + i] =
            src[static_cast<std::size_t>(co) * per_channel + i];
      }
    }
  }
  Rng img_rng(33);
  Tensor img = rand_image(8, img_rng);
  auto maps_a = fen_a.encode_levels(img, 1)[0];
  auto maps_b = fen_b.encode_levels(img, 1)[0];
  const int n = maps_a.values.dim(1);
  for (int co = 0; co < 3; ++co) {
    for (int i = 0; i < n; ++i) {
      CHECK(maps_a.values.data()[static_cast<std::size_t>(co) * n + i] ==
            doctest::Approx(maps_b.values.data()
                                [static_cast<std::size_t>(perm[static_cast<std::size_t>(co)]) * n +
                                 i]));
    }
  }
}

TEST_CASE("one forward pass yields all levels consistently") {
  EncoderConfig config;
  config.channels = {4, 4};
  config.levels = 2;
  config.scales = 1;
  config.input_size = 12;
  ParamSet params;
  Rng rng(41);
  FeatureEncoder fen(config, params, rng);
  Rng img_rng(43);
  Tensor img = rand_image(12, img_rng);
  auto all = fen.encode_levels(img, 1);
  FeatureMap deepest = fen.encode(img, 2, 1);
  CHECK(all[1].values.data() == deepest.values.data());
  CHECK(all[0].level == 1);
  CHECK(all[1].level == 2);
}

}  // TEST_SUITE

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spa/error.hpp"
#include "spa/partenc.hpp"

namespace spa {
namespace {

PartCloud random_cloud(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PartCloud c(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (int k = 0; k < 3; ++k) c(i, k) = u(rng);
  }
  return c;
}

struct Fixture {
  EncoderConfig config;
  nn::ParamSet params;

  explicit Fixture(std::size_t points, std::vector<std::size_t> hidden = {16, 32},
                   std::size_t width = 24) {
    config.points = points;
    config.hidden = std::move(hidden);
    config.width = width;
    std::mt19937_64 rng(7);
    init_part_encoder(params, config, rng);
  }
};

TEST(PartEncoder, DefaultWidths) {
  EncoderConfig config;
  nn::ParamSet params;
  std::mt19937_64 rng(0);
  init_part_encoder(params, config, rng);
  EXPECT_EQ(params.at("enc.point0.w").shape(), (nn::Shape{3, 64}));
  EXPECT_EQ(params.at("enc.point1.w").shape(), (nn::Shape{64, 128}));
  EXPECT_EQ(params.at("enc.point2.w").shape(), (nn::Shape{128, 512}));
  EXPECT_EQ(params.at("enc.out.w").shape(), (nn::Shape{512, 512}));
  EXPECT_EQ(params.at("enc.out.b").shape(), (nn::Shape{512}));
}

TEST(PartEncoder, InitBoundedByFanIn) {
  Fixture f(10);
  for (const auto& name : f.params.names()) {
    const auto& t = f.params.at(name);
    const double fan_in = name.ends_with(".w") ? static_cast<double>(t.shape()[0]) : 0.0;
    if (fan_in == 0.0) continue;
    for (double v : t.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(fan_in));
  }
}

TEST(PartEncoder, PermutationGivesBitwiseIdenticalFeature) {
  Fixture f(50);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    PartCloud cloud = random_cloud(rng, 50);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const PartCloud permuted = select_rows(cloud, perm);
    EXPECT_EQ(encode_part(cloud, f.params, f.config),
              encode_part(permuted, f.params, f.config));
  }
}

TEST(PartEncoder, DuplicatedPointsGiveIdenticalFeature) {
  Fixture f(40);
  EncoderConfig doubled = f.config;
  doubled.points = 80;
  std::mt19937_64 rng(4);
  PartCloud cloud = random_cloud(rng, 40);
  PartCloud twice(80, 3);
  twice << cloud, cloud;
  EXPECT_EQ(encode_part(cloud, f.params, f.config), encode_part(twice, f.params, doubled));
}

TEST(PartEncoder, DistinctCloudsGiveDistinctFeatures) {
  Fixture f(30);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> row(0, 29), col(0, 2);
  int distinct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PartCloud a = random_cloud(rng, 30);
    PartCloud b = a;
    b(row(rng), col(rng)) += 10.0;
    if (encode_part(a, f.params, f.config) != encode_part(b, f.params, f.config)) ++distinct;
  }
  EXPECT_EQ(distinct, 100);
}

TEST(PartEncoder, WrongPointCountIsShapeError) {
  Fixture f(20);
  std::mt19937_64 rng(6);
  EXPECT_THROW(encode_part(random_cloud(rng, 19), f.params, f.config), ShapeError);
}

TEST(PartEncoder, BatchEqualsIndependentCalls) {
  Fixture f(25);
  std::mt19937_64 rng(8);
  std::vector<PartCloud> parts;
  for (int i = 0; i < 5; ++i) parts.push_back(random_cloud(rng, 25));
  nn::Graph g;
  nn::Var batch = encode_parts(g, f.params, f.config, parts);
  ASSERT_EQ(batch.rows(), 5u);
  ASSERT_EQ(batch.cols(), f.config.width);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto single = encode_part(parts[i], f.params, f.config);
    const auto row = batch.value().subspan(i * f.config.width, f.config.width);
    EXPECT_TRUE(std::equal(single.begin(), single.end(), row.begin())) << "part " << i;
  }
}

TEST(PartEncoder, FeatureIsFinite) {
  Fixture f(1000, {64, 128}, 512);
  std::mt19937_64 rng(9);
  for (double v : encode_part(random_cloud(rng, 1000), f.params, f.config)) {
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(PartEncoder, GradientsMatchFiniteDifferences) {
  Fixture f(6, {4}, 5);
  std::mt19937_64 rng(10);
  std::vector<PartCloud> parts = {random_cloud(rng, 6), random_cloud(rng, 6)};
  const double err = nn::grad_check_params(f.params, [&](nn::Graph& g) {
    nn::Var feats = encode_parts(g, f.params, f.config, parts);
    return nn::sum(nn::square(feats));
  });
  EXPECT_LT(err, 1e-4);
}

}  // namespace
}  // namespace spa

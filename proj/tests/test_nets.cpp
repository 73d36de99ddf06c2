#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "handtex/nets.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

using ad::Var;

ArchConfig tiny_arch(int K = 3) {
  ArchConfig a;
  a.image_resolution = 16;
  a.uv_resolution = 32;
  a.pca_components = K;
  a.albedo_widths = {4, 5, 6, 7};
  a.light_widths = {3, 4, 5, 6};
  a.coeff_widths = {4, 4, 5, 5};
  a.btr_widths = {3, 4, 5, 6};
  return a;
}

UVAtlas quad_atlas(int res) {
  return build_atlas({{Vec2(0.1, 0.1), Vec2(0.9, 0.1), Vec2(0.9, 0.9)}, {Vec2(0.1, 0.1), Vec2(0.9, 0.9), Vec2(0.1, 0.9)}},
                     res, "quad");
}

PCATextureModel toy_pca(const UVAtlas& atlas, int K) {
  std::mt19937_64 rng(99);
  std::vector<TextureVector> corpus;
  for (int i = 0; i <= K; ++i) corpus.push_back(testing::random_tensor({static_cast<int>(atlas.vector_length())}, rng, 0.2, 0.8));
  return fit_pca(corpus, K);
}

// Rewrites one parameter entry in place and restores it on scope exit.
Real& param_entry(NetworkParams& p, const std::string& name, std::size_t i) { return p.tensors.at(name).mutable_value()[i]; }

TEST(Nets, InitIsDeterministicPerSeed) {
  const NetworkParams a = init_params(1, tiny_arch()), b = init_params(1, tiny_arch()), c = init_params(2, tiny_arch());
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  bool any_diff = false;
  for (const auto& [name, v] : a.tensors) {
    EXPECT_EQ(v.value().storage(), b.at(name).value().storage());
    EXPECT_TRUE(v.value().all_finite());
    any_diff |= v.value().storage() != c.at(name).value().storage();
  }
  EXPECT_TRUE(any_diff);
  for (Real v : a.at("light.head.bias").value().storage()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(a.names_of("albedo").empty());
  EXPECT_FALSE(a.names_of("btr").empty());
}

TEST(Nets, AlbedoShapeRangeAndInputCheck) {
  const NetworkParams p = init_params(3, tiny_arch());
  std::mt19937_64 rng(1);
  const Var img(testing::random_tensor({3, 16, 16}, rng));
  const Var out = albedo_forward(p, img);
  EXPECT_EQ(out.shape(), img.shape());
  for (Real v : out.value().storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(albedo_forward(p, Var(Tensor({3, 32, 32}))), std::exception);
}

TEST(Nets, AlbedoWeightGradients) {
  NetworkParams p = init_params(4, tiny_arch());
  std::mt19937_64 rng(2);
  const Var img(testing::random_tensor({3, 16, 16}, rng));
  const Tensor w = testing::random_tensor({3, 16, 16}, rng, -1, 1);
  int checked = 0;
  double worst = 0;
  std::uniform_int_distribution<std::size_t> pick(0, 1u << 30);
  const auto names = p.names_of("albedo");
  // Analytic gradients for all weights at once.
  ad::backward(testing::probe(albedo_forward(p, img), w));
  for (int trial = 0; trial < 24; ++trial) {
    const std::string& name = names[pick(rng) % names.size()];
    const std::size_t i = pick(rng) % p.at(name).size();
    const Real analytic = p.at(name).has_grad() ? p.at(name).grad()[i] : 0.0;
    Real& x = param_entry(p, name, i);
    const Real saved = x, h = 1e-5;
    x = saved + h;
    const Real fp = testing::probe(albedo_forward(p, img), w).item();
    x = saved - h;
    const Real fm = testing::probe(albedo_forward(p, img), w).item();
    x = saved;
    const Real numeric = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
    ++checked;
  }
  EXPECT_EQ(checked, 24);
  EXPECT_LT(worst, 1e-3);
}

TEST(Nets, LightRangeUnitDirectionAndMidpoint) {
  const NetworkParams p = init_params(5, tiny_arch());
  std::mt19937_64 rng(3);
  for (int t = 0; t < 3; ++t) {
    const LightOutput lo = light_forward(p, Var(testing::random_tensor({3, 16, 16}, rng)));
    const Tensor& l = lo.light.value();
    for (int i = 0; i < 9; ++i) {
      EXPECT_GE(l[i], 0.2);
      EXPECT_LE(l[i], 1.0);
    }
    EXPECT_NEAR(std::sqrt(l[9] * l[9] + l[10] * l[10] + l[11] * l[11]), 1.0, 1e-6);
  }
  const Tensor zero_colors({12}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0.3, 0.4, 0.5});
  const LightOutput mid = light_from_head(Var(zero_colors));
  for (int i = 0; i < 9; ++i) EXPECT_EQ(mid.light.value()[i], 0.6);
  const LightOutput degenerate = light_from_head(Var(Tensor({12})));
  EXPECT_TRUE(degenerate.degenerate_direction);
  EXPECT_EQ(degenerate.light.value()[11], -1.0);
}

TEST(Nets, LightAndCoeffGradients) {
  const NetworkParams p = init_params(6, tiny_arch());
  const UVAtlas atlas = quad_atlas(32);
  const PCATextureModel pca = toy_pca(atlas, 3);
  std::mt19937_64 rng(4);
  const Tensor img = testing::random_tensor({3, 16, 16}, rng);
  const Tensor w12 = testing::random_tensor({12}, rng, -1, 1);
  const Tensor w3 = testing::random_tensor({3}, rng, -1, 1);
  auto light = [&](const Var& x) { return testing::probe(light_forward(p, x).light, w12); };
  auto coeff = [&](const Var& x) {
    const CoeffOutput c = html_encode(p, x, pca);
    return ad::add(testing::probe(c.left, w3), ad::scale(testing::probe(c.right, w3), -0.5));
  };
  EXPECT_LT(testing::check_gradient(light, img, testing::random_coords(img.size(), 20, rng), 1e-5).worst, 1e-3);
  EXPECT_LT(testing::check_gradient(coeff, img, testing::random_coords(img.size(), 20, rng), 1e-5).worst, 1e-3);
}

TEST(Nets, CoeffScalingContract) {
  const NetworkParams p = init_params(7, tiny_arch());
  const UVAtlas atlas = quad_atlas(32);
  const PCATextureModel pca = toy_pca(atlas, 3);
  std::mt19937_64 rng(5);
  const CoeffOutput c = html_encode(p, Var(testing::random_tensor({3, 16, 16}, rng)), pca);
  ASSERT_EQ(c.left.size(), 3u);
  ASSERT_EQ(c.right.size(), 3u);
  const auto sd = pca.stddevs();
  for (int k = 0; k < 3; ++k) {
    EXPECT_LE(std::abs(c.left.value()[k]), 3 * sd[k] + 1e-12);
    EXPECT_LE(std::abs(c.right.value()[k]), 3 * sd[k] + 1e-12);
  }
  const CoeffOutput zero = coeffs_from_head(Var(Tensor({6})), pca);
  EXPECT_EQ(reconstruct(pca, zero.left).value().storage(), reconstruct(pca, std::vector<Real>(3, 0.0)).storage());
  EXPECT_THROW(html_encode(p, Var(Tensor({3, 16, 16})), toy_pca(atlas, 2)), std::exception);
}

TEST(Nets, BtrRangeAndSwapEquivariance) {
  const UVAtlas atlas = quad_atlas(32);
  const NetworkParams p = init_params(8, tiny_arch());
  std::mt19937_64 rng(6);
  const int len = static_cast<int>(atlas.vector_length());
  for (int t = 0; t < 5; ++t) {
    const Var a(testing::random_tensor({len}, rng)), b(testing::random_tensor({len}, rng));
    const BTROutput ab = btr_forward(p, a, b, atlas);
    const BTROutput ba = btr_forward(p, b, a, atlas);
    EXPECT_EQ(ab.left.value().storage(), ba.right.value().storage());
    EXPECT_EQ(ab.right.value().storage(), ba.left.value().storage());
    for (Real v : ab.left.value().storage()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  EXPECT_THROW(btr_forward(p, Var(Tensor({len - 3})), Var(Tensor({len})), atlas), std::exception);
}

TEST(Nets, InstanceNormVariant) {
  ArchConfig arch = tiny_arch();
  arch.image_resolution = 32;
  arch.normalization = "instance";
  NetworkParams p = init_params(12, arch);
  EXPECT_EQ(p.tensors.size(), init_params(12, tiny_arch()).tensors.size());
  std::mt19937_64 rng(12);
  const Var img(testing::random_tensor({3, 32, 32}, rng));
  const Tensor w = testing::random_tensor({3, 32, 32}, rng, -1, 1);
  ad::backward(testing::probe(albedo_forward(p, img), w));
  const std::string name = "albedo.enc2.weight";
  double worst = 0;
  for (std::size_t i : testing::random_coords(p.at(name).size(), 10, rng)) {
    const Real analytic = p.at(name).grad()[i];
    Real& x = param_entry(p, name, i);
    const Real saved = x, h = 1e-5;
    x = saved + h;
    const Real fp = testing::probe(albedo_forward(p, img), w).item();
    x = saved - h;
    const Real fm = testing::probe(albedo_forward(p, img), w).item();
    x = saved;
    const Real numeric = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  }
  EXPECT_LT(worst, 1e-3);

  const UVAtlas atlas = quad_atlas(32);
  const int len = static_cast<int>(atlas.vector_length());
  const Var a(testing::random_tensor({len}, rng)), b(testing::random_tensor({len}, rng));
  const BTROutput ab = btr_forward(p, a, b, atlas), ba = btr_forward(p, b, a, atlas);
  EXPECT_EQ(ab.left.value().storage(), ba.right.value().storage());

  arch.normalization = "batch";
  EXPECT_THROW(arch.validate(), std::exception);
  EXPECT_EQ(ArchConfig::from_json(p.arch.to_json()).normalization, "instance");
}

TEST(Nets, BtrInputGradients) {
  const UVAtlas atlas = quad_atlas(32);
  const NetworkParams p = init_params(9, tiny_arch());
  std::mt19937_64 rng(7);
  const int len = static_cast<int>(atlas.vector_length());
  const Tensor right = testing::random_tensor({len}, rng);
  const Tensor left = testing::random_tensor({len}, rng);
  const Tensor w = testing::random_tensor({len}, rng, -1, 1);
  auto f = [&](const Var& l) {
    const BTROutput o = btr_forward(p, l, Var(right), atlas);
    return ad::add(testing::probe(o.left, w), testing::probe(o.right, w));
  };
  EXPECT_LT(testing::check_gradient(f, left, testing::random_coords(left.size(), 20, rng), 1e-5).worst, 1e-3);
}

TEST(Nets, UnidirectionalIgnoresOtherHand) {
  ArchConfig arch = tiny_arch();
  arch.bidirectional = false;
  const UVAtlas atlas = quad_atlas(32);
  const NetworkParams p = init_params(10, arch);
  std::mt19937_64 rng(8);
  const int len = static_cast<int>(atlas.vector_length());
  const Var a(testing::random_tensor({len}, rng));
  const BTROutput o1 = btr_forward(p, a, Var(testing::random_tensor({len}, rng)), atlas);
  const BTROutput o2 = btr_forward(p, a, Var(testing::random_tensor({len}, rng)), atlas);
  EXPECT_EQ(o1.left.value().storage(), o2.left.value().storage());

  arch.bidirectional = true;
  const NetworkParams q = init_params(10, arch);
  const BTROutput b1 = btr_forward(q, a, Var(testing::random_tensor({len}, rng)), atlas);
  const BTROutput b2 = btr_forward(q, a, Var(testing::random_tensor({len}, rng)), atlas);
  EXPECT_NE(b1.left.value().storage(), b2.left.value().storage());
}

TEST(Nets, SeparateDecodersHaveOwnWeights) {
  ArchConfig arch = tiny_arch();
  arch.shared_decoder = false;
  const NetworkParams p = init_params(11, arch);
  EXPECT_TRUE(p.tensors.count("btr.dec_left.out.weight"));
  EXPECT_TRUE(p.tensors.count("btr.dec_right.out.weight"));
  EXPECT_FALSE(p.tensors.count("btr.dec.out.weight"));
}

TEST(Nets, UvImageScatterGatherGradients) {
  const UVAtlas atlas = quad_atlas(16);
  std::mt19937_64 rng(9);
  const Tensor t = testing::random_tensor({static_cast<int>(atlas.vector_length())}, rng);
  const Tensor w = testing::random_tensor({3, 16, 16}, rng, -1, 1);
  auto f = [&](const Var& x) { return testing::probe(vector_to_uv_image(atlas, x), w); };
  EXPECT_LT(testing::check_gradient(f, t, testing::random_coords(t.size(), 15, rng)).worst, 1e-8);
  EXPECT_EQ(uv_image_to_vector(atlas, vector_to_uv_image(atlas, Var(t))).value().storage(), t.storage());
}

TEST(Nets, CheckpointRoundTripAndScaling) {
  const NetworkParams p = init_params(12, tiny_arch());
  const auto path = std::filesystem::temp_directory_path() / "handtex_test_params.npz";
  save_params(path, p);
  const NetworkParams q = load_params(path);
  EXPECT_EQ(q.arch.to_json(), p.arch.to_json());
  for (const auto& [name, v] : p.tensors) EXPECT_EQ(q.at(name).value().storage(), v.value().storage());
  const ArchConfig half = ArchConfig{}.scaled(0.5);
  EXPECT_EQ(half.albedo_widths, (std::array<int, 4>{32, 64, 128, 256}));
  EXPECT_EQ(half.btr_widths, (std::array<int, 4>{8, 32, 64, 128}));
}

}  // namespace
}  // namespace handtex

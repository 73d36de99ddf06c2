#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "handtex/hand_template.hpp"
#include "handtex/metrics.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

ImageBuffer uniform(int res, Real v) { return Tensor({3, res, res}, v); }

ImageBuffer checkerboard(int res, int cell) {
  ImageBuffer img = make_image(res, res);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) img.at(c, y, x) = ((x / cell + y / cell) % 2) ? 1.0 : 0.0;
  return img;
}

// SSIM straight from its definition: a full 2D Gaussian window at every fully
// contained position, no separable filtering.
Real ssim_direct(const ImageBuffer& a, const ImageBuffer& b) {
  const int h = a.dim(1), w = a.dim(2), k = 11, r = 5;
  const Real sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<Real> g(k * k);
  Real norm = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) norm += g[i * k + j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
  for (auto& v : g) v /= norm;
  Real total = 0;
  int count = 0;
  for (int c = 0; c < 3; ++c) {
    Real chan = 0;
    int n = 0;
    for (int y = 0; y + k <= h; ++y)
      for (int x = 0; x + k <= w; ++x) {
        Real mx = 0, my = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            mx += g[i * k + j] * a.at(c, y + i, x + j);
            my += g[i * k + j] * b.at(c, y + i, x + j);
          }
        Real vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const Real dx = a.at(c, y + i, x + j) - mx, dy = b.at(c, y + i, x + j) - my;
            vx += g[i * k + j] * dx * dx;
            vy += g[i * k + j] * dy * dy;
            cov += g[i * k + j] * dx * dy;
          }
        chan += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++n;
      }
    total += chan / n;
    ++count;
  }
  return total / count;
}

TEST(Metrics, PsnrCases) {
  const ImageBuffer a = uniform(16, 0.3);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(psnr(a, uniform(16, 0.4)), 20.0, 1e-6);
  EXPECT_NEAR(psnr(uniform(16, 0.0), uniform(16, 1.0)), 0.0, 1e-12);
  Real prev = kPsnrCap;
  for (Real d : {0.01, 0.05, 0.1, 0.3, 0.6}) {
    const Real p = psnr(uniform(8, 0.2), uniform(8, 0.2 + d));
    EXPECT_LT(p, prev);
    prev = p;
  }
  EXPECT_THROW(psnr(uniform(8, 0), uniform(16, 0)), std::exception);
}

TEST(Metrics, MaskedPsnrIgnoresOutsidePixels) {
  ImageBuffer a = uniform(4, 0.5), b = uniform(4, 0.5);
  PixelMask mask(16, 0);
  mask[5] = 1;
  for (int c = 0; c < 3; ++c) {
    b[c * 16 + 5] = 0.6;
    b[c * 16 + 9] = 0.0;
  }
  EXPECT_NEAR(masked_psnr(a, b, mask), 20.0, 1e-6);
}

TEST(Metrics, SsimMatchesDirectFormula) {
  const ImageBuffer a = checkerboard(24, 3);
  ImageBuffer inv = a;
  for (auto& v : inv.storage()) v = 1 - v;
  EXPECT_NEAR(ssim(a, inv), ssim_direct(a, inv), 1e-6);

  std::mt19937_64 rng(1);
  const ImageBuffer x = testing::random_tensor({3, 20, 23}, rng), y = testing::random_tensor({3, 20, 23}, rng);
  EXPECT_NEAR(ssim(x, y), ssim_direct(x, y), 1e-6);
  EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-15);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Metrics, MsSsimIdentityAndScales) {
  std::mt19937_64 rng(2);
  for (int res : {16, 64, 176}) {
    const ImageBuffer x = testing::random_tensor({3, res, res}, rng);
    EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-12) << res;
    ImageBuffer y = x;
    for (auto& v : y.storage()) v = std::clamp(v + 0.2, 0.0, 1.0);
    const Real m = ms_ssim(x, y);
    EXPECT_GE(m, -1.0);
    EXPECT_LT(m, 1.0);
  }
  EXPECT_EQ(ms_ssim_scales(161), 5);
  EXPECT_EQ(ms_ssim_scales(160), 4);
  EXPECT_EQ(ms_ssim_scales(11), 1);
}

TEST(Metrics, PerceptualPluginContract) {
  const ImageBuffer a = uniform(8, 0.4), b = uniform(8, 0.5);
  const PerceptualResult none = perceptual_distance(a, b, nullptr);
  EXPECT_FALSE(none.value.has_value());
  EXPECT_FALSE(none.reason.empty());
  const PerceptualPlugin id = identity_plugin();
  EXPECT_EQ(*perceptual_distance(a, a, &id).value, 0.0);
  EXPECT_NEAR(*perceptual_distance(a, b, &id).value, 0.1 * std::sqrt(3.0), 1e-12);

  PerceptualPlugin failing{"broken", [](const ImageBuffer&) { return std::optional<std::vector<Tensor>>{}; }};
  const PerceptualResult f = perceptual_distance(a, b, &failing);
  EXPECT_FALSE(f.value.has_value());
  EXPECT_FALSE(f.reason.empty());

  const ImageMetrics m = compare_images("x", a, b, nullptr);
  EXPECT_EQ(m.to_json().at("lpips"), "n/a");
}

TEST(Metrics, CropBox) {
  PixelMask mask(20 * 20, 0);
  mask[5 * 20 + 7] = 1;
  mask[9 * 20 + 12] = 1;
  const CropBox b = hand_crop(mask, 20, 20, 8);
  EXPECT_EQ(b.x0, 0);
  EXPECT_EQ(b.y0, 0);
  EXPECT_EQ(b.x1, 20);
  EXPECT_EQ(b.y1, 18);
  const CropBox tight = hand_crop(mask, 20, 20, 1);
  EXPECT_EQ(tight.x0, 6);
  EXPECT_EQ(tight.x1, 14);
  EXPECT_EQ(crop(make_image(20, 20), tight).shape(), (std::vector<int>{3, tight.height(), tight.width()}));
}

TEST(Metrics, EvaluateWithGroundTruthTexturesHitsCap) {
  const UVAtlas atlas = build_atlas(HandTemplate::shipped().rest_mesh(), 32);
  const SceneSample train = generate_synthetic_scene(21, atlas, 0, 0, 48);
  TrainedScene t;
  t.texture_left = *train.gt_texture_left;
  t.texture_right = *train.gt_texture_right;
  t.light = *train.gt_light;
  t.topology_left = topology_hash(train.mesh_left);
  t.topology_right = topology_hash(train.mesh_right);
  std::vector<SceneSample> eval;
  for (int pose = 0; pose < 2; ++pose)
    for (int view = 0; view < 2; ++view) eval.push_back(generate_synthetic_scene(21, atlas, pose, view, 48));
  const MetricsReport r = evaluate(t, eval, atlas);
  ASSERT_EQ(r.count(), 4u);
  EXPECT_EQ(r.mean.psnr, kPsnrCap);
  EXPECT_NEAR(r.mean.ssim, 1.0, 1e-12);
  EXPECT_EQ(r.mean.l1, 0.0);
  EXPECT_FALSE(r.to_csv().empty());
  EXPECT_EQ(evaluate(t, eval, atlas).to_json(), r.to_json());
  EXPECT_THROW(evaluate(t, {}, atlas), std::exception);
}

TEST(Metrics, ProtocolSize) { EXPECT_EQ(protocol_image_count(8, 8), 64); }

}  // namespace
}  // namespace handtex

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "handtex/hand_template.hpp"
#include "handtex/trainer.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

using ad::Var;

struct Fixture {
  UVAtlas atlas;
  PCATextureModel pca;
  SceneSample scene;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.atlas = build_atlas(HandTemplate::shipped().rest_mesh(), 32);
    x.pca = fit_pca(generate_texture_corpus(3, 5, x.atlas), 3);
    x.scene = generate_synthetic_scene(11, x.atlas, 0, 0, 32);
    return x;
  }();
  return f;
}

TrainConfig tiny_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.image_resolution = 32;
  c.uv_resolution = 32;
  c.width_scale = 0.125;
  c.seed = 5;
  return c;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Trainer, StepSchedule) {
  const TrainConfig c;
  EXPECT_EQ(c.lr_at(1), 1e-3);
  EXPECT_EQ(c.lr_at(200), 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_at(201), 0.0005);
  EXPECT_DOUBLE_EQ(c.lr_at(401), 0.00025);
  EXPECT_DOUBLE_EQ(c.lr_at(601), 0.000125);
  EXPECT_DOUBLE_EQ(c.lr_at(700), 0.000125);
  EXPECT_THROW(c.lr_at(0), std::exception);
}

TEST(Trainer, ConfigJsonRoundTripRejectsUnknownKeys) {
  TrainConfig c = tiny_config(9);
  c.weights.alb = 0;
  c.bidirectional = false;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"epochz", 3}}), std::exception);
}

TEST(Trainer, SynthesisSelectsPerSlot) {
  std::mt19937_64 rng(1);
  const int P = 2000;
  const Tensor coarse = testing::random_tensor({3 * P}, rng);
  Tensor unwrapped = testing::random_tensor({3 * P}, rng);
  VisibilityMask v(P);
  std::bernoulli_distribution b(0.4);
  for (int k = 0; k < P; ++k) {
    v[k] = b(rng);
    if (!v[k])
      for (int c = 0; c < 3; ++c) unwrapped[3 * k + c] = 0;
  }
  const Tensor t = synthesize_texture(Var(coarse), Var(unwrapped), v).value();
  for (int k = 0; k < P; ++k)
    for (int c = 0; c < 3; ++c) {
      const std::size_t i = 3 * static_cast<std::size_t>(k) + c;
      EXPECT_EQ(t[i], v[k] ? unwrapped[i] : coarse[i]);
    }
  EXPECT_EQ(synthesize_texture(Var(coarse), Var(unwrapped), VisibilityMask(P, 1.0)).value().storage(),
            unwrapped.storage());
  EXPECT_EQ(synthesize_texture(Var(coarse), Var(Tensor({3 * P})), VisibilityMask(P, 0.0)).value().storage(),
            coarse.storage());
}

TEST(Trainer, OneStepMovesEveryParameterTensor) {
  const Fixture& f = fixture();
  // Wide enough that no first-level channel is dead everywhere at init.
  TrainConfig c = tiny_config(1);
  c.width_scale = 0.25;
  const TrainedScene t = train_scene(f.scene, c, f.pca, f.atlas);
  ASSERT_FALSE(t.aborted) << t.diagnostic;
  const NetworkParams init = init_params(c.seed, c.arch(f.pca.num_components()));
  for (const auto& [name, v] : init.tensors) {
    EXPECT_GT(max_abs_diff(v.value(), t.params.at(name).value()), 0.0) << name;
  }
  ASSERT_EQ(t.log.size(), 1u);
  const LossReport& r = t.log[0].loss;
  EXPECT_NEAR(r.total, r.rec + 0.2 * r.nv + 0.2 * r.alb + 0.3 * r.sym, 1e-9);
}

TEST(Trainer, DeterministicAndDecreasing) {
  const Fixture& f = fixture();
  const TrainConfig c = tiny_config(25);
  const TrainedScene a = train_scene(f.scene, c, f.pca, f.atlas);
  const TrainedScene b = train_scene(f.scene, tiny_config(25), f.pca, f.atlas);
  ASSERT_EQ(a.log.size(), 25u);
  EXPECT_EQ(a.log.back().loss.total, b.log.back().loss.total);
  EXPECT_EQ(a.texture_left.storage(), b.texture_left.storage());
  EXPECT_LT(a.log.back().loss.total, a.log.front().loss.total);
  for (const auto& e : a.log) EXPECT_NEAR(e.loss.total, e.loss.rec + 0.2 * e.loss.nv + 0.2 * e.loss.alb + 0.3 * e.loss.sym, 1e-9);
}

TEST(Trainer, RenderNovelReproducesFinalRender) {
  const Fixture& f = fixture();
  const TrainedScene t = train_scene(f.scene, tiny_config(2), f.pca, f.atlas);
  const ImageBuffer again = render_novel(t, f.scene.mesh_left, f.scene.mesh_right, f.scene.camera, t.light, f.atlas, 32,
                                         t.background_color);
  EXPECT_LT(max_abs_diff(again, t.final_render), 1e-12);

  HandMesh broken = f.scene.mesh_left;
  broken.faces.pop_back();
  broken.corner_uvs.pop_back();
  EXPECT_THROW(render_novel(t, broken, f.scene.mesh_right, f.scene.camera, t.light, f.atlas, 32, t.background_color),
               std::exception);
}

TEST(Trainer, AmbientWhiteNovelRenderIsTextureLookup) {
  const Fixture& f = fixture();
  const TrainedScene t = train_scene(f.scene, tiny_config(1), f.pca, f.atlas);
  LightParams white;
  white.ambient = Vec3::Ones();
  white.diffuse = Vec3::Zero();
  white.specular = Vec3::Zero();
  const ImageBuffer img =
      render_novel(t, f.scene.mesh_left, f.scene.mesh_right, f.scene.camera, white, f.atlas, 32, Vec3(0.1, 0.2, 0.3));
  const RasterBuffers raster = rasterize(f.scene.mesh_left, f.scene.mesh_right, f.scene.camera, 32);
  const ShadingPlan plan(raster, f.atlas);
  ImageBuffer bg = make_image(32, 32);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 32 * 32; ++p) bg[c * 32 * 32 + p] = 0.1 * (c + 1);
  EXPECT_LT(max_abs_diff(img, lookup_texture(plan, t.texture_left, t.texture_right, bg)), 1e-12);
}

TEST(Trainer, CheckpointRoundTrip) {
  const Fixture& f = fixture();
  const TrainedScene t = train_scene(f.scene, tiny_config(2), f.pca, f.atlas);
  const auto dir = std::filesystem::temp_directory_path() / "handtex_test_ckpt";
  std::filesystem::remove_all(dir);
  save_trained(dir, t, f.atlas);
  for (const char* name : {"config.json", "params.npz", "textures.npz", "texture_left.png", "texture_right.png",
                           "light.json", "final_render.png", "log.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  const TrainedScene back = load_trained(dir);
  EXPECT_EQ(back.texture_left.storage(), t.texture_left.storage());
  EXPECT_EQ(back.light.to_tensor().storage(), t.light.to_tensor().storage());
  EXPECT_EQ(back.topology_right, t.topology_right);
  EXPECT_EQ(back.config.to_json(), t.config.to_json());
  ASSERT_EQ(back.log.size(), t.log.size());
  EXPECT_EQ(back.log.back().loss.total, t.log.back().loss.total);
}

TEST(Trainer, RejectsMismatchedInputs) {
  const Fixture& f = fixture();
  TrainConfig c = tiny_config(1);
  c.uv_resolution = 64;
  EXPECT_THROW(train_scene(f.scene, c, f.pca, f.atlas), std::exception);
  c = tiny_config(1);
  c.image_resolution = 64;
  EXPECT_THROW(train_scene(f.scene, c, f.pca, f.atlas), std::exception);
}

}  // namespace
}  // namespace handtex

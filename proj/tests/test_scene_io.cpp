#include <gtest/gtest.h>

#include <filesystem>

#include "handtex/hand_template.hpp"
#include "handtex/scene_io.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

namespace fs = std::filesystem;

const UVAtlas& atlas32() {
  static const UVAtlas a = build_atlas(HandTemplate::shipped().rest_mesh(), 32);
  return a;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("handtex_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Corpus, DeterministicBoundedAndDistinct) {
  const auto a = generate_texture_corpus(1, 4, atlas32());
  const auto b = generate_texture_corpus(1, 4, atlas32());
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].storage(), b[i].storage());
    EXPECT_EQ(a[i].size(), atlas32().vector_length());
    for (Real v : a[i].storage()) {
      EXPECT_GE(v, 0.05);
      EXPECT_LE(v, 0.95);
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      Real l1 = 0;
      for (std::size_t k = 0; k < a[i].size(); ++k) l1 += std::abs(a[i][k] - a[j][k]);
      EXPECT_GT(l1, 0.0);
    }
  EXPECT_NE(generate_texture_corpus(2, 2, atlas32())[0].storage(), a[0].storage());
  EXPECT_THROW(generate_texture_corpus(1, 1, atlas32()), std::exception);
}

TEST(SyntheticScene, DeterministicAndSelfConsistent) {
  const SceneSample a = generate_synthetic_scene(5, atlas32(), 1, 2, 64);
  const SceneSample b = generate_synthetic_scene(5, atlas32(), 1, 2, 64);
  EXPECT_EQ(a.image.storage(), b.image.storage());
  ASSERT_TRUE(a.gt_light && a.gt_texture_left && a.gt_texture_right && a.gt_mask);
  for (const Vec3* c : {&a.gt_light->ambient, &a.gt_light->diffuse, &a.gt_light->specular})
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE((*c)[k], 0.2);
      EXPECT_LE((*c)[k], 1.0);
    }
  const Vec3 bgc = synthetic_background(5);
  ImageBuffer bg = make_image(64, 64);
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 64 * 64; ++p) bg[c * 64 * 64 + p] = bgc[c];
  const ImageBuffer again = render(*a.gt_texture_left, *a.gt_texture_right, a.mesh_left, a.mesh_right, a.camera,
                                   *a.gt_light, atlas32(), 64, bg);
  EXPECT_EQ(again.storage(), a.image.storage());
}

TEST(SyntheticScene, PartitionsSumToOneAndSymmetryHelps) {
  for (int pose = 0; pose < 3; ++pose)
    for (int view = 0; view < 3; ++view) {
      const SceneSample s = generate_synthetic_scene(9, atlas32(), pose, view, 64);
      const RasterBuffers r = rasterize(s.mesh_left, s.mesh_right, s.camera, 64);
      const UnwrapResult u = unwrap_visible(s.image, r, atlas32());
      const VisibilityStats st = visibility_stats(u.v_left, u.v_right, atlas32());
      for (const auto* p : {&st.left, &st.right}) {
        EXPECT_NEAR(p->visible + p->usable_symmetric + p->invisible, 1.0, 1e-7);
        EXPECT_GT(p->usable_symmetric, 0.0);
      }
    }
}

TEST(SceneIO, SaveLoadRoundTrip) {
  const fs::path dir = fresh_dir("scene_rt");
  const SceneSample s = generate_synthetic_scene(3, atlas32(), 0, 0, 64);
  save_scene(dir, s, &atlas32(), synthetic_pose(3, 0));
  const SceneSample back = load_scene(dir, &atlas32(), 64);
  EXPECT_EQ(back.resolution(), 64);
  EXPECT_EQ(back.mesh_left.faces, s.mesh_left.faces);
  ASSERT_TRUE(back.gt_texture_left.has_value());
  EXPECT_EQ(back.gt_texture_left->storage(), s.gt_texture_left->storage());
  ASSERT_TRUE(back.gt_mask.has_value());
  EXPECT_EQ(*back.gt_mask, *s.gt_mask);
  for (std::size_t i = 0; i < s.image.size(); ++i) EXPECT_LE(std::abs(back.image[i] - s.image[i]), 0.5 / 255 + 1e-12);
  const ScenePose pose = read_pose_json(dir / "pose.json");
  EXPECT_LT((pose.left.translation - synthetic_pose(3, 0).left.translation).norm(), 1e-12);
}

TEST(SceneIO, LargeImagesAreResized) {
  const fs::path dir = fresh_dir("scene_big");
  save_scene(dir, generate_synthetic_scene(4, atlas32(), 0, 0, 512));
  const SceneSample s = load_scene(dir);
  EXPECT_EQ(s.resolution(), 256);
  EXPECT_EQ(s.camera.width, 256);
}

TEST(SceneIO, MissingRightMeshIsReported) {
  const fs::path dir = fresh_dir("scene_missing");
  save_scene(dir, generate_synthetic_scene(4, atlas32(), 0, 0, 32));
  fs::remove(dir / "right.obj");
  try {
    load_scene(dir);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("missing mesh: right"), std::string::npos);
  }
}

TEST(SceneIO, PoseJsonRoundTrip) {
  const fs::path dir = fresh_dir("pose");
  fs::create_directories(dir);
  const ScenePose p = synthetic_pose(8, 3);
  write_pose_json(dir / "pose.json", p);
  const ScenePose q = read_pose_json(dir / "pose.json");
  EXPECT_LT((q.right.rotation - p.right.rotation).norm(), 1e-12);
  for (std::size_t i = 0; i < p.left.flexion.size(); ++i) EXPECT_NEAR(q.left.flexion[i], p.left.flexion[i], 1e-12);
}

}  // namespace
}  // namespace handtex

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "handtex/hand_template.hpp"
#include "handtex/image.hpp"
#include "handtex/mesh.hpp"
#include "handtex/renderer.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

inline constexpr int kDefaultImageResolution = 256;

/// One input frame with its two hand meshes. Ground-truth fields are set for
/// synthetic scenes.
struct SceneSample {
  ImageBuffer image;
  HandMesh mesh_left, mesh_right;
  Camera camera;
  std::optional<TextureVector> gt_texture_left, gt_texture_right;
  std::optional<LightParams> gt_light;
  std::optional<std::vector<uint8_t>> gt_mask;  // hand pixels, row-major

  int resolution() const { return image_height(image); }
};

struct ScenePose {
  HandPose left, right;
};

ScenePose read_pose_json(const std::filesystem::path& path);
void write_pose_json(const std::filesystem::path& path, const ScenePose& pose);

/// Reads a scene directory:
///   image.png, left.obj, right.obj, camera.json (required)
///   light.json, mask.png, gt_textures.npz or gt_texture_{left,right}.png (optional)
/// The image is resized to image_resolution and the camera to match. UV-layout
/// ground truth is only read when `atlas` is given.
SceneSample load_scene(const std::filesystem::path& dir, const UVAtlas* atlas = nullptr,
                       int image_resolution = kDefaultImageResolution);

/// Writes the layout read by load_scene. Ground-truth textures go to both the
/// 8-bit UV PNGs and an exact gt_textures.npz.
void save_scene(const std::filesystem::path& dir, const SceneSample& scene, const UVAtlas* atlas = nullptr,
                const std::optional<ScenePose>& pose = std::nullopt);

/// Deterministic skin-like textures (values in [0.05, 0.95]).
std::vector<TextureVector> generate_texture_corpus(uint64_t seed, int n, const UVAtlas& atlas);

/// Identity, light and background depend only on `seed`; the articulation
/// depends on (seed, pose_id) and the camera orbit on view_id.
ScenePose synthetic_pose(uint64_t seed, int pose_id);
Camera synthetic_camera(int view_id, int image_resolution);

/// Two interacting hands rendered with the shipped template. Requires an
/// atlas built from that template.
SceneSample generate_synthetic_scene(uint64_t seed, const UVAtlas& atlas, int pose_id, int view_id,
                                     int image_resolution = kDefaultImageResolution);

/// Constant background color used by generate_synthetic_scene for `seed`.
Vec3 synthetic_background(uint64_t seed);

}  // namespace handtex

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "handtex/autograd.hpp"
#include "handtex/image.hpp"
#include "handtex/mesh.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

/// Directional Phong light. `direction` is the direction light travels; the
/// surface-to-light vector is its negation. Colors live in [0.2, 1].
struct LightParams {
  Vec3 ambient = Vec3::Constant(0.6);
  Vec3 diffuse = Vec3::Constant(0.6);
  Vec3 specular = Vec3::Constant(0.6);
  Vec3 direction = Vec3(0, 0, 1);

  static constexpr Real kMinColor = 0.2;
  static constexpr Real kMaxColor = 1.0;

  /// Layout: ambient(3), diffuse(3), specular(3), direction(3).
  static LightParams from_tensor(const Tensor& t);
  Tensor to_tensor() const;
  /// Throws when a color leaves [0.2, 1] or the direction is not unit length.
  void validate() const;
};

LightParams read_light_json(const std::filesystem::path& path);
void write_light_json(const std::filesystem::path& path, const LightParams& light);

inline constexpr int8_t kNoHand = -1;

/// Per-pixel fragment data of a joint z-buffered rasterization.
struct RasterBuffers {
  int width = 0, height = 0;
  std::vector<int8_t> hand;  // kNoHand, 0 = left, 1 = right
  std::vector<int> face;
  std::vector<std::array<Real, 3>> bary;  // perspective-correct
  std::vector<Vec2> uv;
  std::vector<Vec3> normal;  // interpolated, unit, as authored (not flipped)
  std::vector<Real> depth;   // camera-space z
  std::vector<Vec3> view;    // unit vector from surface to camera center
  std::vector<uint8_t> backfacing;

  std::size_t num_pixels() const { return static_cast<std::size_t>(width) * height; }
  bool covered(std::size_t p) const { return hand[p] != kNoHand; }
  std::size_t num_covered() const;
  /// 1 where any hand covers the pixel.
  std::vector<uint8_t> silhouette() const;
};

/// Rasterizes both hands into a resolution x resolution frame (the camera is
/// rescaled to that size). Faces with a vertex at or behind the near plane
/// are skipped.
RasterBuffers rasterize(const HandMesh& mesh_left, const HandMesh& mesh_right, const Camera& camera, int resolution);

/// Same as rasterize(), memoized on disk under `cache_dir` when provided
/// (key: mesh hashes, camera hash, resolution).
RasterBuffers rasterize_cached(const HandMesh& mesh_left, const HandMesh& mesh_right, const Camera& camera,
                               int resolution, const std::optional<std::filesystem::path>& cache_dir);
void save_raster(const std::filesystem::path& path, const RasterBuffers& raster);
RasterBuffers load_raster(const std::filesystem::path& path);

struct ShadingConfig {
  Real shininess = 16.0;
};

/// Texture taps of every covered pixel: bilinear weights over the valid
/// texels around the interpolated UV, renormalized to sum to one.
class ShadingPlan {
 public:
  struct Tap {
    int slot = -1;
    Real weight = 0;
  };

  ShadingPlan(const RasterBuffers& raster, const UVAtlas& atlas);

  const RasterBuffers& raster() const { return *raster_; }
  const UVAtlas& atlas() const { return *atlas_; }
  const std::array<Tap, 4>& taps(std::size_t pixel) const { return taps_[pixel]; }

 private:
  const RasterBuffers* raster_;
  const UVAtlas* atlas_;
  std::vector<std::array<Tap, 4>> taps_;
};

/// color = clamp(a * ambient + a * diffuse * max(0, n.l) + specular * max(0, r.v)^s)
/// with l = -direction and r the reflection of l about n. Normals facing away
/// from the camera are flipped. Uncovered pixels copy `background`.
ImageBuffer shade_phong(const ShadingPlan& plan, const TextureVector& tex_left, const TextureVector& tex_right,
                        const LightParams& light, const ImageBuffer& background, const ShadingConfig& config = {});

/// Differentiable form: gradients flow into both texture vectors and the
/// 12-value light (layout of LightParams::to_tensor; direction used as given).
/// `plan` and its raster must outlive the returned graph.
ad::Var shade_phong(const ShadingPlan& plan, const ad::Var& tex_left, const ad::Var& tex_right, const ad::Var& light,
                    const ImageBuffer& background, const ShadingConfig& config = {});

/// Unlit texture lookup with the same sampling as shade_phong.
ImageBuffer lookup_texture(const ShadingPlan& plan, const TextureVector& tex_left, const TextureVector& tex_right,
                           const ImageBuffer& background);

/// rasterize + shade_phong.
ImageBuffer render(const TextureVector& tex_left, const TextureVector& tex_right, const HandMesh& mesh_left,
                   const HandMesh& mesh_right, const Camera& camera, const LightParams& light, const UVAtlas& atlas,
                   int resolution, const ImageBuffer& background, const ShadingConfig& config = {});

struct UnwrapResult {
  TextureVector u_left, u_right;  // 3P each, zero where invisible
  VisibilityMask v_left, v_right;  // P each
};

/// Splats every covered front-facing pixel to the texel containing its UV
/// and averages; texels receiving at least one pixel are visible.
UnwrapResult unwrap_visible(const ImageBuffer& image, const RasterBuffers& raster, const UVAtlas& atlas);

struct UnwrapVars {
  ad::Var u_left, u_right;
  VisibilityMask v_left, v_right;
};
/// Differentiable with respect to the image (each texel is a pixel mean).
UnwrapVars unwrap_visible(const ad::Var& image, const RasterBuffers& raster, const UVAtlas& atlas);

struct PartitionRatios {
  Real visible = 0;
  Real usable_symmetric = 0;
  Real invisible = 0;
};

struct VisibilityStats {
  PartitionRatios left, right;
};

/// Fractions (0..1) of each hand's texels that are visible, hidden but seen
/// on the other hand through sym_map, or hidden on both.
VisibilityStats visibility_stats(const VisibilityMask& v_left, const VisibilityMask& v_right, const UVAtlas& atlas);

}  // namespace handtex

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "handtex/image.hpp"
#include "handtex/mesh.hpp"
#include "handtex/tensor.hpp"

namespace handtex {

/// Flat RGB texture over the P valid texels of an atlas: 3P values with the
/// three channels of slot k stored at 3k, 3k+1, 3k+2.
using TextureVector = Tensor;
/// One value per slot (P values), 1 = visible.
using VisibilityMask = std::vector<Real>;

/// UV template shared by both hands. Texel (row, col) covers
/// u in [col, col+1)/res and v in [row, row+1)/res; slots enumerate valid
/// texels in row-major order.
struct UVAtlas {
  int resolution = 0;
  std::vector<uint8_t> valid_mask;     // resolution^2, row-major
  std::vector<int> index_of_texel;     // resolution^2, -1 where invalid
  std::vector<int> texel_of_index;     // P entries, linear texel ids
  std::vector<int> owner_face;         // resolution^2, -1 where invalid
  std::vector<std::array<Vec2, 3>> face_uvs;
  std::vector<int> sym_map;            // P entries, an involution
  std::string template_version;

  int num_slots() const { return static_cast<int>(texel_of_index.size()); }
  std::size_t vector_length() const { return 3 * texel_of_index.size(); }
  int texel_row(int slot) const { return texel_of_index[slot] / resolution; }
  int texel_col(int slot) const { return texel_of_index[slot] % resolution; }
  /// Slot of the texel containing uv, or -1.
  int slot_at(const Vec2& uv) const;
};

/// Rasterizes the mesh's per-corner UVs: a texel is valid when its center is
/// inside a face. Throws on degenerate or overlapping UV faces.
UVAtlas build_atlas(const HandMesh& mesh_template, int resolution);
UVAtlas build_atlas(const std::vector<std::array<Vec2, 3>>& face_uvs, int resolution,
                    std::string template_version = "custom");

/// Replaces the identity pairing with a custom one (validated as an involution).
void set_sym_map(UVAtlas& atlas, std::vector<int> sym_map);

ImageBuffer vector_to_uv_image(const UVAtlas& atlas, const TextureVector& t);
TextureVector uv_image_to_vector(const UVAtlas& atlas, const ImageBuffer& img);
TextureVector apply_sym_map(const UVAtlas& atlas, const TextureVector& t);
VisibilityMask apply_sym_map(const UVAtlas& atlas, const VisibilityMask& v);

/// Writes `path` (.npz: resolution, valid_mask, sym_map, face_uvs) and a
/// JSON sidecar next to it (same stem, .json) with P and the template version.
void save_atlas(const std::filesystem::path& path, const UVAtlas& atlas);
UVAtlas load_atlas(const std::filesystem::path& path);

void check_vector_length(const UVAtlas& atlas, const TextureVector& t, const char* what);

}  // namespace handtex

#include "handtex/uv_atlas.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "handtex/hand_template.hpp"
#include "handtex/npz.hpp"
#include "handtex/raster_util.hpp"

namespace handtex {

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".json");
  return p;
}

void validate_sym_map(const std::vector<int>& sym, int slots) {
  if (static_cast<int>(sym.size()) != slots) throw std::invalid_argument("sym_map length must equal P");
  for (int k = 0; k < slots; ++k) {
    if (sym[k] < 0 || sym[k] >= slots) throw std::invalid_argument("sym_map entry out of range");
    if (sym[sym[k]] != k) throw std::invalid_argument("sym_map is not an involution at slot " + std::to_string(k));
  }
}

}  // namespace

int UVAtlas::slot_at(const Vec2& uv) const {
  const int col = static_cast<int>(std::floor(uv.x() * resolution));
  const int row = static_cast<int>(std::floor(uv.y() * resolution));
  if (col < 0 || row < 0 || col >= resolution || row >= resolution) return -1;
  return index_of_texel[static_cast<std::size_t>(row) * resolution + col];
}

UVAtlas build_atlas(const HandMesh& mesh_template, int resolution) {
  return build_atlas(mesh_template.corner_uvs, resolution, HandTemplate::kVersion);
}

UVAtlas build_atlas(const std::vector<std::array<Vec2, 3>>& face_uvs, int resolution, std::string template_version) {
  if (resolution < 2) throw std::invalid_argument("atlas resolution must be at least 2");
  if (face_uvs.empty()) throw std::invalid_argument("atlas template has no faces");
  UVAtlas atlas;
  atlas.resolution = resolution;
  atlas.face_uvs = face_uvs;
  atlas.template_version = std::move(template_version);
  const std::size_t n_texels = static_cast<std::size_t>(resolution) * resolution;
  atlas.owner_face.assign(n_texels, -1);

  for (std::size_t f = 0; f < face_uvs.size(); ++f) {
    Vec2 a = face_uvs[f][0], b = face_uvs[f][1], c = face_uvs[f][2];
    for (const Vec2& p : {a, b, c}) {
      if (!(p.x() >= 0 && p.x() <= 1 && p.y() >= 0 && p.y() <= 1)) {
        throw std::invalid_argument("UV face " + std::to_string(f) + " has a corner outside [0,1]^2");
      }
    }
    const double area = detail::signed_area2(a, b, c);
    if (std::abs(area) < 1e-14) throw std::invalid_argument("degenerate UV face " + std::to_string(f) + " (zero area)");
    if (area < 0) std::swap(b, c);
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) * resolution - 0.5)));
    const int c1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) * resolution)));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) * resolution - 0.5)));
    const int r1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) * resolution)));
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        const Vec2 center((col + 0.5) / resolution, (row + 0.5) / resolution);
        if (!detail::covers(a, b, c, center)) continue;
        int& owner = atlas.owner_face[static_cast<std::size_t>(row) * resolution + col];
        if (owner >= 0 && owner != static_cast<int>(f)) {
          throw std::invalid_argument("overlapping UV faces " + std::to_string(owner) + " and " + std::to_string(f) +
                                      " both cover texel (" + std::to_string(row) + "," + std::to_string(col) + ")");
        }
        owner = static_cast<int>(f);
      }
    }
  }

  atlas.valid_mask.assign(n_texels, 0);
  atlas.index_of_texel.assign(n_texels, -1);
  for (std::size_t t = 0; t < n_texels; ++t) {
    if (atlas.owner_face[t] < 0) continue;
    atlas.valid_mask[t] = 1;
    atlas.index_of_texel[t] = static_cast<int>(atlas.texel_of_index.size());
    atlas.texel_of_index.push_back(static_cast<int>(t));
  }
  if (atlas.texel_of_index.empty()) throw std::invalid_argument("atlas covers no texel centers");

  atlas.sym_map.resize(atlas.texel_of_index.size());
  for (int k = 0; k < atlas.num_slots(); ++k) atlas.sym_map[k] = k;
  return atlas;
}

void set_sym_map(UVAtlas& atlas, std::vector<int> sym_map) {
  validate_sym_map(sym_map, atlas.num_slots());
  atlas.sym_map = std::move(sym_map);
}

void check_vector_length(const UVAtlas& atlas, const TextureVector& t, const char* what) {
  if (t.size() != atlas.vector_length()) {
    throw std::invalid_argument(std::string(what) + ": texture vector length " + std::to_string(t.size()) +
                                " does not match 3P = " + std::to_string(atlas.vector_length()));
  }
}

ImageBuffer vector_to_uv_image(const UVAtlas& atlas, const TextureVector& t) {
  check_vector_length(atlas, t, "vector_to_uv_image");
  ImageBuffer img = make_image(atlas.resolution, atlas.resolution);
  const std::size_t plane = static_cast<std::size_t>(atlas.resolution) * atlas.resolution;
  for (int k = 0; k < atlas.num_slots(); ++k) {
    const std::size_t texel = atlas.texel_of_index[k];
    for (int c = 0; c < 3; ++c) img[c * plane + texel] = t[3 * static_cast<std::size_t>(k) + c];
  }
  return img;
}

TextureVector uv_image_to_vector(const UVAtlas& atlas, const ImageBuffer& img) {
  if (!is_image(img) || img.dim(1) != atlas.resolution || img.dim(2) != atlas.resolution) {
    throw std::invalid_argument("uv_image_to_vector: image " + shape_string(img.shape()) +
                                " does not match atlas resolution " + std::to_string(atlas.resolution));
  }
  TextureVector t({static_cast<int>(atlas.vector_length())});
  const std::size_t plane = static_cast<std::size_t>(atlas.resolution) * atlas.resolution;
  for (int k = 0; k < atlas.num_slots(); ++k) {
    const std::size_t texel = atlas.texel_of_index[k];
    for (int c = 0; c < 3; ++c) t[3 * static_cast<std::size_t>(k) + c] = img[c * plane + texel];
  }
  return t;
}

TextureVector apply_sym_map(const UVAtlas& atlas, const TextureVector& t) {
  check_vector_length(atlas, t, "apply_sym_map");
  TextureVector out(t.shape());
  for (int k = 0; k < atlas.num_slots(); ++k) {
    const std::size_t src = 3 * static_cast<std::size_t>(atlas.sym_map[k]);
    for (int c = 0; c < 3; ++c) out[3 * static_cast<std::size_t>(k) + c] = t[src + c];
  }
  return out;
}

VisibilityMask apply_sym_map(const UVAtlas& atlas, const VisibilityMask& v) {
  if (static_cast<int>(v.size()) != atlas.num_slots()) throw std::invalid_argument("apply_sym_map: mask length must equal P");
  VisibilityMask out(v.size());
  for (int k = 0; k < atlas.num_slots(); ++k) out[k] = v[atlas.sym_map[k]];
  return out;
}

void save_atlas(const std::filesystem::path& path, const UVAtlas& atlas) {
  npz::Archive ar;
  ar["resolution"] = npz::Array::from_ints({atlas.resolution}, {1});
  ar["valid_mask"] = npz::Array::from_bytes(atlas.valid_mask, {atlas.resolution, atlas.resolution});
  ar["sym_map"] = npz::Array::from_ints({atlas.sym_map.begin(), atlas.sym_map.end()}, {atlas.num_slots()});
  std::vector<double> uvs;
  uvs.reserve(atlas.face_uvs.size() * 6);
  for (const auto& f : atlas.face_uvs)
    for (const auto& p : f) {
      uvs.push_back(p.x());
      uvs.push_back(p.y());
    }
  ar["face_uvs"] = npz::Array::from_doubles(std::move(uvs), {static_cast<int64_t>(atlas.face_uvs.size()), 3, 2});
  npz::save(path, ar);

  nlohmann::json j;
  j["num_slots"] = atlas.num_slots();
  j["vector_length"] = atlas.vector_length();
  j["resolution"] = atlas.resolution;
  j["num_faces"] = atlas.face_uvs.size();
  j["template_version"] = atlas.template_version;
  std::ofstream out(sidecar_path(path));
  if (!out) throw std::runtime_error("cannot write atlas sidecar for " + path.string());
  out << j.dump(2) << '\n';
}

UVAtlas load_atlas(const std::filesystem::path& path) {
  const npz::Archive ar = npz::load(path);
  const int resolution = static_cast<int>(npz::get(ar, "resolution").as_ints().at(0));
  const npz::Array& uv_arr = npz::get(ar, "face_uvs");
  if (uv_arr.shape.size() != 3 || uv_arr.shape[1] != 3 || uv_arr.shape[2] != 2) {
    throw std::runtime_error("atlas face_uvs must have shape [F,3,2]");
  }
  const auto uv = uv_arr.as_doubles();
  std::vector<std::array<Vec2, 3>> faces(static_cast<std::size_t>(uv_arr.shape[0]));
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) faces[f][k] = Vec2(uv[f * 6 + k * 2], uv[f * 6 + k * 2 + 1]);

  std::string version = "custom";
  if (std::ifstream side(sidecar_path(path)); side) {
    nlohmann::json j;
    side >> j;
    version = j.value("template_version", version);
  }
  UVAtlas atlas = build_atlas(faces, resolution, version);
  const auto mask = npz::get(ar, "valid_mask").as_ints();
  for (std::size_t i = 0; i < mask.size() && i < atlas.valid_mask.size(); ++i) {
    if ((mask[i] != 0) != (atlas.valid_mask[i] != 0)) {
      throw std::runtime_error("atlas " + path.string() + ": stored valid_mask disagrees with face_uvs");
    }
  }
  const auto sym = npz::get(ar, "sym_map").as_ints();
  set_sym_map(atlas, std::vector<int>(sym.begin(), sym.end()));
  return atlas;
}

}  // namespace handtex

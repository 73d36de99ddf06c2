#include "handtex/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "handtex/npz.hpp"
#include "handtex/raster_util.hpp"

namespace handtex {

namespace {

constexpr Real kNearPlane = 1e-6;

Vec3 json_vec3(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw std::runtime_error(std::string("light field '") + key + "' must have 3 values");
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

const Tensor& texture_of(int8_t hand, const Tensor& left, const Tensor& right) { return hand == 0 ? left : right; }

void check_background(const ImageBuffer& background, const RasterBuffers& raster) {
  if (!is_image(background) || background.dim(1) != raster.height || background.dim(2) != raster.width) {
    throw std::invalid_argument("background " + shape_string(background.shape()) + " does not match raster " +
                                std::to_string(raster.height) + "x" + std::to_string(raster.width));
  }
}

// Per-pixel Phong factors independent of albedo.
struct PixelLighting {
  Vec3 n;          // shading normal (flipped toward the camera)
  Real ndl = 0;    // n . ld
  Real diffuse = 0;
  Real rv = 0;     // r . v
  Real spec = 0;
};

PixelLighting light_pixel(const RasterBuffers& raster, std::size_t p, const Vec3& direction, Real shininess) {
  PixelLighting out;
  out.n = raster.backfacing[p] ? Vec3(-raster.normal[p]) : raster.normal[p];
  const Vec3& v = raster.view[p];
  const Vec3 ld = -direction;
  out.ndl = out.n.dot(ld);
  out.diffuse = std::max<Real>(0, out.ndl);
  const Vec3 r = 2 * out.ndl * out.n - ld;
  out.rv = r.dot(v);
  out.spec = out.rv > 0 ? std::pow(out.rv, shininess) : 0;
  return out;
}

Vec3 sample_albedo(const ShadingPlan& plan, std::size_t p, const Tensor& tex) {
  Vec3 a = Vec3::Zero();
  for (const auto& tap : plan.taps(p)) {
    if (tap.slot < 0) continue;
    const std::size_t base = 3 * static_cast<std::size_t>(tap.slot);
    a += tap.weight * Vec3(tex[base], tex[base + 1], tex[base + 2]);
  }
  return a;
}

void check_textures(const UVAtlas& atlas, const Tensor& left, const Tensor& right) {
  check_vector_length(atlas, left, "shade_phong (left)");
  check_vector_length(atlas, right, "shade_phong (right)");
}

}  // namespace

// ---------------------------------------------------------------------------
// LightParams

LightParams LightParams::from_tensor(const Tensor& t) {
  if (t.size() != 12) throw std::invalid_argument("light vector must have 12 values, got " + std::to_string(t.size()));
  LightParams l;
  l.ambient = Vec3(t[0], t[1], t[2]);
  l.diffuse = Vec3(t[3], t[4], t[5]);
  l.specular = Vec3(t[6], t[7], t[8]);
  l.direction = Vec3(t[9], t[10], t[11]);
  return l;
}

Tensor LightParams::to_tensor() const {
  return Tensor({12}, {ambient.x(), ambient.y(), ambient.z(), diffuse.x(), diffuse.y(), diffuse.z(), specular.x(),
                       specular.y(), specular.z(), direction.x(), direction.y(), direction.z()});
}

void LightParams::validate() const {
  auto check = [](const Vec3& c, const char* name) {
    for (int i = 0; i < 3; ++i) {
      if (!(c[i] >= kMinColor - 1e-12 && c[i] <= kMaxColor + 1e-12)) {
        throw std::invalid_argument(std::string("light ") + name + " component " + std::to_string(c[i]) +
                                    " outside [0.2, 1]");
      }
    }
  };
  check(ambient, "ambient");
  check(diffuse, "diffuse");
  check(specular, "specular");
  if (!(std::abs(direction.norm() - 1) <= 1e-6)) throw std::invalid_argument("light direction must be unit length");
}

LightParams read_light_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open light file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid light file " + path.string() + ": " + e.what());
  }
  LightParams l;
  l.ambient = json_vec3(j, "ambient");
  l.diffuse = json_vec3(j, "diffuse");
  l.specular = json_vec3(j, "specular");
  l.direction = json_vec3(j, "direction");
  l.validate();
  return l;
}

void write_light_json(const std::filesystem::path& path, const LightParams& light) {
  auto arr = [](const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  nlohmann::json j;
  j["ambient"] = arr(light.ambient);
  j["diffuse"] = arr(light.diffuse);
  j["specular"] = arr(light.specular);
  j["direction"] = arr(light.direction);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write light file " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Rasterization

std::size_t RasterBuffers::num_covered() const {
  return static_cast<std::size_t>(std::count_if(hand.begin(), hand.end(), [](int8_t h) { return h != kNoHand; }));
}

std::vector<uint8_t> RasterBuffers::silhouette() const {
  std::vector<uint8_t> s(hand.size());
  for (std::size_t p = 0; p < hand.size(); ++p) s[p] = hand[p] != kNoHand;
  return s;
}

RasterBuffers rasterize(const HandMesh& mesh_left, const HandMesh& mesh_right, const Camera& camera_in, int resolution) {
  if (resolution < 1) throw std::invalid_argument("raster resolution must be positive");
  const Camera camera = camera_in.resized(resolution, resolution);
  RasterBuffers rb;
  rb.width = rb.height = resolution;
  const std::size_t n = rb.num_pixels();
  rb.hand.assign(n, kNoHand);
  rb.face.assign(n, -1);
  rb.bary.assign(n, {0, 0, 0});
  rb.uv.assign(n, Vec2::Zero());
  rb.normal.assign(n, Vec3::Zero());
  rb.depth.assign(n, std::numeric_limits<Real>::infinity());
  rb.view.assign(n, Vec3::Zero());
  rb.backfacing.assign(n, 0);

  const HandMesh* meshes[2] = {&mesh_left, &mesh_right};
  for (int h = 0; h < 2; ++h) {
    const HandMesh& mesh = *meshes[h];
    std::vector<Vec3> cam(mesh.vertices.size());
    std::vector<Vec2> screen(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      cam[i] = camera.to_camera(mesh.vertices[i]);
      const Real z = cam[i].z();
      screen[i] = z > kNearPlane ? Vec2(camera.fx * cam[i].x() / z + camera.cx, camera.fy * cam[i].y() / z + camera.cy)
                                 : Vec2::Zero();
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const auto& idx = mesh.faces[f];
      if (cam[idx[0]].z() <= kNearPlane || cam[idx[1]].z() <= kNearPlane || cam[idx[2]].z() <= kNearPlane) continue;
      // Corner order after orienting the screen triangle counter-clockwise.
      std::array<int, 3> order{0, 1, 2};
      Vec2 a = screen[idx[0]], b = screen[idx[1]], c = screen[idx[2]];
      const double area = detail::signed_area2(a, b, c);
      if (area == 0 || !std::isfinite(area)) continue;
      if (area < 0) {
        std::swap(b, c);
        std::swap(order[1], order[2]);
      }
      const double abs_area = std::abs(area);
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
      const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
      const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
      const Real inv_z[3] = {1 / cam[idx[0]].z(), 1 / cam[idx[1]].z(), 1 / cam[idx[2]].z()};
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Vec2 s(x + 0.5, y + 0.5);
          if (!detail::covers(a, b, c, s)) continue;
          // Screen-space barycentrics in oriented order, mapped back to corners.
          std::array<Real, 3> lam{};
          lam[order[0]] = detail::edge_function(b, c, s) / abs_area;
          lam[order[1]] = detail::edge_function(c, a, s) / abs_area;
          lam[order[2]] = detail::edge_function(a, b, s) / abs_area;
          Real w_sum = 0;
          std::array<Real, 3> w{};
          for (int k = 0; k < 3; ++k) {
            w[k] = std::max<Real>(0, lam[k]) * inv_z[k];
            w_sum += w[k];
          }
          if (!(w_sum > 0)) continue;
          const Real depth = 1 / w_sum;
          const std::size_t p = static_cast<std::size_t>(y) * resolution + x;
          if (!(depth < rb.depth[p])) continue;
          rb.depth[p] = depth;
          rb.hand[p] = static_cast<int8_t>(h);
          rb.face[p] = static_cast<int>(f);
          for (int k = 0; k < 3; ++k) rb.bary[p][k] = w[k] / w_sum;
        }
      }
    }
  }

  const Vec3 eye = camera.center();
  for (std::size_t p = 0; p < n; ++p) {
    if (rb.hand[p] == kNoHand) {
      rb.depth[p] = 0;
      continue;
    }
    const HandMesh& mesh = *meshes[rb.hand[p]];
    const auto& idx = mesh.faces[rb.face[p]];
    const auto& bc = rb.bary[p];
    Vec3 pos = Vec3::Zero(), nrm = Vec3::Zero();
    Vec2 uv = Vec2::Zero();
    for (int k = 0; k < 3; ++k) {
      pos += bc[k] * mesh.vertices[idx[k]];
      nrm += bc[k] * mesh.normals[idx[k]];
      uv += bc[k] * mesh.corner_uvs[rb.face[p]][k];
    }
    const Real len = nrm.norm();
    rb.normal[p] = len > 0 ? Vec3(nrm / len) : Vec3(0, 0, -1);
    rb.uv[p] = uv;
    const Vec3 to_eye = eye - pos;
    const Real d = to_eye.norm();
    rb.view[p] = d > 0 ? Vec3(to_eye / d) : Vec3(0, 0, -1);
    rb.backfacing[p] = rb.normal[p].dot(rb.view[p]) < 0;
  }
  return rb;
}

void save_raster(const std::filesystem::path& path, const RasterBuffers& rb) {
  const std::size_t n = rb.num_pixels();
  std::vector<int64_t> hand(n), face(n);
  std::vector<double> bary(3 * n), uv(2 * n), normal(3 * n), depth(n), view(3 * n);
  std::vector<uint8_t> back(rb.backfacing);
  for (std::size_t p = 0; p < n; ++p) {
    hand[p] = rb.hand[p];
    face[p] = rb.face[p];
    depth[p] = rb.depth[p];
    for (int k = 0; k < 3; ++k) {
      bary[3 * p + k] = rb.bary[p][k];
      normal[3 * p + k] = rb.normal[p][k];
      view[3 * p + k] = rb.view[p][k];
    }
    uv[2 * p] = rb.uv[p].x();
    uv[2 * p + 1] = rb.uv[p].y();
  }
  const int64_t h = rb.height, w = rb.width;
  npz::Archive ar;
  ar["hand"] = npz::Array::from_ints(std::move(hand), {h, w});
  ar["face"] = npz::Array::from_ints(std::move(face), {h, w});
  ar["bary"] = npz::Array::from_doubles(std::move(bary), {h, w, 3});
  ar["uv"] = npz::Array::from_doubles(std::move(uv), {h, w, 2});
  ar["normal"] = npz::Array::from_doubles(std::move(normal), {h, w, 3});
  ar["depth"] = npz::Array::from_doubles(std::move(depth), {h, w});
  ar["view"] = npz::Array::from_doubles(std::move(view), {h, w, 3});
  ar["backfacing"] = npz::Array::from_bytes(std::move(back), {h, w});
  npz::save(path, ar);
}

RasterBuffers load_raster(const std::filesystem::path& path) {
  const npz::Archive ar = npz::load(path);
  const npz::Array& hand_arr = npz::get(ar, "hand");
  if (hand_arr.shape.size() != 2) throw std::runtime_error("raster cache " + path.string() + ": bad hand shape");
  RasterBuffers rb;
  rb.height = static_cast<int>(hand_arr.shape[0]);
  rb.width = static_cast<int>(hand_arr.shape[1]);
  const std::size_t n = rb.num_pixels();
  const auto hand = hand_arr.as_ints();
  const auto face = npz::get(ar, "face").as_ints();
  const auto bary = npz::get(ar, "bary").as_doubles();
  const auto uv = npz::get(ar, "uv").as_doubles();
  const auto normal = npz::get(ar, "normal").as_doubles();
  const auto depth = npz::get(ar, "depth").as_doubles();
  const auto view = npz::get(ar, "view").as_doubles();
  const auto back = npz::get(ar, "backfacing").as_ints();
  if (face.size() != n || bary.size() != 3 * n || uv.size() != 2 * n || normal.size() != 3 * n || depth.size() != n ||
      view.size() != 3 * n || back.size() != n) {
    throw std::runtime_error("raster cache " + path.string() + ": inconsistent array sizes");
  }
  rb.hand.resize(n);
  rb.face.resize(n);
  rb.bary.resize(n);
  rb.uv.resize(n);
  rb.normal.resize(n);
  rb.depth.resize(n);
  rb.view.resize(n);
  rb.backfacing.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    rb.hand[p] = static_cast<int8_t>(hand[p]);
    rb.face[p] = static_cast<int>(face[p]);
    rb.depth[p] = depth[p];
    rb.backfacing[p] = static_cast<uint8_t>(back[p]);
    for (int k = 0; k < 3; ++k) rb.bary[p][k] = bary[3 * p + k];
    rb.uv[p] = Vec2(uv[2 * p], uv[2 * p + 1]);
    rb.normal[p] = Vec3(normal[3 * p], normal[3 * p + 1], normal[3 * p + 2]);
    rb.view[p] = Vec3(view[3 * p], view[3 * p + 1], view[3 * p + 2]);
  }
  return rb;
}

RasterBuffers rasterize_cached(const HandMesh& mesh_left, const HandMesh& mesh_right, const Camera& camera,
                               int resolution, const std::optional<std::filesystem::path>& cache_dir) {
  if (!cache_dir) return rasterize(mesh_left, mesh_right, camera, resolution);
  std::ostringstream key;
  key << "raster_" << std::hex << mesh_hash(mesh_left) << '_' << mesh_hash(mesh_right) << '_' << camera_hash(camera)
      << std::dec << '_' << resolution << ".npz";
  const auto path = *cache_dir / key.str();
  if (std::filesystem::exists(path)) {
    try {
      return load_raster(path);
    } catch (const std::exception&) {
      // Corrupt entry: fall through and overwrite.
    }
  }
  RasterBuffers rb = rasterize(mesh_left, mesh_right, camera, resolution);
  std::filesystem::create_directories(*cache_dir);
  const auto tmp = path.string() + ".tmp";
  save_raster(tmp, rb);
  std::filesystem::rename(tmp, path);
  return rb;
}

// ---------------------------------------------------------------------------
// Shading

ShadingPlan::ShadingPlan(const RasterBuffers& raster, const UVAtlas& atlas) : raster_(&raster), atlas_(&atlas) {
  const int res = atlas.resolution;
  taps_.assign(raster.num_pixels(), {});
  for (std::size_t p = 0; p < raster.num_pixels(); ++p) {
    if (!raster.covered(p)) continue;
    const Real fx = raster.uv[p].x() * res - 0.5;
    const Real fy = raster.uv[p].y() * res - 0.5;
    const int c0 = static_cast<int>(std::floor(fx));
    const int r0 = static_cast<int>(std::floor(fy));
    const Real tx = fx - c0, ty = fy - r0;
    std::array<Tap, 4>& taps = taps_[p];
    const int cols[4] = {c0, c0 + 1, c0, c0 + 1};
    const int rows[4] = {r0, r0, r0 + 1, r0 + 1};
    const Real weights[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    Real total = 0;
    for (int k = 0; k < 4; ++k) {
      if (cols[k] < 0 || rows[k] < 0 || cols[k] >= res || rows[k] >= res) continue;
      const int slot = atlas.index_of_texel[static_cast<std::size_t>(rows[k]) * res + cols[k]];
      if (slot < 0 || weights[k] <= 0) continue;
      taps[k] = {slot, weights[k]};
      total += weights[k];
    }
    if (total > 0) {
      for (auto& t : taps) t.weight /= total;
      continue;
    }
    // No valid bilinear neighbour: use the texel under the UV, or the nearest
    // valid texel in a 5x5 window.
    const int col = std::clamp(static_cast<int>(std::floor(raster.uv[p].x() * res)), 0, res - 1);
    const int row = std::clamp(static_cast<int>(std::floor(raster.uv[p].y() * res)), 0, res - 1);
    int best = -1;
    int best_d = std::numeric_limits<int>::max();
    for (int dr = -2; dr <= 2; ++dr) {
      for (int dc = -2; dc <= 2; ++dc) {
        const int rr = row + dr, cc = col + dc;
        if (rr < 0 || cc < 0 || rr >= res || cc >= res) continue;
        const int slot = atlas.index_of_texel[static_cast<std::size_t>(rr) * res + cc];
        if (slot >= 0 && dr * dr + dc * dc < best_d) {
          best_d = dr * dr + dc * dc;
          best = slot;
        }
      }
    }
    if (best >= 0) taps[0] = {best, 1.0};
  }
}

ImageBuffer shade_phong(const ShadingPlan& plan, const TextureVector& tex_left, const TextureVector& tex_right,
                        const LightParams& light, const ImageBuffer& background, const ShadingConfig& config) {
  ad::Var out = shade_phong(plan, ad::Var(tex_left), ad::Var(tex_right), ad::Var(light.to_tensor()), background, config);
  return out.value();
}

ad::Var shade_phong(const ShadingPlan& plan, const ad::Var& tex_left, const ad::Var& tex_right, const ad::Var& light,
                    const ImageBuffer& background, const ShadingConfig& config) {
  const RasterBuffers& raster = plan.raster();
  check_textures(plan.atlas(), tex_left.value(), tex_right.value());
  check_background(background, raster);
  if (light.size() != 12) throw std::invalid_argument("shade_phong: light must have 12 values");
  const LightParams lp = LightParams::from_tensor(light.value());
  const Real s = config.shininess;
  const std::size_t n = raster.num_pixels();

  ImageBuffer out = background;
  for (std::size_t p = 0; p < n; ++p) {
    if (!raster.covered(p)) continue;
    const PixelLighting pl = light_pixel(raster, p, lp.direction, s);
    const Vec3 a = sample_albedo(plan, p, texture_of(raster.hand[p], tex_left.value(), tex_right.value()));
    for (int c = 0; c < 3; ++c) {
      const Real color = a[c] * lp.ambient[c] + a[c] * lp.diffuse[c] * pl.diffuse + lp.specular[c] * pl.spec;
      out[c * n + p] = std::clamp<Real>(color, 0, 1);
    }
  }

  return ad::make_op(std::move(out), {tex_left, tex_right, light}, [&plan, s, lp](ad::Node& node) {
    const RasterBuffers& raster = plan.raster();
    const std::size_t n = raster.num_pixels();
    auto& left = *node.parents[0];
    auto& right = *node.parents[1];
    auto& lnode = *node.parents[2];
    Tensor* g_tex[2] = {left.requires_grad ? &left.grad_buffer() : nullptr,
                        right.requires_grad ? &right.grad_buffer() : nullptr};
    const Tensor* tex[2] = {&left.value, &right.value};
    std::array<Real, 12> g_light{};
    for (std::size_t p = 0; p < n; ++p) {
      if (!raster.covered(p)) continue;
      const int h = raster.hand[p];
      const PixelLighting pl = light_pixel(raster, p, lp.direction, s);
      const Vec3 a = sample_albedo(plan, p, *tex[h]);
      Vec3 g_albedo = Vec3::Zero();
      Real g_diff_term = 0, g_spec_term = 0;
      for (int c = 0; c < 3; ++c) {
        const Real go = node.grad[c * n + p];
        if (go == 0) continue;
        const Real color = a[c] * lp.ambient[c] + a[c] * lp.diffuse[c] * pl.diffuse + lp.specular[c] * pl.spec;
        if (!(color > 0 && color < 1)) continue;
        g_albedo[c] = go * (lp.ambient[c] + lp.diffuse[c] * pl.diffuse);
        g_light[c] += go * a[c];
        g_light[3 + c] += go * a[c] * pl.diffuse;
        g_light[6 + c] += go * pl.spec;
        g_diff_term += go * a[c] * lp.diffuse[c];
        g_spec_term += go * lp.specular[c];
      }
      // Direction: diffuse = max(0, -n.d); r.v = -2(n.d)(n.v) + d.v.
      Vec3 g_dir = Vec3::Zero();
      if (pl.ndl > 0) g_dir += g_diff_term * (-pl.n);
      if (pl.rv > 0 && g_spec_term != 0) {
        const Vec3& v = raster.view[p];
        const Real dspec = s * std::pow(pl.rv, s - 1);
        g_dir += g_spec_term * dspec * (-2 * pl.n.dot(v) * pl.n + v);
      }
      for (int k = 0; k < 3; ++k) g_light[9 + k] += g_dir[k];
      if (g_tex[h]) {
        Tensor& g = *g_tex[h];
        for (const auto& tap : plan.taps(p)) {
          if (tap.slot < 0) continue;
          const std::size_t base = 3 * static_cast<std::size_t>(tap.slot);
          for (int c = 0; c < 3; ++c) g[base + c] += tap.weight * g_albedo[c];
        }
      }
    }
    if (lnode.requires_grad) {
      Tensor& g = lnode.grad_buffer();
      for (int k = 0; k < 12; ++k) g[k] += g_light[k];
    }
  });
}

ImageBuffer lookup_texture(const ShadingPlan& plan, const TextureVector& tex_left, const TextureVector& tex_right,
                           const ImageBuffer& background) {
  const RasterBuffers& raster = plan.raster();
  check_textures(plan.atlas(), tex_left, tex_right);
  check_background(background, raster);
  const std::size_t n = raster.num_pixels();
  ImageBuffer out = background;
  for (std::size_t p = 0; p < n; ++p) {
    if (!raster.covered(p)) continue;
    const Vec3 a = sample_albedo(plan, p, texture_of(raster.hand[p], tex_left, tex_right));
    for (int c = 0; c < 3; ++c) out[c * n + p] = a[c];
  }
  return out;
}

ImageBuffer render(const TextureVector& tex_left, const TextureVector& tex_right, const HandMesh& mesh_left,
                   const HandMesh& mesh_right, const Camera& camera, const LightParams& light, const UVAtlas& atlas,
                   int resolution, const ImageBuffer& background, const ShadingConfig& config) {
  const RasterBuffers raster = rasterize(mesh_left, mesh_right, camera, resolution);
  const ShadingPlan plan(raster, atlas);
  return shade_phong(plan, tex_left, tex_right, light, background, config);
}

// ---------------------------------------------------------------------------
// Unwrapping

namespace {

struct SplatPlan {
  std::vector<int> slot;    // per pixel, -1 when not splatted
  std::vector<int> count[2];  // per slot
};

SplatPlan make_splat_plan(const RasterBuffers& raster, const UVAtlas& atlas) {
  SplatPlan sp;
  const std::size_t n = raster.num_pixels();
  sp.slot.assign(n, -1);
  sp.count[0].assign(atlas.num_slots(), 0);
  sp.count[1].assign(atlas.num_slots(), 0);
  for (std::size_t p = 0; p < n; ++p) {
    if (!raster.covered(p) || raster.backfacing[p]) continue;
    const int slot = atlas.slot_at(raster.uv[p]);
    if (slot < 0) continue;
    sp.slot[p] = slot;
    ++sp.count[raster.hand[p]][slot];
  }
  return sp;
}

void check_unwrap_image(const Tensor& image, const RasterBuffers& raster) {
  if (!is_image(image) || image.dim(1) != raster.height || image.dim(2) != raster.width) {
    throw std::invalid_argument("unwrap_visible: image " + shape_string(image.shape()) + " does not match raster " +
                                std::to_string(raster.height) + "x" + std::to_string(raster.width));
  }
}

}  // namespace

UnwrapResult unwrap_visible(const ImageBuffer& image, const RasterBuffers& raster, const UVAtlas& atlas) {
  UnwrapVars vars = unwrap_visible(ad::Var(image), raster, atlas);
  return {vars.u_left.value(), vars.u_right.value(), std::move(vars.v_left), std::move(vars.v_right)};
}

UnwrapVars unwrap_visible(const ad::Var& image, const RasterBuffers& raster, const UVAtlas& atlas) {
  check_unwrap_image(image.value(), raster);
  auto sp = std::make_shared<SplatPlan>(make_splat_plan(raster, atlas));
  const std::size_t n = raster.num_pixels();
  const int slots = atlas.num_slots();
  Tensor u[2] = {Tensor({3 * slots}), Tensor({3 * slots})};
  const Tensor& img = image.value();
  for (std::size_t p = 0; p < n; ++p) {
    const int slot = sp->slot[p];
    if (slot < 0) continue;
    const int h = raster.hand[p];
    const Real inv = 1.0 / sp->count[h][slot];
    for (int c = 0; c < 3; ++c) u[h][3 * static_cast<std::size_t>(slot) + c] += img[c * n + p] * inv;
  }

  UnwrapVars out;
  for (int h = 0; h < 2; ++h) {
    VisibilityMask& v = h == 0 ? out.v_left : out.v_right;
    v.assign(slots, 0);
    for (int k = 0; k < slots; ++k) v[k] = sp->count[h][k] > 0 ? 1 : 0;
  }
  const std::vector<int8_t> hand = raster.hand;
  for (int h = 0; h < 2; ++h) {
    ad::Var& target = h == 0 ? out.u_left : out.u_right;
    target = ad::make_op(std::move(u[h]), {image}, [sp, hand, h, n](ad::Node& node) {
      auto& parent = *node.parents[0];
      if (!parent.requires_grad) return;
      Tensor& g = parent.grad_buffer();
      for (std::size_t p = 0; p < n; ++p) {
        const int slot = sp->slot[p];
        if (slot < 0 || hand[p] != h) continue;
        const Real inv = 1.0 / sp->count[h][slot];
        for (int c = 0; c < 3; ++c) g[c * n + p] += node.grad[3 * static_cast<std::size_t>(slot) + c] * inv;
      }
    });
  }
  return out;
}

VisibilityStats visibility_stats(const VisibilityMask& v_left, const VisibilityMask& v_right, const UVAtlas& atlas) {
  const int slots = atlas.num_slots();
  if (static_cast<int>(v_left.size()) != slots || static_cast<int>(v_right.size()) != slots) {
    throw std::invalid_argument("visibility_stats: masks must have length P = " + std::to_string(slots));
  }
  auto partition = [&](const VisibilityMask& self, const VisibilityMask& other) {
    PartitionRatios r;
    for (int k = 0; k < slots; ++k) {
      const Real vis = self[k];
      const Real mirrored = other[atlas.sym_map[k]];
      r.visible += vis;
      r.usable_symmetric += (1 - vis) * mirrored;
      r.invisible += (1 - vis) * (1 - mirrored);
    }
    r.visible /= slots;
    r.usable_symmetric /= slots;
    r.invisible /= slots;
    return r;
  };
  return {partition(v_left, v_right), partition(v_right, v_left)};
}

}  // namespace handtex

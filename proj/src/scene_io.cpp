#include "handtex/scene_io.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <stdexcept>

#include "handtex/npz.hpp"

namespace handtex {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

// Stream tags keep the corpus, scene identity, pose and per-hand detail draws
// independent for the same user seed.
constexpr uint64_t kCorpusStream = 0xC0C0;
constexpr uint64_t kIdentityStream = 0x1D;
constexpr uint64_t kPoseStream = 0x9053;
constexpr uint64_t kDetailStream = 0xDE7A;
constexpr uint64_t kLightStream = 0x119;

std::mt19937_64 make_rng(std::initializer_list<uint64_t> parts) {
  std::vector<uint32_t> words;
  for (uint64_t p : parts) {
    words.push_back(static_cast<uint32_t>(p));
    words.push_back(static_cast<uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

struct Wave {
  double fx, fs, phase, amp;
};

struct PalmLine {
  double s0, slope, dark;
};

// Random appearance parameters of one person.
struct TextureIdentity {
  Vec3 base;
  Vec3 palm_tone;
  double palm_amount;
  std::array<Wave, 4> waves;
  Vec3 mottle_tint;
  double crease_dark;
  double crease_offset;
  std::array<PalmLine, 3> palm_lines;
  Vec3 nail_color;
  double nail_length;
};

TextureIdentity draw_identity(std::mt19937_64& rng) {
  TextureIdentity id;
  const Vec3 light_skin(0.86, 0.69, 0.58), dark_skin(0.44, 0.29, 0.21);
  const double tone = uniform(rng, 0.0, 1.0);
  id.base = (1 - tone) * light_skin + tone * dark_skin;
  id.base += Vec3(uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03));
  id.palm_tone = id.base.cwiseMin(Vec3::Constant(0.9)) * 0.25 + Vec3(0.9, 0.72, 0.64) * 0.75;
  id.palm_amount = uniform(rng, 0.25, 0.6);
  for (auto& w : id.waves) {
    w.fx = uniform(rng, 0.3, 1.6);
    w.fs = uniform(rng, 0.3, 1.6);
    w.phase = uniform(rng, 0.0, 2 * kPi);
    w.amp = uniform(rng, 0.015, 0.045);
  }
  id.mottle_tint = Vec3(1.0, uniform(rng, 1.0, 1.3), uniform(rng, 1.0, 1.5));
  id.crease_dark = uniform(rng, 0.12, 0.3);
  id.crease_offset = uniform(rng, -0.2, 0.2);
  for (auto& l : id.palm_lines) {
    l.s0 = uniform(rng, 3.5, 8.0);
    l.slope = uniform(rng, -0.9, 0.9);
    l.dark = uniform(rng, 0.08, 0.2);
  }
  id.nail_color = Vec3(uniform(rng, 0.82, 0.93), uniform(rng, 0.62, 0.75), uniform(rng, 0.6, 0.72));
  id.nail_length = uniform(rng, 0.9, 1.4);
  return id;
}

Vec3 identity_color(const TextureIdentity& id, const ChartInfo* chart, const Vec2& uv) {
  double theta, s, radius;
  std::vector<double> joints;
  double tip = 0;
  bool is_palm = true;
  if (chart) {
    theta = chart->angle_at(uv.x());
    s = chart->arc_at(uv.y());
    radius = chart->circumference / (2 * kPi);
    is_palm = chart->digit < 0;
    joints = chart->joint_s;
    tip = chart->ring_s.empty() ? 0 : chart->ring_s.back();
  } else {
    theta = 2 * kPi * uv.x();
    s = 10 * uv.y();
    radius = 1.5;
  }
  const double palm_w = std::max(0.0, std::sin(theta));
  const double dorsal_w = std::max(0.0, -std::sin(theta));
  Vec3 color = id.base;
  color += (id.palm_tone - id.base) * (id.palm_amount * smoothstep(0.0, 0.8, palm_w));

  const double x = theta * radius;
  double mottle = 0;
  for (const auto& w : id.waves) mottle += w.amp * std::sin(w.fx * x + w.fs * s + w.phase);
  color = color.cwiseProduct(Vec3::Ones() + mottle * id.mottle_tint);

  for (double j : joints) {
    if (j <= 0) continue;
    const double d = (s - j - id.crease_offset) / 0.14;
    const double w = std::exp(-d * d);
    color *= 1 - id.crease_dark * w * (std::sqrt(palm_w) + 0.4 * dorsal_w);
  }
  if (is_palm && chart) {
    for (const auto& l : id.palm_lines) {
      const double d = (s - (l.s0 + l.slope * (theta - kPi / 2))) / 0.12;
      color *= 1 - l.dark * std::exp(-d * d) * smoothstep(0.3, 0.8, palm_w);
    }
  }
  if (!is_palm && chart) {
    const double l_total = tip - 0.55;
    const double along = smoothstep(l_total - id.nail_length, l_total - id.nail_length + 0.15, s) *
                         (1 - smoothstep(l_total + 0.3, l_total + 0.45, s));
    const double around = 1 - smoothstep(0.55, 0.8, std::abs(theta - 1.5 * kPi));
    color += (id.nail_color - color) * (0.85 * along * around);
  }
  return color;
}

TextureVector identity_texture(const TextureIdentity& id, const UVAtlas& atlas) {
  const HandTemplate& tpl = HandTemplate::shipped();
  const bool shipped = atlas.template_version == HandTemplate::kVersion;
  TextureVector t({static_cast<int>(atlas.vector_length())});
  for (int k = 0; k < atlas.num_slots(); ++k) {
    const Vec2 uv((atlas.texel_col(k) + 0.5) / atlas.resolution, (atlas.texel_row(k) + 0.5) / atlas.resolution);
    const ChartInfo* chart = shipped ? tpl.chart_at(uv) : nullptr;
    const Vec3 c = identity_color(id, chart, uv);
    for (int ch = 0; ch < 3; ++ch) t[3 * static_cast<std::size_t>(k) + ch] = c[ch];
  }
  return t;
}

void clamp_texture(TextureVector& t) {
  for (auto& x : t.storage()) x = std::clamp(x, 0.05, 0.95);
}

// Per-hand deviations from the shared identity: a faint extra wave and a few
// small dark spots.
void perturb_hand(TextureVector& t, const UVAtlas& atlas, std::mt19937_64& rng) {
  const Wave w{uniform(rng, 4.0, 12.0), uniform(rng, 4.0, 12.0), uniform(rng, 0.0, 2 * kPi), uniform(rng, 0.01, 0.02)};
  struct Spot {
    Vec2 uv;
    double radius, dark;
  };
  std::vector<Spot> spots(3);
  for (auto& s : spots) {
    const int slot = std::uniform_int_distribution<int>(0, atlas.num_slots() - 1)(rng);
    s.uv = Vec2((atlas.texel_col(slot) + 0.5) / atlas.resolution, (atlas.texel_row(slot) + 0.5) / atlas.resolution);
    s.radius = uniform(rng, 0.008, 0.014);
    s.dark = uniform(rng, 0.25, 0.4);
  }
  for (int k = 0; k < atlas.num_slots(); ++k) {
    const Vec2 uv((atlas.texel_col(k) + 0.5) / atlas.resolution, (atlas.texel_row(k) + 0.5) / atlas.resolution);
    double f = 1 + w.amp * std::sin(w.fx * uv.x() * 2 * kPi + w.fs * uv.y() * 2 * kPi + w.phase);
    for (const auto& s : spots) {
      const double d2 = (uv - s.uv).squaredNorm() / (s.radius * s.radius);
      f *= 1 - s.dark * std::exp(-d2);
    }
    for (int ch = 0; ch < 3; ++ch) t[3 * static_cast<std::size_t>(k) + ch] *= f;
  }
}

nlohmann::json pose_to_json(const HandPose& p) {
  nlohmann::json j;
  j["rotation"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) j["rotation"].push_back({p.rotation(r, 0), p.rotation(r, 1), p.rotation(r, 2)});
  j["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  j["flexion"] = p.flexion;
  j["spread"] = p.spread;
  return j;
}

HandPose pose_from_json(const nlohmann::json& j) {
  HandPose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j.at("rotation").at(r).at(c).get<double>();
  for (int i = 0; i < 3; ++i) p.translation[i] = j.at("translation").at(i).get<double>();
  if (j.contains("flexion")) p.flexion = j.at("flexion").get<std::array<double, 15>>();
  if (j.contains("spread")) p.spread = j.at("spread").get<std::array<double, 5>>();
  if ((p.rotation * p.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw std::runtime_error("pose rotation is not orthonormal");
  }
  return p;
}

std::vector<uint8_t> read_mask_png(const fs::path& path, int resolution) {
  ImageBuffer m = read_png(path);
  if (image_height(m) != resolution || image_width(m) != resolution) m = resize_bilinear(m, resolution, resolution);
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  std::vector<uint8_t> mask(n);
  for (std::size_t p = 0; p < n; ++p) mask[p] = m[p] >= 0.5;
  return mask;
}

}  // namespace

ScenePose read_pose_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose file " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return {pose_from_json(j.at("left")), pose_from_json(j.at("right"))};
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid pose file " + path.string() + ": " + e.what());
  }
}

void write_pose_json(const fs::path& path, const ScenePose& pose) {
  nlohmann::json j;
  j["left"] = pose_to_json(pose.left);
  j["right"] = pose_to_json(pose.right);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pose file " + path.string());
  out << j.dump(2) << '\n';
}

SceneSample load_scene(const fs::path& dir, const UVAtlas* atlas, int image_resolution) {
  if (image_resolution < 1) throw std::invalid_argument("image resolution must be positive");
  if (!fs::is_directory(dir)) throw std::runtime_error("scene directory not found: " + dir.string());
  if (!fs::exists(dir / "image.png")) throw std::runtime_error("missing image: " + (dir / "image.png").string());
  if (!fs::exists(dir / "left.obj")) throw std::runtime_error("missing mesh: left");
  if (!fs::exists(dir / "right.obj")) throw std::runtime_error("missing mesh: right");
  if (!fs::exists(dir / "camera.json")) throw std::runtime_error("missing camera: " + (dir / "camera.json").string());

  SceneSample s;
  s.image = read_png(dir / "image.png");
  if (image_height(s.image) != image_resolution || image_width(s.image) != image_resolution) {
    s.image = resize_bilinear(s.image, image_resolution, image_resolution);
  }
  s.image = clamp01(std::move(s.image));
  s.mesh_left = read_obj(dir / "left.obj", Handedness::kLeft);
  s.mesh_right = read_obj(dir / "right.obj", Handedness::kRight);
  try {
    validate_mesh(s.mesh_left);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("left mesh: ") + e.what());
  }
  try {
    validate_mesh(s.mesh_right);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("right mesh: ") + e.what());
  }
  s.camera = read_camera_json(dir / "camera.json").resized(image_resolution, image_resolution);

  if (fs::exists(dir / "light.json")) s.gt_light = read_light_json(dir / "light.json");
  if (fs::exists(dir / "mask.png")) s.gt_mask = read_mask_png(dir / "mask.png", image_resolution);
  if (atlas) {
    if (fs::exists(dir / "gt_textures.npz")) {
      const npz::Archive ar = npz::load(dir / "gt_textures.npz");
      TextureVector l = npz::get(ar, "left").to_tensor(), r = npz::get(ar, "right").to_tensor();
      if (l.size() == atlas->vector_length() && r.size() == atlas->vector_length()) {
        s.gt_texture_left = l.reshaped({static_cast<int>(l.size())});
        s.gt_texture_right = r.reshaped({static_cast<int>(r.size())});
      }
    }
    if (!s.gt_texture_left && fs::exists(dir / "gt_texture_left.png") && fs::exists(dir / "gt_texture_right.png")) {
      ImageBuffer l = read_png(dir / "gt_texture_left.png"), r = read_png(dir / "gt_texture_right.png");
      if (image_height(l) != atlas->resolution) l = resize_bilinear(l, atlas->resolution, atlas->resolution);
      if (image_height(r) != atlas->resolution) r = resize_bilinear(r, atlas->resolution, atlas->resolution);
      s.gt_texture_left = uv_image_to_vector(*atlas, l);
      s.gt_texture_right = uv_image_to_vector(*atlas, r);
    }
  }
  return s;
}

void save_scene(const fs::path& dir, const SceneSample& scene, const UVAtlas* atlas,
                const std::optional<ScenePose>& pose) {
  fs::create_directories(dir);
  write_png(dir / "image.png", scene.image);
  write_obj(dir / "left.obj", scene.mesh_left);
  write_obj(dir / "right.obj", scene.mesh_right);
  write_camera_json(dir / "camera.json", scene.camera);
  if (scene.gt_light) write_light_json(dir / "light.json", *scene.gt_light);
  if (scene.gt_mask) {
    const int res = scene.resolution();
    ImageBuffer m = make_image(res, res);
    const std::size_t n = static_cast<std::size_t>(res) * res;
    for (std::size_t p = 0; p < n; ++p)
      for (int c = 0; c < 3; ++c) m[c * n + p] = (*scene.gt_mask)[p] ? 1.0 : 0.0;
    write_png(dir / "mask.png", m);
  }
  if (atlas && scene.gt_texture_left && scene.gt_texture_right) {
    write_png(dir / "gt_texture_left.png", vector_to_uv_image(*atlas, *scene.gt_texture_left));
    write_png(dir / "gt_texture_right.png", vector_to_uv_image(*atlas, *scene.gt_texture_right));
    npz::Archive ar;
    ar["left"] = npz::Array::from_tensor(*scene.gt_texture_left);
    ar["right"] = npz::Array::from_tensor(*scene.gt_texture_right);
    npz::save(dir / "gt_textures.npz", ar);
  }
  if (pose) write_pose_json(dir / "pose.json", *pose);
}

std::vector<TextureVector> generate_texture_corpus(uint64_t seed, int n, const UVAtlas& atlas) {
  if (n < 2) throw std::invalid_argument("texture corpus needs at least 2 samples, got " + std::to_string(n));
  std::vector<TextureVector> corpus;
  corpus.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto rng = make_rng({seed, kCorpusStream, static_cast<uint64_t>(i)});
    TextureVector t = identity_texture(draw_identity(rng), atlas);
    clamp_texture(t);
    corpus.push_back(std::move(t));
  }
  return corpus;
}

ScenePose synthetic_pose(uint64_t seed, int pose_id) {
  auto rng = make_rng({seed, kPoseStream, static_cast<uint64_t>(pose_id)});
  auto articulate = [&](HandPose& p) {
    for (int d = 0; d < kNumDigits; ++d) {
      const double max_flex = d == 0 ? 0.35 : 0.75;
      for (int k = 0; k < 3; ++k) p.flexion[3 * d + k] = uniform(rng, 0.0, max_flex);
      p.spread[d] = uniform(rng, -0.12, 0.12);
    }
  };
  auto jitter = [&](double deg) {
    const double r = deg * kPi / 180;
    return axis_angle(Vec3::UnitX(), uniform(rng, -r, r)) * axis_angle(Vec3::UnitY(), uniform(rng, -r, r)) *
           axis_angle(Vec3::UnitZ(), uniform(rng, -r, r));
  };
  ScenePose pose;
  // Local frame: fingers along +y, palm toward +z. The camera looks down +z
  // with +y pointing down the image.
  // Left hand: palm toward the camera, fingers up, tilted toward the right hand.
  pose.left.rotation = jitter(12) * axis_angle(Vec3::UnitZ(), 0.35) * axis_angle(Vec3::UnitX(), kPi);
  pose.left.translation = Vec3(-3.0 + uniform(rng, -1, 1), 7.5 + uniform(rng, -1, 1), 47.0 + uniform(rng, -1, 1));
  // Right hand: back toward the camera, crossing in front of the left hand.
  pose.right.rotation = jitter(12) * axis_angle(Vec3::UnitZ(), kPi - 0.35);
  pose.right.translation = Vec3(3.0 + uniform(rng, -1, 1), 8.0 + uniform(rng, -1, 1), 43.5 + uniform(rng, -1, 1));
  articulate(pose.left);
  articulate(pose.right);
  return pose;
}

Camera synthetic_camera(int view_id, int image_resolution) {
  const Vec3 target(0, 0, 45);
  const double yaw = view_id * kPi / 4;
  const double pitch = ((view_id % 3) - 1) * 12.0 * kPi / 180;
  const Vec3 offset = axis_angle(Vec3::UnitY(), yaw) * axis_angle(Vec3::UnitX(), pitch) * Vec3(0, 0, -45);
  const Vec3 eye = target + offset;
  const Vec3 z = (target - eye).normalized();
  const Vec3 y = (Vec3::UnitY() - Vec3::UnitY().dot(z) * z).normalized();
  const Vec3 x = y.cross(z);
  Camera c;
  c.width = c.height = image_resolution;
  c.fx = c.fy = 2.0 * image_resolution;
  c.cx = c.cy = 0.5 * image_resolution;
  c.rotation.row(0) = x.transpose();
  c.rotation.row(1) = y.transpose();
  c.rotation.row(2) = z.transpose();
  c.translation = -c.rotation * eye;
  return c;
}

Vec3 synthetic_background(uint64_t seed) {
  auto rng = make_rng({seed, kLightStream, 1});
  const double g = uniform(rng, 0.08, 0.2);
  return Vec3(g, g + uniform(rng, -0.02, 0.02), g + uniform(rng, 0.0, 0.06));
}

SceneSample generate_synthetic_scene(uint64_t seed, const UVAtlas& atlas, int pose_id, int view_id,
                                     int image_resolution) {
  const HandTemplate& tpl = HandTemplate::shipped();
  if (atlas.face_uvs.size() != tpl.num_faces()) {
    throw std::invalid_argument("synthetic scenes need an atlas built from the shipped hand template");
  }
  auto id_rng = make_rng({seed, kIdentityStream});
  const TextureIdentity identity = draw_identity(id_rng);
  TextureVector base = identity_texture(identity, atlas);

  SceneSample s;
  TextureVector left = base, right = base;
  auto detail_left = make_rng({seed, kDetailStream, 0});
  auto detail_right = make_rng({seed, kDetailStream, 1});
  perturb_hand(left, atlas, detail_left);
  perturb_hand(right, atlas, detail_right);
  clamp_texture(left);
  clamp_texture(right);
  s.gt_texture_left = std::move(left);
  s.gt_texture_right = std::move(right);

  auto light_rng = make_rng({seed, kLightStream, 0});
  LightParams light;
  const Vec3 tint(uniform(light_rng, 0.9, 1.0), uniform(light_rng, 0.9, 1.0), uniform(light_rng, 0.9, 1.0));
  light.ambient = (uniform(light_rng, 0.45, 0.65) * tint).cwiseMax(Vec3::Constant(0.2));
  light.diffuse = (uniform(light_rng, 0.45, 0.75) * tint).cwiseMax(Vec3::Constant(0.2));
  light.specular = Vec3::Constant(uniform(light_rng, 0.2, 0.3));
  light.direction = Vec3(uniform(light_rng, -0.5, 0.5), uniform(light_rng, -0.2, 0.6), 1.0).normalized();
  s.gt_light = light;

  const ScenePose pose = synthetic_pose(seed, pose_id);
  s.mesh_left = tpl.posed(pose.left, Handedness::kLeft);
  s.mesh_right = tpl.posed(pose.right, Handedness::kRight);
  s.camera = synthetic_camera(view_id, image_resolution);

  const RasterBuffers raster = rasterize(s.mesh_left, s.mesh_right, s.camera, image_resolution);
  const Vec3 bg = synthetic_background(seed);
  ImageBuffer background = make_image(image_resolution, image_resolution);
  const std::size_t n = raster.num_pixels();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p) background[c * n + p] = bg[c];
  const ShadingPlan plan(raster, atlas);
  s.image = shade_phong(plan, *s.gt_texture_left, *s.gt_texture_right, light, background);
  s.gt_mask = raster.silhouette();
  return s;
}

}  // namespace handtex

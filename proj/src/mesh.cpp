#include "handtex/mesh.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace handtex {

namespace {

// FNV-1a over raw bytes.
struct Hasher {
  uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
  void real(double v) { bytes(&v, sizeof v); }
  void integer(int64_t v) { bytes(&v, sizeof v); }
};

}  // namespace

std::string to_string(Handedness h) { return h == Handedness::kLeft ? "left" : "right"; }

void validate_mesh(const HandMesh& mesh) {
  const std::string who = to_string(mesh.handedness) + " mesh";
  if (mesh.vertices.empty() || mesh.faces.empty()) throw std::runtime_error(who + " is empty");
  if (mesh.normals.size() != mesh.vertices.size()) throw std::runtime_error(who + ": normal count != vertex count");
  if (mesh.corner_uvs.size() != mesh.faces.size()) throw std::runtime_error(who + ": missing per-corner UVs");
  const int nv = static_cast<int>(mesh.vertices.size());
  std::map<std::pair<int, int>, int> edge_use;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces[f][k];
      if (a < 0 || a >= nv) throw std::runtime_error(who + ": face " + std::to_string(f) + " index out of range");
      const int b = mesh.faces[f][(k + 1) % 3];
      if (b < 0 || b >= nv) continue;
      if (++edge_use[{std::min(a, b), std::max(a, b)}] > 2) {
        throw std::runtime_error(who + " is non-manifold: edge (" + std::to_string(a) + "," + std::to_string(b) +
                                 ") shared by more than two faces");
      }
    }
  }
  for (std::size_t i = 0; i < mesh.normals.size(); ++i) {
    if (std::abs(mesh.normals[i].norm() - 1.0) > 1e-6) {
      throw std::runtime_error(who + ": normal " + std::to_string(i) + " is not unit length");
    }
  }
}

void recompute_normals(HandMesh& mesh) {
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  for (const auto& f : mesh.faces) {
    const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    for (int k = 0; k < 3; ++k) acc[f[k]] += n;
  }
  mesh.normals.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double len = acc[i].norm();
    mesh.normals[i] = len > 1e-12 ? Vec3(acc[i] / len) : Vec3(0, 0, 1);
  }
}

HandMesh mirror_x(const HandMesh& mesh, Handedness handedness) {
  HandMesh out = mesh;
  out.handedness = handedness;
  for (auto& v : out.vertices) v.x() = -v.x();
  for (auto& n : out.normals) n.x() = -n.x();
  for (std::size_t f = 0; f < out.faces.size(); ++f) {
    std::swap(out.faces[f][1], out.faces[f][2]);
    std::swap(out.corner_uvs[f][1], out.corner_uvs[f][2]);
  }
  return out;
}

HandMesh read_obj(const std::filesystem::path& path, Handedness handedness) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh " + path.string());
  HandMesh mesh;
  mesh.handedness = handedness;
  std::vector<Vec2> uvs;
  std::vector<Vec3> normals;
  std::vector<std::array<int, 3>> normal_refs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "vt") {
      Vec2 t;
      ls >> t.x() >> t.y();
      uvs.push_back(t);
    } else if (tag == "vn") {
      Vec3 n;
      ls >> n.x() >> n.y() >> n.z();
      normals.push_back(n);
    } else if (tag == "f") {
      std::array<int, 3> f{}, t{}, nr{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": face needs 3 corners");
        int vi = 0, ti = 0, ni = 0;
        if (std::sscanf(tok.c_str(), "%d/%d/%d", &vi, &ti, &ni) < 2) {
          throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": face corner lacks a vt index");
        }
        f[k] = vi - 1;
        t[k] = ti - 1;
        nr[k] = ni - 1;
      }
      std::string extra;
      if (ls >> extra) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": only triangles are supported");
      std::array<Vec2, 3> cu;
      for (int k = 0; k < 3; ++k) {
        if (t[k] < 0 || t[k] >= static_cast<int>(uvs.size())) {
          throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": vt index out of range");
        }
        cu[k] = uvs[t[k]];
      }
      mesh.faces.push_back(f);
      mesh.corner_uvs.push_back(cu);
      normal_refs.push_back(nr);
    }
  }
  if (mesh.vertices.empty() || mesh.faces.empty()) throw std::runtime_error("mesh " + path.string() + " is empty");
  // Per-vertex normals from the vn records referenced by each corner.
  if (normals.empty()) {
    recompute_normals(mesh);
  } else {
    mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
      for (int k = 0; k < 3; ++k) {
        const int ni = normal_refs[f][k];
        if (ni < 0 || ni >= static_cast<int>(normals.size())) throw std::runtime_error(path.string() + ": vn index out of range");
        if (mesh.faces[f][k] >= 0 && mesh.faces[f][k] < static_cast<int>(mesh.vertices.size()))
          mesh.normals[mesh.faces[f][k]] = normals[ni];
      }
  }
  validate_mesh(mesh);
  return mesh;
}

void write_obj(const std::filesystem::path& path, const HandMesh& mesh) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mesh " + path.string());
  out << std::setprecision(17);
  out << "# hand mesh (" << to_string(mesh.handedness) << ")\n";
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& n : mesh.normals) out << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
  // One vt per corner keeps the format lossless for per-corner UVs.
  for (const auto& cu : mesh.corner_uvs)
    for (const auto& t : cu) out << "vt " << t.x() << ' ' << t.y() << '\n';
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    out << 'f';
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.faces[f][k] + 1;
      out << ' ' << v << '/' << (3 * f + k + 1) << '/' << v;
    }
    out << '\n';
  }
}

uint64_t mesh_hash(const HandMesh& mesh) {
  Hasher h;
  h.integer(static_cast<int64_t>(mesh.handedness));
  for (const auto& v : mesh.vertices) h.bytes(v.data(), 3 * sizeof(double));
  for (const auto& f : mesh.faces) h.bytes(f.data(), 3 * sizeof(int));
  for (const auto& cu : mesh.corner_uvs)
    for (const auto& t : cu) h.bytes(t.data(), 2 * sizeof(double));
  return h.h;
}

Camera Camera::resized(int new_width, int new_height) const {
  Camera c = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  c.fx *= sx;
  c.cx *= sx;
  c.fy *= sy;
  c.cy *= sy;
  c.width = new_width;
  c.height = new_height;
  return c;
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::runtime_error("invalid camera: focal length must be positive");
  if (width <= 0 || height <= 0) throw std::runtime_error("invalid camera: image size must be positive");
  const Mat3 rrt = rotation * rotation.transpose();
  if ((rrt - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || rotation.determinant() < 0) {
    throw std::runtime_error("invalid camera: rotation is not orthonormal");
  }
}

Camera read_camera_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open camera " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Camera c;
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    const auto& r = j.at("rotation");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) c.rotation(i, k) = r.at(i).at(k).get<double>();
    const auto& t = j.at("translation");
    for (int i = 0; i < 3; ++i) c.translation(i) = t.at(i).get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid camera file " + path.string() + ": " + e.what());
  }
}

void write_camera_json(const std::filesystem::path& path, const Camera& c) {
  nlohmann::json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["rotation"] = {{c.rotation(0, 0), c.rotation(0, 1), c.rotation(0, 2)},
                   {c.rotation(1, 0), c.rotation(1, 1), c.rotation(1, 2)},
                   {c.rotation(2, 0), c.rotation(2, 1), c.rotation(2, 2)}};
  j["translation"] = {c.translation(0), c.translation(1), c.translation(2)};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write camera " + path.string());
  out << j.dump(2) << '\n';
}

uint64_t camera_hash(const Camera& c) {
  Hasher h;
  for (double v : {c.fx, c.fy, c.cx, c.cy}) h.real(v);
  h.integer(c.width);
  h.integer(c.height);
  h.bytes(c.rotation.data(), 9 * sizeof(double));
  h.bytes(c.translation.data(), 3 * sizeof(double));
  return h.h;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace handtex

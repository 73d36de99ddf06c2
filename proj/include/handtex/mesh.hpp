#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace handtex {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Handedness { kLeft = 0, kRight = 1 };

std::string to_string(Handedness h);

/// Triangle mesh of one hand. UVs are stored per face corner so seams can
/// share positions while carrying different texture coordinates.
struct HandMesh {
  Handedness handedness = Handedness::kLeft;
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;  // unit length, one per vertex
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2, 3>> corner_uvs;

  std::size_t num_faces() const { return faces.size(); }
};

/// Throws std::runtime_error on empty meshes, out-of-range indices, edges
/// shared by more than two faces, or non-unit normals.
void validate_mesh(const HandMesh& mesh);

/// Area-weighted vertex normals. Vertices touching only degenerate faces keep
/// a fallback of +z.
void recompute_normals(HandMesh& mesh);

/// Reflect through the x = 0 plane, flipping winding so normals stay outward.
HandMesh mirror_x(const HandMesh& mesh, Handedness handedness);

HandMesh read_obj(const std::filesystem::path& path, Handedness handedness);
void write_obj(const std::filesystem::path& path, const HandMesh& mesh);

uint64_t mesh_hash(const HandMesh& mesh);

/// Pinhole camera: x_cam = rotation * x_world + translation, pixel =
/// (fx * x / z + cx, fy * y / z + cy) with pixel centers at integer + 0.5.
/// The camera looks down +z with +y pointing down the image.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 256, height = 256;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  /// Same view at a different image size (intrinsics rescaled).
  Camera resized(int new_width, int new_height) const;
  void validate() const;
};

Camera read_camera_json(const std::filesystem::path& path);
void write_camera_json(const std::filesystem::path& path, const Camera& camera);
uint64_t camera_hash(const Camera& camera);

/// Rotation about a unit axis (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);

}  // namespace handtex

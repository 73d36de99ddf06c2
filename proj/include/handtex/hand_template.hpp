#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "handtex/mesh.hpp"

namespace handtex {

/// Wrist/root joint plus three joints for each of five digits.
inline constexpr int kNumJoints = 16;
inline constexpr int kNumDigits = 5;

/// One rectangular UV chart of the shipped template: a closed tube whose
/// circumference runs along u and whose length runs along v.
struct ChartInfo {
  std::string name;
  int digit = -1;  // -1 for the palm, 0 = thumb ... 4 = little finger
  double u0 = 0, u1 = 0, v0 = 0, v1 = 0;
  double circumference = 0;         // cm at the widest ring
  std::vector<double> ring_s;       // arc position (cm) of every ring, ring 0 at v0
  std::vector<double> joint_s;      // arc positions of the digit joints

  bool contains(const Vec2& uv) const { return uv.x() >= u0 && uv.x() <= u1 && uv.y() >= v0 && uv.y() <= v1; }
  /// Angle around the tube (0..2pi); pi/2 faces the palm side.
  double angle_at(double u) const;
  /// Arc position along the tube (cm).
  double arc_at(double v) const;
};

/// Articulation of one hand: global placement plus per-joint angles (radians).
struct HandPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::array<double, 15> flexion{};  // digit-major: thumb (3), index (3), ...
  std::array<double, 5> spread{};    // abduction at the base joint of each digit
};

/// Low-poly left-hand template (about 1.8k triangles, 16 joints) with a fixed
/// UV layout. The right hand is its mirror image with identical UVs.
class HandTemplate {
 public:
  static const HandTemplate& shipped();

  /// Rest-pose mesh in hand-local coordinates (cm): wrist at the origin,
  /// fingers along +y, palm facing +z.
  HandMesh rest_mesh(Handedness handedness = Handedness::kLeft) const;

  /// Posed mesh: joint angles act in the left-hand local frame, the result
  /// is mirrored for right hands, then placed by pose.rotation/translation.
  HandMesh posed(const HandPose& pose, Handedness handedness) const;

  /// Rest-pose joint positions in hand-local coordinates.
  const std::array<Vec3, kNumJoints>& joints() const { return joint_pos_; }
  const std::vector<ChartInfo>& charts() const { return charts_; }
  const ChartInfo* chart_at(const Vec2& uv) const;

  std::size_t num_faces() const { return rest_.faces.size(); }
  std::size_t num_vertices() const { return rest_.vertices.size(); }

  static constexpr const char* kVersion = "handtex-template-1";

 private:
  HandTemplate();

  struct Skin {
    std::array<int, 2> joint{0, 0};
    std::array<double, 2> weight{1.0, 0.0};
  };

  HandMesh rest_;
  std::vector<Skin> skin_;
  std::array<Vec3, kNumJoints> joint_pos_{};
  std::array<Vec3, kNumDigits> flex_axis_{};
  std::array<Vec3, kNumDigits> spread_axis_{};
  std::vector<ChartInfo> charts_;
};

}  // namespace handtex

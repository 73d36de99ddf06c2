#include "handtex/hand_template.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace handtex {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Chart rectangles sit on a 1/16 grid, inset so every corner falls inside a
// covered texel at all power-of-two resolutions up to 1024.
constexpr double kInset = 1.0 / 4096.0;

struct Rigid {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return r * x + t; }
  Rigid then(const Rigid& inner) const { return {r * inner.r, r * inner.t + t}; }
};

Rigid rotate_about(const Vec3& pivot, const Mat3& rot) { return {rot, pivot - rot * pivot}; }

struct Ring {
  Vec3 center;
  Vec3 x_axis;
  Vec3 z_axis;
  double rx = 0, rz = 0;
  double s = 0;
  std::array<int, 2> joint{0, 0};
  std::array<double, 2> weight{1.0, 0.0};
};

struct DigitSpec {
  const char* name;
  Vec3 base;
  Vec3 dir;
  Vec3 palm_ref;
  std::array<double, 3> length;
  double radius;
  double u0, u1, v0, v1;  // chart on the 1/16 grid
};

double smooth01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3 - 2 * x);
}

}  // namespace

double ChartInfo::angle_at(double u) const { return kTwoPi * (u - u0) / (u1 - u0); }

double ChartInfo::arc_at(double v) const {
  if (ring_s.size() < 2) return 0.0;
  const double f = std::clamp((v - v0) / (v1 - v0), 0.0, 1.0) * static_cast<double>(ring_s.size() - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(f), ring_s.size() - 2);
  const double t = f - static_cast<double>(i);
  return ring_s[i] * (1 - t) + ring_s[i + 1] * t;
}

const HandTemplate& HandTemplate::shipped() {
  static const HandTemplate instance;
  return instance;
}

HandTemplate::HandTemplate() {
  rest_.handedness = Handedness::kLeft;

  auto add_tube = [this](const std::vector<Ring>& rings, int around, ChartInfo chart) {
    chart.u0 += kInset;
    chart.v0 += kInset;
    chart.u1 -= kInset;
    chart.v1 -= kInset;
    const int base = static_cast<int>(rest_.vertices.size());
    const int n_rings = static_cast<int>(rings.size());
    for (const auto& ring : rings) {
      chart.ring_s.push_back(ring.s);
      for (int k = 0; k < around; ++k) {
        const double th = kTwoPi * k / around;
        rest_.vertices.push_back(ring.center + ring.rx * std::cos(th) * ring.x_axis +
                                 ring.rz * std::sin(th) * ring.z_axis);
        skin_.push_back({ring.joint, ring.weight});
      }
    }
    auto vid = [&](int r, int k) { return base + r * around + (k % around); };
    auto uv = [&](int r, int k) {
      return Vec2(chart.u0 + (chart.u1 - chart.u0) * k / around, chart.v0 + (chart.v1 - chart.v0) * r / (n_rings - 1));
    };
    for (int r = 0; r + 1 < n_rings; ++r) {
      for (int k = 0; k < around; ++k) {
        rest_.faces.push_back({vid(r, k), vid(r + 1, k), vid(r + 1, k + 1)});
        rest_.corner_uvs.push_back({uv(r, k), uv(r + 1, k), uv(r + 1, k + 1)});
        rest_.faces.push_back({vid(r, k), vid(r + 1, k + 1), vid(r, k + 1)});
        rest_.corner_uvs.push_back({uv(r, k), uv(r + 1, k + 1), uv(r, k + 1)});
      }
    }
    charts_.push_back(std::move(chart));
  };

  // Palm: elliptic tube along +y closed at both ends.
  {
    const double top = 8.5;
    auto half_width = [&](double y) { return 3.0 + 0.7 * std::clamp(y, 0.0, top) / top; };
    auto half_depth = [&](double y) { return 1.15 + 0.2 * std::sin(std::numbers::pi * std::clamp(y, 0.0, top) / top); };
    std::vector<std::pair<double, double>> profile = {{-1.05, 0.0}, {-0.95, 0.45}, {-0.6, 0.8}, {-0.15, 0.97}};
    for (int i = 0; i <= 8; ++i) profile.emplace_back(0.5 + i, 1.0);
    profile.insert(profile.end(), {{9.0, 0.88}, {9.35, 0.55}, {9.5, 0.0}});
    std::vector<Ring> rings;
    for (auto [y, scale] : profile) {
      Ring r;
      r.center = Vec3(0, y, 0);
      r.x_axis = Vec3::UnitX();
      r.z_axis = Vec3::UnitZ();
      r.rx = scale * half_width(y);
      r.rz = scale * half_depth(y);
      r.s = y;
      rings.push_back(r);
    }
    ChartInfo chart;
    chart.name = "palm";
    chart.digit = -1;
    chart.u0 = 0.0;
    chart.u1 = 12.0 / 16;
    chart.v0 = 0.0;
    chart.v1 = 7.0 / 16;
    chart.circumference = std::numbers::pi * (3 * (3.7 + 1.3) - std::sqrt((3 * 3.7 + 1.3) * (3.7 + 3 * 1.3)));
    add_tube(rings, 16, chart);
    joint_pos_[0] = Vec3::Zero();
  }

  const std::array<DigitSpec, kNumDigits> digits = {{
      {"thumb", {2.3, 1.6, 0.5}, {0.8, 0.75, 0.45}, {-0.4, 0.0, 1.0}, {3.2, 2.8, 2.3}, 1.05, 12, 15, 0, 8},
      {"index", {2.45, 8.3, 0.0}, {0.08, 1.0, 0.0}, {0, 0, 1}, {3.9, 2.4, 1.9}, 0.90, 0, 3, 8, 16},
      {"middle", {0.8, 8.6, 0.0}, {0.0, 1.0, 0.0}, {0, 0, 1}, {4.3, 2.7, 2.0}, 0.93, 3, 6, 8, 16},
      {"ring", {-0.85, 8.4, 0.0}, {-0.06, 1.0, 0.0}, {0, 0, 1}, {4.0, 2.6, 1.9}, 0.87, 6, 9, 8, 16},
      {"little", {-2.45, 7.8, 0.0}, {-0.14, 1.0, 0.0}, {0, 0, 1}, {3.2, 1.9, 1.7}, 0.75, 9, 12, 8, 16},
  }};

  for (int d = 0; d < kNumDigits; ++d) {
    const DigitSpec& spec = digits[d];
    const Vec3 y_axis = spec.dir.normalized();
    const Vec3 x_axis = y_axis.cross(spec.palm_ref.normalized()).normalized();
    const Vec3 z_axis = x_axis.cross(y_axis);
    flex_axis_[d] = x_axis;
    spread_axis_[d] = z_axis;
    const int j1 = 1 + 3 * d, j2 = j1 + 1, j3 = j1 + 2;
    const double l1 = spec.length[0], l2 = spec.length[1], l3 = spec.length[2];
    const double total = l1 + l2 + l3;
    joint_pos_[j1] = spec.base;
    joint_pos_[j2] = spec.base + l1 * y_axis;
    joint_pos_[j3] = spec.base + (l1 + l2) * y_axis;

    std::vector<std::pair<double, double>> profile = {{-0.9, 0.95}};
    const int steps = static_cast<int>(std::ceil(total / 0.65));
    for (int i = 0; i <= steps; ++i) profile.emplace_back(total * i / steps, 1.0);
    profile.insert(profile.end(), {{total + 0.25, 0.8}, {total + 0.45, 0.5}, {total + 0.55, 0.0}});

    const double blend = 0.3;
    std::vector<Ring> rings;
    for (auto [s, scale] : profile) {
      Ring r;
      r.center = spec.base + s * y_axis;
      r.x_axis = x_axis;
      r.z_axis = z_axis;
      const double radius = spec.radius * (1.0 - 0.22 * std::clamp(s, 0.0, total) / total) * scale;
      r.rx = radius;
      r.rz = 0.88 * radius;
      r.s = s;
      if (s < l1 + l2 - blend) {
        const double w = smooth01((s - (l1 - blend)) / (2 * blend));
        r.joint = {j1, j2};
        r.weight = {1 - w, w};
      } else {
        const double w = smooth01((s - (l1 + l2 - blend)) / (2 * blend));
        r.joint = {j2, j3};
        r.weight = {1 - w, w};
      }
      rings.push_back(r);
    }
    ChartInfo chart;
    chart.name = spec.name;
    chart.digit = d;
    chart.u0 = spec.u0 / 16;
    chart.u1 = spec.u1 / 16;
    chart.v0 = spec.v0 / 16;
    chart.v1 = spec.v1 / 16;
    chart.circumference = 2 * std::numbers::pi * spec.radius;
    chart.joint_s = {0.0, l1, l1 + l2};
    add_tube(rings, 8, chart);
  }

  recompute_normals(rest_);
}

HandMesh HandTemplate::rest_mesh(Handedness handedness) const {
  return handedness == Handedness::kLeft ? rest_ : mirror_x(rest_, Handedness::kRight);
}

HandMesh HandTemplate::posed(const HandPose& pose, Handedness handedness) const {
  std::array<Rigid, kNumJoints> g;
  for (int d = 0; d < kNumDigits; ++d) {
    const int j1 = 1 + 3 * d;
    const Mat3 r1 = axis_angle(spread_axis_[d], pose.spread[d]) * axis_angle(flex_axis_[d], pose.flexion[3 * d]);
    g[j1] = rotate_about(joint_pos_[j1], r1);
    g[j1 + 1] = g[j1].then(rotate_about(joint_pos_[j1 + 1], axis_angle(flex_axis_[d], pose.flexion[3 * d + 1])));
    g[j1 + 2] = g[j1 + 1].then(rotate_about(joint_pos_[j1 + 2], axis_angle(flex_axis_[d], pose.flexion[3 * d + 2])));
  }

  HandMesh mesh = rest_;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 rest = rest_.vertices[i];
    const Skin& s = skin_[i];
    mesh.vertices[i] = s.weight[0] * g[s.joint[0]].apply(rest) + s.weight[1] * g[s.joint[1]].apply(rest);
  }
  if (handedness == Handedness::kRight) mesh = mirror_x(mesh, Handedness::kRight);
  for (auto& v : mesh.vertices) v = pose.rotation * v + pose.translation;
  recompute_normals(mesh);
  return mesh;
}

const ChartInfo* HandTemplate::chart_at(const Vec2& uv) const {
  for (const auto& c : charts_)
    if (c.contains(uv)) return &c;
  return nullptr;
}

}  // namespace handtex

#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "handtex/autograd.hpp"
#include "handtex/hand_template.hpp"
#include "handtex/mesh.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex::testing {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, Real lo = 0.0, Real hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<Real> d(lo, hi);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

/// Pinhole camera at the origin looking down +z.
inline Camera square_camera(int res, double focal_factor = 1.0) {
  Camera c;
  c.width = c.height = res;
  c.fx = c.fy = focal_factor * res;
  c.cx = c.cy = res / 2.0;
  return c;
}

/// n x n grid of quads in the plane z = depth, spanning [x0, x1] x [y0, y1],
/// facing the camera, with UVs covering [u0, u1] x [0, 1].
inline HandMesh make_card(Handedness h, double x0, double x1, double y0, double y1, double depth, int n = 4,
                          double u0 = 0.0, double u1 = 1.0) {
  HandMesh m;
  m.handedness = h;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) {
      m.vertices.emplace_back(x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * j / n, depth);
      m.normals.emplace_back(0, 0, -1);
    }
  auto vid = [n](int i, int j) { return j * (n + 1) + i; };
  auto uv = [&](int i, int j) { return Vec2(u0 + (u1 - u0) * i / n, static_cast<double>(j) / n); };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      m.faces.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
      m.corner_uvs.push_back({uv(i, j), uv(i + 1, j), uv(i + 1, j + 1)});
      m.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
      m.corner_uvs.push_back({uv(i, j), uv(i + 1, j + 1), uv(i, j + 1)});
    }
  return m;
}

/// Atlas from a card's face UVs.
inline UVAtlas card_atlas(const HandMesh& card, int res) { return build_atlas(card.corner_uvs, res, "card"); }

/// Card placed far behind the camera (never rasterized).
inline HandMesh hidden_card(Handedness h, int n = 4) { return make_card(h, -1, 1, -1, 1, -10.0, n); }

struct GradCheckResult {
  int checked = 0;
  double worst = 0;
};

/// Central differences of a scalar function at the listed coordinates,
/// compared to the analytic gradient with relative error
/// |a - n| / max(|a|, |n|, floor).
inline GradCheckResult check_gradient(const std::function<ad::Var(const ad::Var&)>& f, const Tensor& x0,
                                      const std::vector<std::size_t>& coords, double h = 1e-4, double floor = 1e-6) {
  ad::Var x(x0, true);
  const ad::Var y = f(x);
  ad::backward(y);
  const Tensor analytic = x.grad();
  GradCheckResult r;
  for (std::size_t i : coords) {
    Tensor plus = x0, minus = x0;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (f(ad::Var(plus)).item() - f(ad::Var(minus)).item()) / (2 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    r.worst = std::max(r.worst, rel);
    ++r.checked;
  }
  return r;
}

inline std::vector<std::size_t> random_coords(std::size_t n, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  std::vector<std::size_t> c(static_cast<std::size_t>(count));
  for (auto& i : c) i = d(rng);
  return c;
}

/// Weighted sum with fixed random weights: a scalar probe of every output.
inline ad::Var probe(const ad::Var& y, const Tensor& weights) { return ad::sum(ad::mul_const(y, weights)); }

}  // namespace handtex::testing

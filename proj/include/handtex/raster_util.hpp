#pragma once

#include "handtex/mesh.hpp"

namespace handtex::detail {

/// Twice the signed area of (a, b, c).
inline double signed_area2(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

/// Edge function of the directed edge p->q at x, evaluated from the
/// lexicographically smaller endpoint so that reversing the edge negates the
/// value exactly. Shared edges therefore never claim a sample twice.
inline double edge_function(const Vec2& p, const Vec2& q, const Vec2& x) {
  const bool p_first = (p.x() < q.x()) || (p.x() == q.x() && p.y() <= q.y());
  const Vec2& lo = p_first ? p : q;
  const Vec2& hi = p_first ? q : p;
  const double e = (hi.x() - lo.x()) * (x.y() - lo.y()) - (hi.y() - lo.y()) * (x.x() - lo.x());
  return p_first ? e : -e;
}

inline bool owns_edge(const Vec2& p, const Vec2& q) {
  const double dx = q.x() - p.x(), dy = q.y() - p.y();
  return dy > 0 || (dy == 0 && dx < 0);
}

/// Coverage test with a tie-break rule on edges. The triangle must have
/// positive signed_area2; callers swap two corners otherwise.
inline bool covers(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& x) {
  const double e0 = edge_function(a, b, x);
  const double e1 = edge_function(b, c, x);
  const double e2 = edge_function(c, a, x);
  auto ok = [](double e, bool owned) { return e > 0 || (e == 0 && owned); };
  return ok(e0, owns_edge(a, b)) && ok(e1, owns_edge(b, c)) && ok(e2, owns_edge(c, a));
}

}  // namespace handtex::detail

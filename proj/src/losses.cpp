#include "handtex/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace handtex {

namespace {

using ad::Var;

Real sign(Real x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

void check_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

void push_grad(ad::Node& parent, std::size_t i, Real g) {
  if (parent.requires_grad) parent.grad_buffer()[i] += g;
}

}  // namespace

void LossWeights::validate() const {
  for (Real x : {rec, rec_coarse, rec_albedo, nv, alb, sym}) {
    if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("loss weights must be finite and nonnegative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"rec", rec}, {"rec_coarse", rec_coarse}, {"rec_albedo", rec_albedo}, {"nv", nv}, {"alb", alb}, {"sym", sym}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  w.rec = j.value("rec", w.rec);
  w.rec_coarse = j.value("rec_coarse", w.rec_coarse);
  w.rec_albedo = j.value("rec_albedo", w.rec_albedo);
  w.nv = j.value("nv", w.nv);
  w.alb = j.value("alb", w.alb);
  w.sym = j.value("sym", w.sym);
  w.validate();
  return w;
}

Var masked_l1(const Var& a, const Var& b, const PixelMask& mask) {
  check_same_shape(a, b, "masked_l1");
  if (a.shape().size() != 3 || a.shape()[0] != 3) throw std::invalid_argument("masked_l1 expects [3,H,W] images");
  const std::size_t n = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
  if (mask.size() != n) throw std::invalid_argument("masked_l1: mask size does not match the image");
  const std::size_t count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; }));
  if (count == 0) throw std::invalid_argument("no hand pixels in the loss mask");
  const Real norm = 1.0 / (3.0 * static_cast<Real>(count));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Real total = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p)
      if (mask[p]) total += std::abs(av[c * n + p] - bv[c * n + p]);
  return ad::make_op(Tensor({1}, {total * norm}), {a, b}, [mask, n, norm](ad::Node& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const Real g = node.grad[0] * norm;
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < n; ++p) {
        if (!mask[p]) continue;
        const std::size_t i = c * n + p;
        const Real s = sign(pa.value[i] - pb.value[i]) * g;
        push_grad(pa, i, s);
        push_grad(pb, i, -s);
      }
  });
}

Var loss_rec(const Var& image, const Var& rendered, const Var& rendered_coarse, const Var& rendered_albedo,
             const PixelMask& mask, const LossWeights& w) {
  if (std::none_of(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; })) {
    throw std::invalid_argument("no hand pixels");
  }
  return ad::weighted_sum({masked_l1(image, rendered, mask), masked_l1(image, rendered_coarse, mask),
                           masked_l1(image, rendered_albedo, mask)},
                          {w.rec, w.rec_coarse, w.rec_albedo});
}

Var loss_nv_hand(const Var& coarse, const Var& refined, const VisibilityMask& visible) {
  check_same_shape(coarse, refined, "loss_nv");
  if (coarse.size() != 3 * visible.size()) throw std::invalid_argument("loss_nv: mask length must be P for 3P textures");
  const std::size_t slots = visible.size();
  const Real norm = 1.0 / static_cast<Real>(3 * slots);
  const Tensor& cv = coarse.value();
  const Tensor& rv = refined.value();
  Real total = 0;
  for (std::size_t k = 0; k < slots; ++k) {
    const Real hidden = 1 - visible[k];
    for (int c = 0; c < 3; ++c) total += std::abs((cv[3 * k + c] - rv[3 * k + c]) * hidden);
  }
  return ad::make_op(Tensor({1}, {total * norm}), {coarse, refined}, [visible, slots, norm](ad::Node& node) {
    auto& pc = *node.parents[0];
    auto& pr = *node.parents[1];
    const Real g = node.grad[0] * norm;
    for (std::size_t k = 0; k < slots; ++k) {
      const Real hidden = 1 - visible[k];
      if (hidden == 0) continue;
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = 3 * k + c;
        const Real s = sign((pc.value[i] - pr.value[i]) * hidden) * hidden * g;
        push_grad(pc, i, s);
        push_grad(pr, i, -s);
      }
    }
  });
}

Var loss_nv(const Var& coarse_left, const Var& refined_left, const VisibilityMask& v_left, const Var& coarse_right,
            const Var& refined_right, const VisibilityMask& v_right) {
  return ad::add(loss_nv_hand(coarse_left, refined_left, v_left), loss_nv_hand(coarse_right, refined_right, v_right));
}

std::vector<LightParams> make_consistency_lights(const LightParams& estimate) {
  const Vec3 below = Vec3(0, -1, 0).normalized();
  LightParams half;
  const Vec3 c = (0.5 * Vec3::Ones()).cwiseMax(Vec3::Constant(LightParams::kMinColor)).cwiseMin(
      Vec3::Constant(LightParams::kMaxColor));
  half.ambient = half.diffuse = half.specular = c;
  half.direction = below;
  LightParams tinted = estimate;
  tinted.direction = below;
  return {estimate, half, tinted};
}

std::vector<Var> make_consistency_lights(const Var& estimate) {
  if (estimate.size() != 12) throw std::invalid_argument("light vector must have 12 values");
  const auto fixed = make_consistency_lights(LightParams::from_tensor(estimate.value()));
  const Var half(fixed[1].to_tensor());
  const Var tinted = ad::concat({ad::slice(estimate, 0, 9), Var(Tensor({3}, {0.0, -1.0, 0.0}))});
  return {estimate, half, tinted};
}

Var loss_alb(const std::vector<Var>& albedo_images, const PixelMask& mask) {
  if (albedo_images.size() < 2) throw std::invalid_argument("loss_alb needs at least 2 albedo images");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < albedo_images.size(); ++i)
    for (std::size_t j = i + 1; j < albedo_images.size(); ++j) terms.push_back(masked_l1(albedo_images[i], albedo_images[j], mask));
  return ad::weighted_sum(terms, std::vector<Real>(terms.size(), 1.0));
}

Var loss_sym(const Var& left, const Var& right, const UVAtlas& atlas) {
  check_same_shape(left, right, "loss_sym");
  check_vector_length(atlas, left.value(), "loss_sym");
  const std::vector<int> sym = atlas.sym_map;
  const std::size_t slots = sym.size();
  const Real norm = 1.0 / static_cast<Real>(3 * slots);
  const Tensor& lv = left.value();
  const Tensor& rv = right.value();
  Real total = 0;
  for (std::size_t k = 0; k < slots; ++k)
    for (int c = 0; c < 3; ++c) total += std::abs(lv[3 * k + c] - rv[3 * static_cast<std::size_t>(sym[k]) + c]);
  return ad::make_op(Tensor({1}, {total * norm}), {left, right}, [sym, slots, norm](ad::Node& node) {
    auto& pl = *node.parents[0];
    auto& pr = *node.parents[1];
    const Real g = node.grad[0] * norm;
    for (std::size_t k = 0; k < slots; ++k)
      for (int c = 0; c < 3; ++c) {
        const std::size_t il = 3 * k + c, ir = 3 * static_cast<std::size_t>(sym[k]) + c;
        const Real s = sign(pl.value[il] - pr.value[ir]) * g;
        push_grad(pl, il, s);
        push_grad(pr, ir, -s);
      }
  });
}

nlohmann::json LossReport::to_json() const {
  return {{"rec", rec}, {"nv", nv}, {"alb", alb}, {"sym", sym}, {"total", total}};
}

LossReport total_loss(Real rec, Real nv, Real alb, Real sym, const LossWeights& w) {
  const std::pair<const char*, Real> named[] = {{"rec", rec}, {"nv", nv}, {"alb", alb}, {"sym", sym}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss term '") + name + "'");
  }
  LossReport r{rec, nv, alb, sym, 0};
  r.total = rec + w.nv * nv + w.alb * alb + w.sym * sym;
  return r;
}

TotalLoss total_loss(const LossTerms& t, const LossWeights& w) {
  TotalLoss out;
  out.report = total_loss(t.rec.item(), t.nv.item(), t.alb.item(), t.sym.item(), w);
  out.total = ad::weighted_sum({t.rec, t.nv, t.alb, t.sym}, {1.0, w.nv, w.alb, w.sym});
  out.report.total = out.total.item();
  return out;
}

}  // namespace handtex

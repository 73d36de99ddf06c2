#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "handtex/autograd.hpp"
#include "handtex/renderer.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

struct LossWeights {
  Real rec = 1.0;
  Real rec_coarse = 0.8;
  Real rec_albedo = 0.4;
  Real nv = 0.2;
  Real alb = 0.2;
  Real sym = 0.3;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Pixel mask, row-major, 1 = hand pixel.
using PixelMask = std::vector<uint8_t>;

/// Mean absolute difference over the masked pixels and all three channels.
ad::Var masked_l1(const ad::Var& a, const ad::Var& b, const PixelMask& mask);

/// w.rec * L1(I, final) + w.rec_coarse * L1(I, coarse) + w.rec_albedo * L1(I, albedo).
/// Throws "no hand pixels" on an empty mask.
ad::Var loss_rec(const ad::Var& image, const ad::Var& rendered, const ad::Var& rendered_coarse,
                 const ad::Var& rendered_albedo, const PixelMask& mask, const LossWeights& w);

/// Mean over the 3P entries of |(coarse - refined) * (1 - v)|, for one hand.
ad::Var loss_nv_hand(const ad::Var& coarse, const ad::Var& refined, const VisibilityMask& visible);
/// Sum of the per-hand terms.
ad::Var loss_nv(const ad::Var& coarse_left, const ad::Var& refined_left, const VisibilityMask& v_left,
                const ad::Var& coarse_right, const ad::Var& refined_right, const VisibilityMask& v_right);

/// [estimate, light from below at half white, light from below with the
/// estimate's colors]; colors clamped to [0.2, 1].
std::vector<LightParams> make_consistency_lights(const LightParams& estimate);
/// Differentiable variant over the 12-value light vector: the second light is
/// constant, the third keeps the estimate's color gradients.
std::vector<ad::Var> make_consistency_lights(const ad::Var& estimate);

/// Sum over pairs i < j of masked L1 between albedo estimates.
ad::Var loss_alb(const std::vector<ad::Var>& albedo_images, const PixelMask& mask);

/// Mean over 3P entries of |left - sym(right)|.
ad::Var loss_sym(const ad::Var& left, const ad::Var& right, const UVAtlas& atlas);

struct LossTerms {
  ad::Var rec, nv, alb, sym;
};

struct LossReport {
  Real rec = 0, nv = 0, alb = 0, sym = 0, total = 0;
  nlohmann::json to_json() const;
};

struct TotalLoss {
  ad::Var total;
  LossReport report;
};

/// rec + w.nv * nv + w.alb * alb + w.sym * sym. Throws naming the first
/// non-finite term.
TotalLoss total_loss(const LossTerms& terms, const LossWeights& w);
/// Scalar form used by tests and the log checker.
LossReport total_loss(Real rec, Real nv, Real alb, Real sym, const LossWeights& w);

}  // namespace handtex

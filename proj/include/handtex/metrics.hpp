#pragma once

#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "handtex/image.hpp"
#include "handtex/losses.hpp"
#include "handtex/scene_io.hpp"
#include "handtex/trainer.hpp"

namespace handtex {

inline constexpr Real kPsnrCap = 99.0;

/// 10 log10(1 / MSE), capped at 99 dB.
Real psnr(const ImageBuffer& a, const ImageBuffer& b);
/// PSNR over masked pixels only (all three channels).
Real masked_psnr(const ImageBuffer& a, const ImageBuffer& b, const PixelMask& mask);
/// Mean absolute difference over all values.
Real mean_l1(const ImageBuffer& a, const ImageBuffer& b);

/// Windowed SSIM (11x11 Gaussian, sigma 1.5, K1 = 0.01, K2 = 0.03, data
/// range 1) over fully contained windows, averaged over channels.
Real ssim(const ImageBuffer& a, const ImageBuffer& b);

/// Five-scale product form with weights (0.0448, 0.2856, 0.3001, 0.2363,
/// 0.1333). Uses the largest M <= 5 with smallest side >= 10 * 2^(M-1) + 1
/// (weights renormalized); windows shrink to fit tiny coarse scales.
Real ms_ssim(const ImageBuffer& a, const ImageBuffer& b);
/// Number of scales ms_ssim uses for a given minimum image side.
int ms_ssim_scales(int min_side);

/// Feature extractor for a learned perceptual distance: returns one or more
/// [C, H, W] feature maps per image. Returning std::nullopt marks failure.
struct PerceptualPlugin {
  std::string name;
  std::function<std::optional<std::vector<Tensor>>(const ImageBuffer&)> features;
};

/// Per layer: L2 distance across channels at each position, averaged over
/// positions; then averaged over layers.
struct PerceptualResult {
  std::optional<Real> value;
  std::string reason;  // why value is missing
};
PerceptualResult perceptual_distance(const ImageBuffer& a, const ImageBuffer& b, const PerceptualPlugin* plugin);

/// Raw pixels as a single feature layer.
PerceptualPlugin identity_plugin();

/// Union-silhouette bounding box grown by `margin` pixels and clipped.
struct CropBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};
CropBox hand_crop(const PixelMask& mask, int width, int height, int margin = 8);
ImageBuffer crop(const ImageBuffer& image, const CropBox& box);

struct ImageMetrics {
  std::string name;
  Real l1 = 0, psnr = 0, ssim = 0, ms_ssim = 0;
  std::optional<Real> perceptual;
  nlohmann::json to_json() const;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;
  std::string perceptual_name;  // empty when no plugin was given
  std::string perceptual_reason;
  std::size_t count() const { return images.size(); }
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

ImageMetrics compare_images(const std::string& name, const ImageBuffer& rendered, const ImageBuffer& reference,
                            const PerceptualPlugin* plugin);

struct EvalOptions {
  int crop_margin = 8;
  bool crop_to_hands = true;
  const PerceptualPlugin* plugin = nullptr;
};

/// Renders every eval scene with the frozen textures and the estimated light
/// and compares against its image inside the hand crop.
MetricsReport evaluate(const TrainedScene& trained, const std::vector<SceneSample>& eval_set, const UVAtlas& atlas,
                       const EvalOptions& options = {});

/// Eval protocol size: poses x views images per scene.
constexpr int protocol_image_count(int poses, int views) { return poses * views; }

}  // namespace handtex

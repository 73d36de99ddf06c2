#include "handtex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace handtex {

namespace {

constexpr int kWindow = 11;
constexpr Real kSigma = 1.5;
constexpr Real kC1 = 0.01 * 0.01;
constexpr Real kC2 = 0.03 * 0.03;
constexpr std::array<Real, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

void check_pair(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  if (a.rank() != 3) throw std::invalid_argument(std::string(what) + ": expected [C,H,W] images");
}

std::vector<Real> gaussian_window(int size) {
  std::vector<Real> w(size);
  const Real c = 0.5 * (size - 1);
  Real total = 0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-((i - c) * (i - c)) / (2 * kSigma * kSigma));
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

// Valid-window separable filter of one channel plane.
std::vector<Real> filter_valid(const std::vector<Real>& plane, int h, int w, const std::vector<Real>& g) {
  const int k = static_cast<int>(g.size());
  const int ho = h - k + 1, wo = w - k + 1;
  std::vector<Real> tmp(static_cast<std::size_t>(h) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      Real s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wo + x] = s;
    }
  std::vector<Real> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      Real s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = s;
    }
  return out;
}

struct SsimParts {
  Real ssim = 0;  // mean luminance * contrast-structure
  Real cs = 0;    // mean contrast-structure
};

// Averages over channels of the per-channel window means.
SsimParts ssim_parts(const ImageBuffer& a, const ImageBuffer& b) {
  const int channels = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int k = std::min({kWindow, h, w});
  const auto g = gaussian_window(k);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  SsimParts total;
  for (int c = 0; c < channels; ++c) {
    std::vector<Real> x(a.data() + c * plane, a.data() + (c + 1) * plane);
    std::vector<Real> y(b.data() + c * plane, b.data() + (c + 1) * plane);
    std::vector<Real> xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto mxx = filter_valid(xx, h, w, g), myy = filter_valid(yy, h, w, g), mxy = filter_valid(xy, h, w, g);
    Real s_sum = 0, cs_sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const Real vx = mxx[i] - mx[i] * mx[i];
      const Real vy = myy[i] - my[i] * my[i];
      const Real cov = mxy[i] - mx[i] * my[i];
      const Real cs = (2 * cov + kC2) / (vx + vy + kC2);
      const Real lum = (2 * mx[i] * my[i] + kC1) / (mx[i] * mx[i] + my[i] * my[i] + kC1);
      s_sum += lum * cs;
      cs_sum += cs;
    }
    total.ssim += s_sum / static_cast<Real>(mx.size());
    total.cs += cs_sum / static_cast<Real>(mx.size());
  }
  total.ssim /= channels;
  total.cs /= channels;
  return total;
}

ImageBuffer downsample2(const ImageBuffer& img) {
  const int c = img.dim(0), h = img.dim(1) / 2, w = img.dim(2) / 2;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(ch, y, x) = 0.25 * (img.at(ch, 2 * y, 2 * x) + img.at(ch, 2 * y, 2 * x + 1) + img.at(ch, 2 * y + 1, 2 * x) +
                                   img.at(ch, 2 * y + 1, 2 * x + 1));
  return out;
}

Real mse_to_psnr(Real mse) {
  if (!(mse > 0)) return kPsnrCap;
  return std::min(kPsnrCap, 10 * std::log10(1.0 / mse));
}

}  // namespace

Real psnr(const ImageBuffer& a, const ImageBuffer& b) {
  check_pair(a, b, "psnr");
  Real mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  return mse_to_psnr(mse / static_cast<Real>(a.size()));
}

Real masked_psnr(const ImageBuffer& a, const ImageBuffer& b, const PixelMask& mask) {
  check_pair(a, b, "masked_psnr");
  const std::size_t n = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  if (mask.size() != n) throw std::invalid_argument("masked_psnr: mask size does not match the image");
  Real mse = 0;
  std::size_t count = 0;
  for (int c = 0; c < a.dim(0); ++c)
    for (std::size_t p = 0; p < n; ++p) {
      if (!mask[p]) continue;
      const Real d = a[c * n + p] - b[c * n + p];
      mse += d * d;
      ++count;
    }
  if (count == 0) throw std::invalid_argument("masked_psnr: empty mask");
  return mse_to_psnr(mse / static_cast<Real>(count));
}

Real mean_l1(const ImageBuffer& a, const ImageBuffer& b) {
  check_pair(a, b, "mean_l1");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<Real>(a.size());
}

Real ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_pair(a, b, "ssim");
  return ssim_parts(a, b).ssim;
}

int ms_ssim_scales(int min_side) {
  int scales = 1;
  while (scales < 5 && min_side >= (kWindow - 1) * (1 << scales) + 1) ++scales;
  return scales;
}

Real ms_ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_pair(a, b, "ms_ssim");
  const int scales = ms_ssim_scales(std::min(a.dim(1), a.dim(2)));
  Real weight_total = 0;
  for (int s = 0; s < scales; ++s) weight_total += kScaleWeights[s];
  ImageBuffer x = a, y = b;
  Real result = 1;
  for (int s = 0; s < scales; ++s) {
    const SsimParts parts = ssim_parts(x, y);
    const Real wgt = kScaleWeights[s] / weight_total;
    const Real term = s + 1 == scales ? parts.ssim : parts.cs;
    result *= std::pow(std::max<Real>(0, term), wgt);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return result;
}

PerceptualResult perceptual_distance(const ImageBuffer& a, const ImageBuffer& b, const PerceptualPlugin* plugin) {
  if (!plugin || !plugin->features) return {std::nullopt, "no perceptual plugin configured"};
  std::optional<std::vector<Tensor>> fa, fb;
  try {
    fa = plugin->features(a);
    fb = plugin->features(b);
  } catch (const std::exception& e) {
    return {std::nullopt, "plugin '" + plugin->name + "' failed: " + e.what()};
  }
  if (!fa || !fb) return {std::nullopt, "plugin '" + plugin->name + "' returned no features"};
  if (fa->size() != fb->size() || fa->empty()) return {std::nullopt, "plugin '" + plugin->name + "' layer count mismatch"};
  Real total = 0;
  for (std::size_t l = 0; l < fa->size(); ++l) {
    const Tensor& x = (*fa)[l];
    const Tensor& y = (*fb)[l];
    if (!x.same_shape(y) || x.rank() != 3) return {std::nullopt, "plugin '" + plugin->name + "' feature shape mismatch"};
    const int c = x.dim(0);
    const std::size_t n = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Real layer = 0;
    for (std::size_t p = 0; p < n; ++p) {
      Real d2 = 0;
      for (int ch = 0; ch < c; ++ch) {
        const Real d = x[ch * n + p] - y[ch * n + p];
        d2 += d * d;
      }
      layer += std::sqrt(d2);
    }
    total += layer / static_cast<Real>(n);
  }
  return {total / static_cast<Real>(fa->size()), ""};
}

PerceptualPlugin identity_plugin() {
  return {"identity", [](const ImageBuffer& img) -> std::optional<std::vector<Tensor>> { return std::vector<Tensor>{img}; }};
}

CropBox hand_crop(const PixelMask& mask, int width, int height, int margin) {
  if (mask.size() != static_cast<std::size_t>(width) * height) throw std::invalid_argument("hand_crop: mask size");
  CropBox box{width, height, 0, 0};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (mask[static_cast<std::size_t>(y) * width + x]) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
      }
  if (box.x1 <= box.x0) return {0, 0, width, height};
  box.x0 = std::max(0, box.x0 - margin);
  box.y0 = std::max(0, box.y0 - margin);
  box.x1 = std::min(width, box.x1 + margin);
  box.y1 = std::min(height, box.y1 + margin);
  return box;
}

ImageBuffer crop(const ImageBuffer& image, const CropBox& box) {
  const int c = image.dim(0);
  Tensor out({c, box.height(), box.width()});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < box.height(); ++y)
      for (int x = 0; x < box.width(); ++x) out.at(ch, y, x) = image.at(ch, box.y0 + y, box.x0 + x);
  return out;
}

nlohmann::json ImageMetrics::to_json() const {
  nlohmann::json j{{"name", name}, {"l1", l1}, {"psnr", psnr}, {"ssim", ssim}, {"ms_ssim", ms_ssim}};
  j["lpips"] = perceptual ? nlohmann::json(*perceptual) : nlohmann::json("n/a");
  return j;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["count"] = images.size();
  j["mean"] = mean.to_json();
  j["images"] = nlohmann::json::array();
  for (const auto& m : images) j["images"].push_back(m.to_json());
  j["perceptual_plugin"] = perceptual_name.empty() ? nlohmann::json(nullptr) : nlohmann::json(perceptual_name);
  if (!perceptual_reason.empty()) j["perceptual_reason"] = perceptual_reason;
  return j;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "name,l1,psnr,ssim,ms_ssim,lpips\n";
  auto row = [&out](const ImageMetrics& m) {
    out << m.name << ',' << m.l1 << ',' << m.psnr << ',' << m.ssim << ',' << m.ms_ssim << ',';
    if (m.perceptual)
      out << *m.perceptual;
    else
      out << "n/a";
    out << '\n';
  };
  for (const auto& m : images) row(m);
  row(mean);
  return out.str();
}

ImageMetrics compare_images(const std::string& name, const ImageBuffer& rendered, const ImageBuffer& reference,
                            const PerceptualPlugin* plugin) {
  ImageMetrics m;
  m.name = name;
  m.l1 = mean_l1(rendered, reference);
  m.psnr = psnr(rendered, reference);
  m.ssim = ssim(rendered, reference);
  m.ms_ssim = ms_ssim(rendered, reference);
  m.perceptual = perceptual_distance(rendered, reference, plugin).value;
  return m;
}

MetricsReport evaluate(const TrainedScene& trained, const std::vector<SceneSample>& eval_set, const UVAtlas& atlas,
                       const EvalOptions& options) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  MetricsReport report;
  if (options.plugin) report.perceptual_name = options.plugin->name;
  bool all_perceptual = options.plugin != nullptr;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const SceneSample& s = eval_set[i];
    const int res = s.resolution();
    const RasterBuffers raster = rasterize(s.mesh_left, s.mesh_right, s.camera, res);
    const Vec3 bg = estimate_background(s.image, raster);
    const ImageBuffer rendered = render_novel(trained, s.mesh_left, s.mesh_right, s.camera, trained.light, atlas, res, bg);
    PixelMask mask = raster.silhouette();
    if (s.gt_mask && s.gt_mask->size() == mask.size())
      for (std::size_t p = 0; p < mask.size(); ++p) mask[p] |= (*s.gt_mask)[p];
    const CropBox box = options.crop_to_hands ? hand_crop(mask, res, res, options.crop_margin) : CropBox{0, 0, res, res};
    ImageMetrics m = compare_images("image_" + std::to_string(i), crop(rendered, box), crop(s.image, box), options.plugin);
    if (options.plugin && !m.perceptual) {
      all_perceptual = false;
      report.perceptual_reason = perceptual_distance(crop(rendered, box), crop(s.image, box), options.plugin).reason;
    }
    report.images.push_back(std::move(m));
  }
  if (!options.plugin) report.perceptual_reason = "no perceptual plugin configured";
  ImageMetrics& mean = report.mean;
  mean.name = "mean";
  Real perceptual = 0;
  for (const auto& m : report.images) {
    mean.l1 += m.l1;
    mean.psnr += m.psnr;
    mean.ssim += m.ssim;
    mean.ms_ssim += m.ms_ssim;
    if (m.perceptual) perceptual += *m.perceptual;
  }
  const auto n = static_cast<Real>(report.images.size());
  mean.l1 /= n;
  mean.psnr /= n;
  mean.ssim /= n;
  mean.ms_ssim /= n;
  if (all_perceptual) mean.perceptual = perceptual / n;
  return report;
}

}  // namespace handtex

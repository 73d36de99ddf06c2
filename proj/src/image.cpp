#include "handtex/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace handtex {

bool is_image(const Tensor& t) { return t.rank() == 3 && t.dim(0) == 3; }

ImageBuffer read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  ImageBuffer out = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const ImageBuffer& image) {
  if (!is_image(image)) throw std::invalid_argument("write_png: expected [3,H,W] image");
  const int h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const Real v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

ImageBuffer resize_bilinear(const ImageBuffer& image, int height, int width) {
  if (!is_image(image)) throw std::invalid_argument("resize_bilinear: expected [3,H,W] image");
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
  const int h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  ImageBuffer out = make_image(height, width);

  if (h % height == 0 && w % width == 0) {
    const int fy = h / height, fx = w / width;
    const Real norm = 1.0 / (fy * fx);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          Real s = 0;
          for (int dy = 0; dy < fy; ++dy)
            for (int dx = 0; dx < fx; ++dx) s += image.at(c, y * fy + dy, x * fx + dx);
          out.at(c, y, x) = s * norm;
        }
    return out;
  }

  const Real sy = static_cast<Real>(h) / height, sx = static_cast<Real>(w) / width;
  for (int y = 0; y < height; ++y) {
    const Real fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<Real>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const Real ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const Real fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<Real>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const Real tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const Real top = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
        const Real bot = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

ImageBuffer clamp01(ImageBuffer image) {
  for (auto& v : image.values()) v = std::clamp(v, 0.0, 1.0);
  return image;
}

}  // namespace handtex

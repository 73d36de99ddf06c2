#pragma once

#include <filesystem>

#include "handtex/tensor.hpp"

namespace handtex {

/// RGB image as a [3, H, W] tensor with values in [0, 1].
using ImageBuffer = Tensor;

inline ImageBuffer make_image(int height, int width, Real fill = 0.0) { return Tensor({3, height, width}, fill); }
inline int image_height(const ImageBuffer& img) { return img.dim(1); }
inline int image_width(const ImageBuffer& img) { return img.dim(2); }
bool is_image(const Tensor& t);

/// 8-bit PNG I/O. Grayscale and RGBA inputs are converted to RGB; 16-bit
/// inputs are reduced to 8 bits.
ImageBuffer read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageBuffer& image);

/// Bilinear resampling with half-pixel centers; downscaling by an integer
/// factor averages the covered source pixels.
ImageBuffer resize_bilinear(const ImageBuffer& image, int height, int width);

ImageBuffer clamp01(ImageBuffer image);

}  // namespace handtex

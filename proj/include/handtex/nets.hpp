#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "handtex/autograd.hpp"
#include "handtex/renderer.hpp"
#include "handtex/texture_pca.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

/// Layer widths and resolutions of the four networks.
struct ArchConfig {
  int image_resolution = 256;  // must be divisible by 16
  int uv_resolution = 256;     // must be divisible by 8
  int pca_components = 0;      // K; the coefficient head emits 2K values
  std::array<int, 4> albedo_widths{64, 128, 256, 512};
  std::array<int, 4> light_widths{32, 64, 128, 256};
  std::array<int, 4> coeff_widths{64, 128, 256, 512};
  std::array<int, 4> btr_widths{16, 64, 128, 256};
  bool shared_decoder = true;
  bool bidirectional = true;
  Real leaky_slope = 0.2;
  /// "none" or "instance"; applied after every hidden convolution.
  std::string normalization = "none";

  /// Every width multiplied by `factor` (rounded, at least 1).
  ArchConfig scaled(double factor) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

/// All learnable tensors keyed by "<net>.<layer>.<weight|bias>", with nets
/// "albedo", "light", "coeff" and "btr".
struct NetworkParams {
  ArchConfig arch;
  std::map<std::string, ad::Var> tensors;

  const ad::Var& at(const std::string& name) const;
  /// Names belonging to one network (prefix match on "<net>.").
  std::vector<std::string> names_of(const std::string& net) const;
  std::size_t num_values() const;
  bool all_finite() const;
  NetworkParams clone() const;
};

/// He-uniform weights (bound sqrt(6 / fan_in)) from a seeded generator; all
/// biases start at zero. Second convolutions of residual blocks use 0.1x the
/// bound.
NetworkParams init_params(uint64_t seed, const ArchConfig& arch);

/// U-Net albedo estimate of the same size as `image`, values in (0, 1).
ad::Var albedo_forward(const NetworkParams& params, const ad::Var& image);

struct LightOutput {
  ad::Var light;          // 12 values in LightParams layout
  bool degenerate_direction = false;
};

/// Colors mapped to [0.2, 1] through 0.2 + 0.8 * (tanh + 1) / 2; the raw
/// direction is normalized, or replaced by (0, 0, -1) when it vanishes.
LightOutput light_forward(const NetworkParams& params, const ad::Var& image);
/// Same mapping applied to a raw 12-value head output.
LightOutput light_from_head(const ad::Var& head_tanh);

struct CoeffOutput {
  ad::Var left, right;  // K each, |alpha_k| <= 3 sigma_k
};

/// PCA coefficients of both hands from the image.
CoeffOutput html_encode(const NetworkParams& params, const ad::Var& image, const PCATextureModel& pca);
/// Scales a 2K tanh output by 3 sigma and splits it into left/right halves.
CoeffOutput coeffs_from_head(const ad::Var& head_tanh, const PCATextureModel& pca);

struct BTROutput {
  ad::Var left, right;  // 3P each, values in (0, 1)
};

/// Bi-directional texture reconstructor on the UV layout of both hands.
BTROutput btr_forward(const NetworkParams& params, const ad::Var& t_left, const ad::Var& t_right,
                      const UVAtlas& atlas);

/// Differentiable scatter/gather between texture vectors and [3, res, res]
/// UV images (invalid texels are zero and receive no gradient).
ad::Var vector_to_uv_image(const UVAtlas& atlas, const ad::Var& t);
ad::Var uv_image_to_vector(const UVAtlas& atlas, const ad::Var& img);

/// Named-array container holding every tensor plus the architecture JSON.
void save_params(const std::filesystem::path& path, const NetworkParams& params);
NetworkParams load_params(const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace handtex

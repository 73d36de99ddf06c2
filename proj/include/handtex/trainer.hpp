#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "handtex/losses.hpp"
#include "handtex/nets.hpp"
#include "handtex/renderer.hpp"
#include "handtex/scene_io.hpp"
#include "handtex/texture_pca.hpp"

namespace handtex {

struct TrainConfig {
  int epochs = 700;
  Real learning_rate = 1e-3;
  int decay_every = 200;
  Real decay_factor = 0.5;
  uint64_t seed = 0;
  int uv_resolution = 256;
  int image_resolution = 256;
  LossWeights weights;
  bool shared_decoder = true;
  bool bidirectional = true;
  Real shininess = 16.0;
  /// Multiplies every network width (1 = full size).
  double width_scale = 1.0;
  /// Network normalization layers: "none" or "instance".
  std::string normalization = "none";
  /// Blocks gradients of the albedo-consistency term into the light network.
  bool stop_alb_light_grad = false;
  /// Adds the scene's ground-truth hand mask (when present) to the loss mask.
  bool use_gt_mask = true;
  Real adam_beta1 = 0.9;
  Real adam_beta2 = 0.999;
  Real adam_eps = 1e-8;

  /// Step size of a 1-based epoch: lr * factor^floor((epoch - 1) / decay_every).
  Real lr_at(int epoch) const;
  ArchConfig arch(int pca_components) const;
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Geometry-dependent data of one scene, computed once.
struct SceneContext {
  std::shared_ptr<const RasterBuffers> raster;
  std::shared_ptr<const ShadingPlan> plan;
  ImageBuffer background;  // constant color estimated from uncovered pixels
  Vec3 background_color;
  PixelMask loss_mask;
};

/// Median of the input pixels not covered by either hand (per channel);
/// mid-gray when the hands cover the whole frame.
Vec3 estimate_background(const ImageBuffer& image, const RasterBuffers& raster);

SceneContext prepare_scene(const SceneSample& scene, const UVAtlas& atlas, bool use_gt_mask = true,
                           const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

/// Every intermediate of one forward pass.
struct PipelineState {
  ad::Var image;
  ad::Var light;
  bool degenerate_light = false;
  ad::Var albedo;
  ad::Var alpha_left, alpha_right;
  ad::Var coarse_left, coarse_right;
  ad::Var render_coarse;
  UnwrapVars unwrapped;
  ad::Var render_albedo;
  ad::Var synth_left, synth_right;
  ad::Var refined_left, refined_right;
  ad::Var render_final;
  std::vector<ad::Var> consistency_renders;
  std::vector<ad::Var> consistency_albedo;
};

/// coarse * (1 - v) + u, per slot.
ad::Var synthesize_texture(const ad::Var& coarse, const ad::Var& unwrapped, const VisibilityMask& visible);

/// Runs the full pipeline on the scene image. Consistency renders are
/// skipped when `with_consistency` is false.
PipelineState forward_pipeline(const SceneContext& ctx, const ImageBuffer& image, const NetworkParams& params,
                               const PCATextureModel& pca, const UVAtlas& atlas, const TrainConfig& config,
                               bool with_consistency = true);

struct LossBreakdown {
  LossTerms terms;
  TotalLoss total;
};
LossBreakdown compute_losses(const PipelineState& state, const SceneContext& ctx, const UVAtlas& atlas,
                             const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  Real learning_rate = 0;
  LossReport loss;
  nlohmann::json to_json() const;
};

struct TrainedScene {
  TrainConfig config;
  NetworkParams params;
  TextureVector texture_left, texture_right;
  LightParams light;
  Vec3 background_color = Vec3::Zero();
  ImageBuffer final_render;
  std::vector<EpochLog> log;
  uint64_t topology_left = 0, topology_right = 0;
  bool aborted = false;
  std::string diagnostic;
};

/// Hash of the face index lists only (vertex positions excluded).
uint64_t topology_hash(const HandMesh& mesh);

/// Adam with the step schedule of TrainConfig.
class AdamOptimizer {
 public:
  AdamOptimizer(const NetworkParams& params, Real beta1, Real beta2, Real eps);
  void step(NetworkParams& params, Real lr);
  int steps() const { return t_; }

 private:
  std::map<std::string, Tensor> m_, v_;
  Real beta1_, beta2_, eps_;
  int t_ = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Per-scene optimization of all four networks. On a non-finite loss the run
/// stops, keeps the last parameters that produced a finite loss and sets
/// `aborted` with a diagnostic.
TrainedScene train_scene(const SceneSample& scene, const TrainConfig& config, const PCATextureModel& pca,
                         const UVAtlas& atlas, const EpochCallback& on_epoch = {},
                         const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

/// Frozen textures under a new pose, view or light. Meshes must share the
/// trained topology.
ImageBuffer render_novel(const TrainedScene& trained, const HandMesh& mesh_left, const HandMesh& mesh_right,
                         const Camera& camera, const LightParams& light, const UVAtlas& atlas, int resolution,
                         const Vec3& background);

/// Checkpoint directory: config.json, params.npz, textures.npz,
/// texture_{left,right}.png, light.json, final_render.png, log.jsonl.
void save_trained(const std::filesystem::path& dir, const TrainedScene& trained, const UVAtlas& atlas);
TrainedScene load_trained(const std::filesystem::path& dir);

}  // namespace handtex

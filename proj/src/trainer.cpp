#include "handtex/trainer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "handtex/npz.hpp"

namespace handtex {

namespace fs = std::filesystem;
using ad::Var;

// ---------------------------------------------------------------------------
// TrainConfig

Real TrainConfig::lr_at(int epoch) const {
  if (epoch < 1) throw std::invalid_argument("epochs are numbered from 1");
  return learning_rate * std::pow(decay_factor, (epoch - 1) / decay_every);
}

ArchConfig TrainConfig::arch(int pca_components) const {
  ArchConfig a = ArchConfig{}.scaled(width_scale);
  a.image_resolution = image_resolution;
  a.uv_resolution = uv_resolution;
  a.pca_components = pca_components;
  a.shared_decoder = shared_decoder;
  a.bidirectional = bidirectional;
  a.normalization = normalization;
  return a;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (decay_every < 1) throw std::invalid_argument("decay_every must be at least 1");
  if (!(decay_factor > 0 && decay_factor <= 1)) throw std::invalid_argument("decay_factor must be in (0, 1]");
  if (!(width_scale > 0)) throw std::invalid_argument("width_scale must be positive");
  if (!(shininess > 0)) throw std::invalid_argument("shininess must be positive");
  if (normalization != "none" && normalization != "instance")
    throw std::invalid_argument("normalization must be \"none\" or \"instance\"");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"decay_every", decay_every},
          {"decay_factor", decay_factor},
          {"seed", seed},
          {"uv_resolution", uv_resolution},
          {"image_resolution", image_resolution},
          {"weights", weights.to_json()},
          {"shared_decoder", shared_decoder},
          {"bidirectional", bidirectional},
          {"shininess", shininess},
          {"width_scale", width_scale},
          {"normalization", normalization},
          {"stop_alb_light_grad", stop_alb_light_grad},
          {"use_gt_mask", use_gt_mask},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("unknown training config key '" + key + "'");
  }
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.seed = j.value("seed", c.seed);
  c.uv_resolution = j.value("uv_resolution", c.uv_resolution);
  c.image_resolution = j.value("image_resolution", c.image_resolution);
  if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
  c.shared_decoder = j.value("shared_decoder", c.shared_decoder);
  c.bidirectional = j.value("bidirectional", c.bidirectional);
  c.shininess = j.value("shininess", c.shininess);
  c.width_scale = j.value("width_scale", c.width_scale);
  c.normalization = j.value("normalization", c.normalization);
  c.stop_alb_light_grad = j.value("stop_alb_light_grad", c.stop_alb_light_grad);
  c.use_gt_mask = j.value("use_gt_mask", c.use_gt_mask);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Scene preparation

Vec3 estimate_background(const ImageBuffer& image, const RasterBuffers& raster) {
  const std::size_t n = raster.num_pixels();
  if (image.size() != 3 * n) throw std::invalid_argument("estimate_background: image does not match raster");
  Vec3 out = Vec3::Constant(0.5);
  std::vector<Real> values;
  values.reserve(n);
  for (int c = 0; c < 3; ++c) {
    values.clear();
    for (std::size_t p = 0; p < n; ++p)
      if (!raster.covered(p)) values.push_back(image[c * n + p]);
    if (values.empty()) return Vec3::Constant(0.5);
    auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    out[c] = *mid;
  }
  return out;
}

SceneContext prepare_scene(const SceneSample& scene, const UVAtlas& atlas, bool use_gt_mask,
                           const std::optional<fs::path>& cache_dir) {
  const int res = scene.resolution();
  SceneContext ctx;
  auto raster = std::make_shared<RasterBuffers>(rasterize_cached(scene.mesh_left, scene.mesh_right, scene.camera, res, cache_dir));
  ctx.raster = raster;
  ctx.plan = std::make_shared<ShadingPlan>(*raster, atlas);
  ctx.background_color = estimate_background(scene.image, *raster);
  ctx.background = make_image(res, res);
  const std::size_t n = raster->num_pixels();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p) ctx.background[c * n + p] = ctx.background_color[c];
  ctx.loss_mask = raster->silhouette();
  if (use_gt_mask && scene.gt_mask && scene.gt_mask->size() == n) {
    for (std::size_t p = 0; p < n; ++p) ctx.loss_mask[p] |= (*scene.gt_mask)[p];
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Forward pipeline

Var synthesize_texture(const Var& coarse, const Var& unwrapped, const VisibilityMask& visible) {
  if (coarse.size() != 3 * visible.size() || unwrapped.size() != coarse.size()) {
    throw std::invalid_argument("synthesize_texture: lengths must be 3P, 3P and P");
  }
  Tensor hidden(coarse.shape());
  for (std::size_t k = 0; k < visible.size(); ++k)
    for (int c = 0; c < 3; ++c) hidden[3 * k + c] = 1 - visible[k];
  return ad::add(ad::mul_const(coarse, hidden), unwrapped);
}

PipelineState forward_pipeline(const SceneContext& ctx, const ImageBuffer& image, const NetworkParams& params,
                               const PCATextureModel& pca, const UVAtlas& atlas, const TrainConfig& config,
                               bool with_consistency) {
  if (pca.vector_length() != atlas.vector_length()) {
    throw std::invalid_argument("PCA model length " + std::to_string(pca.vector_length()) +
                                " does not match the atlas (3P = " + std::to_string(atlas.vector_length()) + ")");
  }
  const ShadingConfig shading{config.shininess};
  const ShadingPlan& plan = *ctx.plan;
  PipelineState s;
  s.image = Var(image);

  LightOutput lo = light_forward(params, s.image);
  s.light = lo.light;
  s.degenerate_light = lo.degenerate_direction;
  s.albedo = albedo_forward(params, s.image);
  const CoeffOutput coeffs = html_encode(params, s.image, pca);
  s.alpha_left = coeffs.left;
  s.alpha_right = coeffs.right;
  s.coarse_left = reconstruct(pca, s.alpha_left);
  s.coarse_right = reconstruct(pca, s.alpha_right);
  s.render_coarse = shade_phong(plan, s.coarse_left, s.coarse_right, s.light, ctx.background, shading);

  s.unwrapped = unwrap_visible(s.albedo, *ctx.raster, atlas);
  s.render_albedo = shade_phong(plan, s.unwrapped.u_left, s.unwrapped.u_right, s.light, ctx.background, shading);
  s.synth_left = synthesize_texture(s.coarse_left, s.unwrapped.u_left, s.unwrapped.v_left);
  s.synth_right = synthesize_texture(s.coarse_right, s.unwrapped.u_right, s.unwrapped.v_right);

  const BTROutput refined = btr_forward(params, s.synth_left, s.synth_right, atlas);
  s.refined_left = refined.left;
  s.refined_right = refined.right;
  s.render_final = shade_phong(plan, s.refined_left, s.refined_right, s.light, ctx.background, shading);

  if (with_consistency) {
    const Var light = config.stop_alb_light_grad ? s.light.detach() : s.light;
    const auto lights = make_consistency_lights(light);
    for (std::size_t i = 0; i < lights.size(); ++i) {
      const Var render = (i == 0 && !config.stop_alb_light_grad)
                             ? s.render_coarse
                             : shade_phong(plan, s.coarse_left, s.coarse_right, lights[i], ctx.background, shading);
      s.consistency_renders.push_back(render);
      s.consistency_albedo.push_back(albedo_forward(params, render));
    }
  }
  return s;
}

LossBreakdown compute_losses(const PipelineState& s, const SceneContext& ctx, const UVAtlas& atlas,
                             const TrainConfig& config) {
  const LossWeights& w = config.weights;
  LossBreakdown out;
  out.terms.rec = loss_rec(s.image, s.render_final, s.render_coarse, s.render_albedo, ctx.loss_mask, w);
  out.terms.nv = loss_nv(s.coarse_left, s.refined_left, s.unwrapped.v_left, s.coarse_right, s.refined_right,
                         s.unwrapped.v_right);
  out.terms.alb = s.consistency_albedo.size() >= 2 ? loss_alb(s.consistency_albedo, ctx.loss_mask) : ad::scalar(0);
  out.terms.sym = loss_sym(s.refined_left, s.refined_right, atlas);
  out.total = total_loss(out.terms, w);
  return out;
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = loss.to_json();
  j["epoch"] = epoch;
  j["lr"] = learning_rate;
  return j;
}

uint64_t topology_hash(const HandMesh& mesh) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  mix(mesh.faces.size());
  for (const auto& f : mesh.faces)
    for (int v : f) mix(static_cast<uint64_t>(v));
  return h;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(const NetworkParams& params, Real beta1, Real beta2, Real eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, v] : params.tensors) {
    m_.emplace(name, Tensor::zeros_like(v.value()));
    v_.emplace(name, Tensor::zeros_like(v.value()));
  }
}

void AdamOptimizer::step(NetworkParams& params, Real lr) {
  ++t_;
  const Real c1 = 1 - std::pow(beta1_, t_);
  const Real c2 = 1 - std::pow(beta2_, t_);
  for (auto& [name, var] : params.tensors) {
    Tensor& value = var.mutable_value();
    const auto n = static_cast<Eigen::Index>(value.size());
    Eigen::Map<Eigen::ArrayXd> p(value.data(), n);
    Eigen::Map<Eigen::ArrayXd> m(m_.at(name).data(), n);
    Eigen::Map<Eigen::ArrayXd> v(v_.at(name).data(), n);
    if (var.has_grad()) {
      Eigen::Map<const Eigen::ArrayXd> g(var.grad().data(), n);
      m = beta1_ * m + (1 - beta1_) * g;
      v = beta2_ * v + (1 - beta2_) * g.square();
    } else {
      m *= beta1_;
      v *= beta2_;
    }
    p -= lr * (m / c1) / ((v / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Training

TrainedScene train_scene(const SceneSample& scene, const TrainConfig& config, const PCATextureModel& pca,
                         const UVAtlas& atlas, const EpochCallback& on_epoch, const std::optional<fs::path>& cache_dir) {
  config.validate();
  if (scene.resolution() != config.image_resolution || image_width(scene.image) != config.image_resolution) {
    throw std::invalid_argument("scene image is " + std::to_string(scene.resolution()) + " px but the config expects " +
                                std::to_string(config.image_resolution));
  }
  if (atlas.resolution != config.uv_resolution) {
    throw std::invalid_argument("atlas resolution " + std::to_string(atlas.resolution) +
                                " does not match the configured UV resolution " + std::to_string(config.uv_resolution));
  }
  if (pca.vector_length() != atlas.vector_length()) {
    throw std::invalid_argument("PCA model length does not match the atlas");
  }
  const SceneContext ctx = prepare_scene(scene, atlas, config.use_gt_mask, cache_dir);

  TrainedScene out;
  out.config = config;
  out.params = init_params(config.seed, config.arch(pca.num_components()));
  out.background_color = ctx.background_color;
  out.topology_left = topology_hash(scene.mesh_left);
  out.topology_right = topology_hash(scene.mesh_right);

  AdamOptimizer adam(out.params, config.adam_beta1, config.adam_beta2, config.adam_eps);
  const bool with_consistency = config.weights.alb > 0;
  NetworkParams last_good;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (auto& [_, v] : out.params.tensors) v.zero_grad();
    PipelineState state = forward_pipeline(ctx, scene.image, out.params, pca, atlas, config, with_consistency);
    LossBreakdown losses;
    try {
      losses = compute_losses(state, ctx, atlas, config);
      if (!std::isfinite(losses.total.report.total)) throw std::runtime_error("non-finite total loss");
    } catch (const std::runtime_error& e) {
      out.aborted = true;
      out.diagnostic = "epoch " + std::to_string(epoch) + ": " + e.what() + "; keeping parameters from epoch " +
                       std::to_string(epoch - 1);
      if (epoch > 1) out.params = std::move(last_good);
      break;
    }
    // Outputs of the parameters that produced this finite loss.
    out.texture_left = state.refined_left.value();
    out.texture_right = state.refined_right.value();
    out.light = LightParams::from_tensor(state.light.value());
    out.final_render = state.render_final.value();
    last_good = out.params.clone();

    ad::backward(losses.total.total);
    state = PipelineState{};
    const Real lr = config.lr_at(epoch);
    adam.step(out.params, lr);

    EpochLog entry{epoch, lr, losses.total.report};
    out.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return out;
}

ImageBuffer render_novel(const TrainedScene& trained, const HandMesh& mesh_left, const HandMesh& mesh_right,
                         const Camera& camera, const LightParams& light, const UVAtlas& atlas, int resolution,
                         const Vec3& background) {
  if (topology_hash(mesh_left) != trained.topology_left || topology_hash(mesh_right) != trained.topology_right) {
    throw std::invalid_argument("mesh topology does not match the trained scene");
  }
  const RasterBuffers raster = rasterize(mesh_left, mesh_right, camera, resolution);
  const ShadingPlan plan(raster, atlas);
  ImageBuffer bg = make_image(resolution, resolution);
  const std::size_t n = raster.num_pixels();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < n; ++p) bg[c * n + p] = background[c];
  return shade_phong(plan, trained.texture_left, trained.texture_right, light, bg,
                     ShadingConfig{trained.config.shininess});
}

// ---------------------------------------------------------------------------
// Checkpoint directory

void save_trained(const fs::path& dir, const TrainedScene& t, const UVAtlas& atlas) {
  fs::create_directories(dir);
  {
    nlohmann::json j;
    j["train"] = t.config.to_json();
    j["arch"] = t.params.arch.to_json();
    j["aborted"] = t.aborted;
    j["diagnostic"] = t.diagnostic;
    j["epochs_completed"] = t.log.size();
    std::ofstream out(dir / "config.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    out << j.dump(2) << '\n';
  }
  save_params(dir / "params.npz", t.params);
  {
    npz::Archive ar;
    ar["left"] = npz::Array::from_tensor(t.texture_left);
    ar["right"] = npz::Array::from_tensor(t.texture_right);
    ar["light"] = npz::Array::from_tensor(t.light.to_tensor());
    ar["background"] = npz::Array::from_doubles({t.background_color.x(), t.background_color.y(), t.background_color.z()}, {3});
    ar["topology"] = npz::Array::from_ints({static_cast<int64_t>(t.topology_left), static_cast<int64_t>(t.topology_right)}, {2});
    ar["uv_resolution"] = npz::Array::from_ints({atlas.resolution}, {1});
    if (!t.final_render.empty()) ar["final_render"] = npz::Array::from_tensor(t.final_render);
    npz::save(dir / "textures.npz", ar);
  }
  write_png(dir / "texture_left.png", vector_to_uv_image(atlas, t.texture_left));
  write_png(dir / "texture_right.png", vector_to_uv_image(atlas, t.texture_right));
  if (!t.final_render.empty()) write_png(dir / "final_render.png", t.final_render);
  write_light_json(dir / "light.json", t.light);
  std::ofstream log(dir / "log.jsonl");
  if (!log) throw std::runtime_error("cannot write " + (dir / "log.jsonl").string());
  for (const auto& e : t.log) log << e.to_json().dump() << '\n';
}

TrainedScene load_trained(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + dir.string());
  TrainedScene t;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw std::runtime_error("checkpoint is missing config.json");
    nlohmann::json j;
    in >> j;
    t.config = TrainConfig::from_json(j.at("train"));
    t.aborted = j.value("aborted", false);
    t.diagnostic = j.value("diagnostic", std::string());
  }
  t.params = load_params(dir / "params.npz");
  const npz::Archive ar = npz::load(dir / "textures.npz");
  const Tensor left = npz::get(ar, "left").to_tensor();
  const Tensor right = npz::get(ar, "right").to_tensor();
  t.texture_left = left.reshaped({static_cast<int>(left.size())});
  t.texture_right = right.reshaped({static_cast<int>(right.size())});
  t.light = LightParams::from_tensor(npz::get(ar, "light").to_tensor().reshaped({12}));
  const auto bg = npz::get(ar, "background").as_doubles();
  t.background_color = Vec3(bg.at(0), bg.at(1), bg.at(2));
  const auto topo = npz::get(ar, "topology").as_ints();
  t.topology_left = static_cast<uint64_t>(topo.at(0));
  t.topology_right = static_cast<uint64_t>(topo.at(1));
  if (auto it = ar.find("final_render"); it != ar.end()) t.final_render = it->second.to_tensor();
  if (std::ifstream log(dir / "log.jsonl"); log) {
    std::string line;
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      EpochLog e;
      e.epoch = j.at("epoch");
      e.learning_rate = j.at("lr");
      e.loss = {j.at("rec"), j.at("nv"), j.at("alb"), j.at("sym"), j.at("total")};
      t.log.push_back(e);
    }
  }
  return t;
}

}  // namespace handtex

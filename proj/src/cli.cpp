#include "handtex/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "handtex/hand_template.hpp"
#include "handtex/image.hpp"
#include "handtex/metrics.hpp"
#include "handtex/npz.hpp"
#include "handtex/renderer.hpp"
#include "handtex/scene_io.hpp"
#include "handtex/texture_pca.hpp"
#include "handtex/trainer.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

namespace {

namespace fs = std::filesystem;

/// Bad arguments or inputs detected before any work starts (exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void require_scene_dir(const fs::path& p) {
  require_dir(p, "scene directory");
  for (const char* name : {"image.png", "left.obj", "right.obj", "camera.json"}) {
    if (!fs::is_regular_file(p / name)) throw UsageError("scene " + p.string() + " is missing " + name);
  }
}

std::optional<fs::path> cache_dir_from(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv(kCacheEnvVar); env && *env) return fs::path(env);
  return std::nullopt;
}

Vec3 parse_color(const std::string& text) {
  Vec3 c;
  char sep1 = 0, sep2 = 0;
  std::istringstream in(text);
  if (!(in >> c.x() >> sep1 >> c.y() >> sep2 >> c.z()) || sep1 != ',' || sep2 != ',') {
    throw UsageError("expected a color as r,g,b: " + text);
  }
  return c;
}

std::string percent(Real fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * fraction << '%';
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string scene_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d", prefix, i);
  return buf;
}

uint64_t scene_seed(uint64_t seed, int index) { return seed * 1000003ULL + static_cast<uint64_t>(index); }

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  uint64_t seed = 0;
  int scenes = 1;
  std::string out;
  int corpus_size = 16;
  int image_res = kDefaultImageResolution;
  int uv_res = 256;
  int eval_poses = 2;
  int eval_views = 2;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.scenes < 1) throw UsageError("--scenes must be at least 1");
  if (a.corpus_size < 2) throw UsageError("--corpus-size must be at least 2");
  if (a.image_res < 8) throw UsageError("--image-res must be at least 8");
  if (a.uv_res < 16) throw UsageError("--uv-res must be at least 16");
  if (a.eval_poses < 0 || a.eval_views < 0) throw UsageError("--eval-poses and --eval-views must be nonnegative");

  const fs::path root(a.out);
  fs::create_directories(root);
  const UVAtlas atlas = build_atlas(HandTemplate::shipped().rest_mesh(), a.uv_res);
  save_atlas(root / "atlas.npz", atlas);

  const auto corpus = generate_texture_corpus(a.seed, a.corpus_size, atlas);
  const fs::path corpus_dir = root / "corpus";
  fs::create_directories(corpus_dir);
  std::vector<double> flat;
  flat.reserve(corpus.size() * atlas.vector_length());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    flat.insert(flat.end(), corpus[i].data(), corpus[i].data() + corpus[i].size());
    write_png(corpus_dir / (scene_name("texture", static_cast<int>(i)) + ".png"), vector_to_uv_image(atlas, corpus[i]));
  }
  npz::Archive ar;
  ar["textures"] = npz::Array::from_doubles(
      std::move(flat), {static_cast<int64_t>(corpus.size()), static_cast<int64_t>(atlas.vector_length())});
  const std::string& version = atlas.template_version;
  ar["template_version"] = npz::Array::from_bytes({version.begin(), version.end()}, {static_cast<int64_t>(version.size())});
  npz::save(corpus_dir / "corpus.npz", ar);

  for (int i = 0; i < a.scenes; ++i) {
    const uint64_t s = scene_seed(a.seed, i);
    const fs::path dir = root / "scenes" / scene_name("scene", i);
    save_scene(dir, generate_synthetic_scene(s, atlas, 0, 0, a.image_res), &atlas, synthetic_pose(s, 0));
    for (int p = 1; p <= a.eval_poses; ++p)
      for (int v = 0; v < a.eval_views; ++v) {
        const fs::path eval_dir = dir / "eval" / ("pose" + std::to_string(p) + "_view" + std::to_string(v));
        save_scene(eval_dir, generate_synthetic_scene(s, atlas, p, v, a.image_res), &atlas, synthetic_pose(s, p));
      }
  }

  nlohmann::json manifest = {{"seed", a.seed},           {"scenes", a.scenes},         {"corpus_size", a.corpus_size},
                             {"image_resolution", a.image_res}, {"uv_resolution", a.uv_res}, {"eval_poses", a.eval_poses},
                             {"eval_views", a.eval_views},  {"template_version", version}};
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << a.scenes << " scene(s), " << a.corpus_size << " corpus textures and atlas (P = "
      << atlas.num_slots() << ") to " << root.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit-pca

struct FitPcaArgs {
  std::string corpus;
  int components = 0;
  std::string out;
  std::string atlas;
};

struct Corpus {
  std::vector<TextureVector> textures;
  std::string template_version = "custom";
};

Corpus load_corpus(const FitPcaArgs& a) {
  const fs::path p(a.corpus);
  fs::path archive;
  if (fs::is_regular_file(p)) archive = p;
  else if (fs::is_regular_file(p / "corpus.npz")) archive = p / "corpus.npz";

  Corpus c;
  if (!archive.empty()) {
    const npz::Archive ar = npz::load(archive);
    const npz::Array& t = npz::get(ar, "textures");
    if (t.shape.size() != 2) throw std::runtime_error("corpus textures must be a 2-D array");
    const auto values = t.as_doubles();
    const auto n = static_cast<std::size_t>(t.shape[0]), len = static_cast<std::size_t>(t.shape[1]);
    for (std::size_t i = 0; i < n; ++i) {
      c.textures.emplace_back(std::vector<int>{static_cast<int>(len)},
                              std::vector<Real>(values.begin() + i * len, values.begin() + (i + 1) * len));
    }
    if (auto it = ar.find("template_version"); it != ar.end()) {
      c.template_version.assign(it->second.u8.begin(), it->second.u8.end());
    }
    return c;
  }

  // Loose UV-layout PNGs need the atlas to pick out the valid texels.
  std::vector<fs::path> pngs;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".png") pngs.push_back(e.path());
  std::sort(pngs.begin(), pngs.end());
  if (a.atlas.empty()) throw UsageError("corpus has no corpus.npz; pass --atlas to read its PNG textures");
  const UVAtlas atlas = load_atlas(a.atlas);
  for (const auto& f : pngs) c.textures.push_back(uv_image_to_vector(atlas, read_png(f)));
  c.template_version = atlas.template_version;
  return c;
}

int cmd_fit_pca(const FitPcaArgs& a, std::ostream& out) {
  if (!fs::exists(a.corpus)) throw UsageError("corpus not found: " + a.corpus);
  if (!a.atlas.empty()) require_file(a.atlas, "atlas");
  if (a.components < 1) throw UsageError("--components must be at least 1");
  const Corpus corpus = load_corpus(a);
  const int n = static_cast<int>(corpus.textures.size());
  if (n < 2) throw UsageError("corpus needs at least 2 textures, found " + std::to_string(n));
  if (a.components > n - 1) {
    throw UsageError("K exceeds corpus rank: K = " + std::to_string(a.components) + " but n - 1 = " + std::to_string(n - 1));
  }
  const PCATextureModel model = fit_pca(corpus.textures, a.components, corpus.template_version);
  const fs::path dst(a.out);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  save_pca(dst, model);
  out << "fitted " << model.num_components() << " component(s) from " << n << " textures to " << dst.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string scene, pca, atlas, out, config_file, cache_dir;
  int log_every = 50;
  TrainConfig flags;  // values bound to the numeric flags; applied only when given
  bool no_shared_decoder = false;
  bool uni_directional = false;
  bool no_gt_mask = false;
  bool stop_alb_light_grad = false;
};

/// flags > config file > defaults.
TrainConfig resolve_train_config(const TrainArgs& a, const CLI::App& cmd) {
  TrainConfig c;
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    nlohmann::json j;
    try {
      in >> j;
      c = TrainConfig::from_json(j);
    } catch (const std::exception& e) {
      throw UsageError("bad config file " + a.config_file + ": " + e.what());
    }
  }
  const auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  const TrainConfig& f = a.flags;
  if (given("--epochs")) c.epochs = f.epochs;
  if (given("--lr")) c.learning_rate = f.learning_rate;
  if (given("--decay-every")) c.decay_every = f.decay_every;
  if (given("--decay-factor")) c.decay_factor = f.decay_factor;
  if (given("--seed")) c.seed = f.seed;
  if (given("--uv-res")) c.uv_resolution = f.uv_resolution;
  if (given("--image-res")) c.image_resolution = f.image_resolution;
  if (given("--w-rec")) c.weights.rec = f.weights.rec;
  if (given("--w-rec-coarse")) c.weights.rec_coarse = f.weights.rec_coarse;
  if (given("--w-rec-albedo")) c.weights.rec_albedo = f.weights.rec_albedo;
  if (given("--w-nv")) c.weights.nv = f.weights.nv;
  if (given("--w-alb")) c.weights.alb = f.weights.alb;
  if (given("--w-sym")) c.weights.sym = f.weights.sym;
  if (given("--shininess")) c.shininess = f.shininess;
  if (given("--width-scale")) c.width_scale = f.width_scale;
  if (given("--normalization")) c.normalization = f.normalization;
  if (given("--adam-beta1")) c.adam_beta1 = f.adam_beta1;
  if (given("--adam-beta2")) c.adam_beta2 = f.adam_beta2;
  if (given("--adam-eps")) c.adam_eps = f.adam_eps;
  if (a.no_shared_decoder) c.shared_decoder = false;
  if (a.uni_directional) c.bidirectional = false;
  if (a.no_gt_mask) c.use_gt_mask = false;
  if (a.stop_alb_light_grad) c.stop_alb_light_grad = true;
  return c;
}

int cmd_train(const TrainArgs& a, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  require_scene_dir(a.scene);
  require_file(a.pca, "PCA model");
  require_file(a.atlas, "atlas");
  if (!a.config_file.empty()) require_file(a.config_file, "config file");

  TrainConfig config = resolve_train_config(a, cmd);
  const UVAtlas atlas = load_atlas(a.atlas);
  const bool uv_given = cmd.get_option("--uv-res")->count() > 0 || !a.config_file.empty();
  if (uv_given && config.uv_resolution != atlas.resolution) {
    throw UsageError("uv resolution " + std::to_string(config.uv_resolution) + " does not match the atlas (" +
                     std::to_string(atlas.resolution) + "); rebuild the atlas with gen-data --uv-res");
  }
  config.uv_resolution = atlas.resolution;
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const PCATextureModel pca = load_pca(a.pca);
  if (pca.vector_length() != atlas.vector_length()) {
    throw UsageError("PCA model length " + std::to_string(pca.vector_length()) + " does not match the atlas (" +
                     std::to_string(atlas.vector_length()) + ")");
  }
  const SceneSample scene = load_scene(a.scene, &atlas, config.image_resolution);

  const int every = a.log_every;
  const auto progress = [&](const EpochLog& e) {
    if (every > 0 && (e.epoch % every == 0 || e.epoch == 1 || e.epoch == config.epochs)) {
      out << "epoch " << e.epoch << " lr " << e.learning_rate << " total " << e.loss.total << " rec " << e.loss.rec
          << " nv " << e.loss.nv << " alb " << e.loss.alb << " sym " << e.loss.sym << "\n"
          << std::flush;
    }
  };
  const TrainedScene trained = train_scene(scene, config, pca, atlas, progress, cache_dir_from(a.cache_dir));
  save_trained(a.out, trained, atlas);
  save_atlas(fs::path(a.out) / "atlas.npz", atlas);
  if (trained.aborted) {
    err << "training stopped: " << trained.diagnostic << " (last good parameters saved to " << a.out << ")\n";
    return kExitRuntime;
  }
  out << "saved checkpoint to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string checkpoint, pose, camera, light, out, atlas, background;
  int resolution = 0;
};

UVAtlas checkpoint_atlas(const std::string& checkpoint, const std::string& override_path) {
  return load_atlas(override_path.empty() ? fs::path(checkpoint) / "atlas.npz" : fs::path(override_path));
}

void require_checkpoint(const std::string& checkpoint, const std::string& atlas) {
  require_dir(checkpoint, "checkpoint directory");
  for (const char* name : {"config.json", "params.npz", "textures.npz"}) require_file(fs::path(checkpoint) / name, name);
  if (atlas.empty()) require_file(fs::path(checkpoint) / "atlas.npz", "checkpoint atlas (or pass --atlas)");
  else require_file(atlas, "atlas");
}

int cmd_render(const RenderArgs& a, std::ostream& out) {
  require_checkpoint(a.checkpoint, a.atlas);
  require_file(a.pose, "pose");
  require_file(a.camera, "camera");
  require_file(a.light, "light");
  const std::optional<Vec3> bg = a.background.empty() ? std::nullopt : std::optional(parse_color(a.background));

  const TrainedScene trained = load_trained(a.checkpoint);
  const UVAtlas atlas = checkpoint_atlas(a.checkpoint, a.atlas);
  const ScenePose pose = read_pose_json(a.pose);
  const Camera camera = read_camera_json(a.camera);
  const LightParams light = read_light_json(a.light);
  const auto& tmpl = HandTemplate::shipped();
  const int res = a.resolution > 0 ? a.resolution : trained.config.image_resolution;
  const ImageBuffer image = render_novel(trained, tmpl.posed(pose.left, Handedness::kLeft),
                                         tmpl.posed(pose.right, Handedness::kRight), camera, light, atlas, res,
                                         bg.value_or(trained.background_color));
  const fs::path dst(a.out);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  write_png(dst, image);
  out << "wrote " << dst.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, eval_set, out, csv, atlas, perceptual = "none";
  int margin = 8;
  bool no_crop = false;
  bool json = false;
};

/// A scene directory, or a directory whose subdirectories are scenes.
std::vector<fs::path> eval_scene_dirs(const fs::path& root) {
  if (fs::is_regular_file(root / "image.png")) return {root};
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_regular_file(e.path() / "image.png")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_checkpoint(a.checkpoint, a.atlas);
  require_dir(a.eval_set, "eval set");
  const auto dirs = eval_scene_dirs(a.eval_set);
  if (dirs.empty()) throw UsageError("eval set has no scenes: " + a.eval_set);
  for (const auto& d : dirs) require_scene_dir(d);
  if (a.perceptual != "none" && a.perceptual != "identity") throw UsageError("--perceptual must be none or identity");

  const TrainedScene trained = load_trained(a.checkpoint);
  const UVAtlas atlas = checkpoint_atlas(a.checkpoint, a.atlas);
  std::vector<SceneSample> scenes;
  for (const auto& d : dirs) scenes.push_back(load_scene(d, &atlas, trained.config.image_resolution));

  const PerceptualPlugin identity = identity_plugin();
  EvalOptions options;
  options.crop_margin = a.margin;
  options.crop_to_hands = !a.no_crop;
  options.plugin = a.perceptual == "identity" ? &identity : nullptr;
  MetricsReport report = evaluate(trained, scenes, atlas, options);
  for (std::size_t i = 0; i < dirs.size(); ++i) report.images[i].name = dirs[i].filename().string();

  const std::string json = report.to_json().dump(2) + "\n";
  write_text(a.out, json);
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());
  if (a.json) {
    out << json;
  } else {
    const auto& m = report.mean;
    out << std::fixed << std::setprecision(4) << "images " << report.count() << "  psnr " << m.psnr << "  ssim "
        << m.ssim << "  ms-ssim " << m.ms_ssim << "  l1 " << m.l1 << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string scene, atlas, cache_dir;
  int image_res = kDefaultImageResolution;
  bool json = false;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  require_scene_dir(a.scene);
  require_file(a.atlas, "atlas");
  if (a.image_res < 8) throw UsageError("--image-res must be at least 8");
  const UVAtlas atlas = load_atlas(a.atlas);
  const SceneSample scene = load_scene(a.scene, &atlas, a.image_res);
  const RasterBuffers raster = rasterize_cached(scene.mesh_left, scene.mesh_right, scene.camera, a.image_res,
                                                cache_dir_from(a.cache_dir));
  const UnwrapResult u = unwrap_visible(scene.image, raster, atlas);
  const VisibilityStats s = visibility_stats(u.v_left, u.v_right, atlas);

  if (a.json) {
    const auto part = [](const PartitionRatios& r) {
      return nlohmann::json{{"visible", r.visible}, {"usable_symmetric", r.usable_symmetric}, {"invisible", r.invisible}};
    };
    out << nlohmann::json{{"left", part(s.left)}, {"right", part(s.right)}, {"slots", atlas.num_slots()}}.dump(2) << "\n";
    return kExitOk;
  }
  out << std::left << std::setw(8) << "hand" << std::right << std::setw(10) << "visible" << std::setw(14)
      << "usable-sym" << std::setw(12) << "invisible" << "\n";
  const auto row = [&](const char* name, const PartitionRatios& r) {
    out << std::left << std::setw(8) << name << std::right << std::setw(10) << percent(r.visible) << std::setw(14)
        << percent(r.usable_symmetric) << std::setw(12) << percent(r.invisible) << "\n";
  };
  row("left", s.left);
  row("right", s.right);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-hand texture reconstruction from a single image", "handtex"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic scenes, a texture corpus and the UV atlas");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--corpus-size", gen.corpus_size, "Texture corpus size")->capture_default_str();
  gen_cmd->add_option("--image-res", gen.image_res, "Image resolution")->capture_default_str();
  gen_cmd->add_option("--uv-res", gen.uv_res, "UV atlas resolution")->capture_default_str();
  gen_cmd->add_option("--eval-poses", gen.eval_poses, "Novel poses per scene")->capture_default_str();
  gen_cmd->add_option("--eval-views", gen.eval_views, "Views per novel pose")->capture_default_str();

  FitPcaArgs fit;
  auto* fit_cmd = app.add_subcommand("fit-pca", "Fit the PCA texture model to a corpus");
  fit_cmd->add_option("--corpus", fit.corpus, "Corpus directory (corpus.npz or UV PNGs) or .npz file")->required();
  fit_cmd->add_option("--components", fit.components, "Number of components K")->required();
  fit_cmd->add_option("--out", fit.out, "Output .npz")->required();
  fit_cmd->add_option("--atlas", fit.atlas, "Atlas for PNG corpora");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Optimize the networks on one scene");
  train_cmd->add_option("--scene", tr.scene, "Scene directory")->required();
  train_cmd->add_option("--pca", tr.pca, "PCA model .npz")->required();
  train_cmd->add_option("--atlas", tr.atlas, "UV atlas .npz")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  train_cmd->add_option("--config", tr.config_file, "TrainConfig JSON (flags override it)");
  train_cmd->add_option("--cache-dir", tr.cache_dir, std::string("Raster cache directory (default $") + kCacheEnvVar + ")");
  train_cmd->add_option("--log-every", tr.log_every, "Print losses every N epochs (0 = quiet)")->capture_default_str();
  train_cmd->add_option("--epochs", tr.flags.epochs);
  train_cmd->add_option("--lr", tr.flags.learning_rate);
  train_cmd->add_option("--decay-every", tr.flags.decay_every);
  train_cmd->add_option("--decay-factor", tr.flags.decay_factor);
  train_cmd->add_option("--seed", tr.flags.seed);
  train_cmd->add_option("--uv-res", tr.flags.uv_resolution, "Must match the atlas");
  train_cmd->add_option("--image-res", tr.flags.image_resolution);
  train_cmd->add_option("--w-rec", tr.flags.weights.rec);
  train_cmd->add_option("--w-rec-coarse", tr.flags.weights.rec_coarse);
  train_cmd->add_option("--w-rec-albedo", tr.flags.weights.rec_albedo);
  train_cmd->add_option("--w-nv", tr.flags.weights.nv);
  train_cmd->add_option("--w-alb", tr.flags.weights.alb);
  train_cmd->add_option("--w-sym", tr.flags.weights.sym);
  train_cmd->add_option("--shininess", tr.flags.shininess);
  train_cmd->add_option("--width-scale", tr.flags.width_scale, "Network width multiplier");
  train_cmd->add_option("--normalization", tr.flags.normalization, "Hidden-layer normalization")
      ->check(CLI::IsMember({"none", "instance"}));
  train_cmd->add_option("--adam-beta1", tr.flags.adam_beta1);
  train_cmd->add_option("--adam-beta2", tr.flags.adam_beta2);
  train_cmd->add_option("--adam-eps", tr.flags.adam_eps);
  train_cmd->add_flag("--no-shared-decoder", tr.no_shared_decoder, "Separate left/right refinement decoders");
  train_cmd->add_flag("--uni-directional", tr.uni_directional, "Drop the cross-hand decoder features");
  train_cmd->add_flag("--no-gt-mask", tr.no_gt_mask, "Ignore the scene's hand mask in the loss mask");
  train_cmd->add_flag("--stop-alb-light-grad", tr.stop_alb_light_grad);

  RenderArgs rd;
  auto* render_cmd = app.add_subcommand("render", "Render the trained textures under a new pose, view and light");
  render_cmd->add_option("--checkpoint", rd.checkpoint, "Checkpoint directory")->required();
  render_cmd->add_option("--pose", rd.pose, "pose.json")->required();
  render_cmd->add_option("--camera", rd.camera, "camera.json")->required();
  render_cmd->add_option("--light", rd.light, "light.json")->required();
  render_cmd->add_option("--out", rd.out, "Output PNG")->required();
  render_cmd->add_option("--atlas", rd.atlas, "Atlas (default: the checkpoint's)");
  render_cmd->add_option("--res", rd.resolution, "Output resolution (default: training resolution)");
  render_cmd->add_option("--background", rd.background, "Background color r,g,b (default: estimated)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on held-out poses and views");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--eval-set", ev.eval_set, "Scene directory or directory of scenes")->required();
  eval_cmd->add_option("--out", ev.out, "Metrics JSON")->required();
  eval_cmd->add_option("--csv", ev.csv, "Also write per-image CSV");
  eval_cmd->add_option("--atlas", ev.atlas, "Atlas (default: the checkpoint's)");
  eval_cmd->add_option("--margin", ev.margin, "Hand crop margin in pixels")->capture_default_str();
  eval_cmd->add_option("--perceptual", ev.perceptual, "Perceptual plugin: none or identity")->capture_default_str();
  eval_cmd->add_flag("--no-crop", ev.no_crop, "Score the full frame");
  eval_cmd->add_flag("--json", ev.json, "Print the report as JSON");

  StatsArgs st;
  auto* stats_cmd = app.add_subcommand("stats", "Visible / usable-symmetric / invisible texel fractions");
  stats_cmd->add_option("--scene", st.scene, "Scene directory")->required();
  stats_cmd->add_option("--atlas", st.atlas, "UV atlas .npz")->required();
  stats_cmd->add_option("--image-res", st.image_res, "Image resolution")->capture_default_str();
  stats_cmd->add_option("--cache-dir", st.cache_dir, "Raster cache directory");
  stats_cmd->add_flag("--json", st.json, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (fit_cmd->parsed()) return cmd_fit_pca(fit, out);
    if (train_cmd->parsed()) return cmd_train(tr, *train_cmd, out, err);
    if (render_cmd->parsed()) return cmd_render(rd, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (stats_cmd->parsed()) return cmd_stats(st, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace handtex

#include "handtex/nets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "handtex/npz.hpp"

namespace handtex {

namespace {

using ad::Var;

// Registry used while building the parameter set.
class ParamBuilder {
 public:
  ParamBuilder(uint64_t seed, NetworkParams& out) : rng_(seed), out_(out) {}

  void conv(const std::string& name, int c_in, int c_out, int k, Real gain = 1.0) {
    const int fan_in = c_in * k * k;
    out_.tensors[name + ".weight"] = Var(uniform({c_out, c_in, k, k}, gain * std::sqrt(6.0 / fan_in)), true);
    out_.tensors[name + ".bias"] = Var(Tensor({c_out}), true);
  }

  void linear(const std::string& name, int c_in, int c_out) {
    out_.tensors[name + ".weight"] = Var(uniform({c_out, c_in}, std::sqrt(6.0 / c_in)), true);
    out_.tensors[name + ".bias"] = Var(Tensor({c_out}), true);
  }

 private:
  Tensor uniform(std::vector<int> shape, Real bound) {
    Tensor t(std::move(shape));
    if (bound == 0) return t;
    std::uniform_real_distribution<Real> dist(-bound, bound);
    for (auto& v : t.storage()) v = dist(rng_);
    return t;
  }

  std::mt19937_64 rng_;
  NetworkParams& out_;
};

Var conv(const NetworkParams& p, const std::string& name, const Var& x, int stride, int pad) {
  return ad::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, pad);
}

// Convolution feeding a hidden activation.
Var hidden_conv(const NetworkParams& p, const std::string& name, const Var& x, int stride, int pad) {
  Var h = conv(p, name, x, stride, pad);
  return p.arch.normalization == "instance" ? ad::instance_norm(h) : h;
}

void check_image_input(const ArchConfig& arch, const Var& image, const char* what) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != arch.image_resolution || s[2] != arch.image_resolution) {
    throw std::invalid_argument(std::string(what) + ": expected a 3x" + std::to_string(arch.image_resolution) + "x" +
                                std::to_string(arch.image_resolution) + " image, got " + shape_string(s));
  }
}

// Four stride-2 3x3 convolutions followed by global average pooling.
Var strided_encoder(const NetworkParams& p, const std::string& net, const Var& image, bool leaky) {
  Var h = image;
  for (int i = 0; i < 4; ++i) {
    h = hidden_conv(p, net + ".enc" + std::to_string(i + 1), h, 2, 1);
    h = leaky ? ad::leaky_relu(h, p.arch.leaky_slope) : ad::relu(h);
  }
  return ad::global_avg_pool(h);
}

constexpr Real kResidualGain = 0.1;

void add_resblock(ParamBuilder& b, const std::string& name, int c_in, int c_out) {
  b.conv(name + ".conv1", c_in, c_out, 3);
  // Damped residual branch: without normalization layers, stacked blocks
  // would otherwise inflate activations until the output sigmoid saturates.
  b.conv(name + ".conv2", c_out, c_out, 3, kResidualGain);
  if (c_in != c_out) b.conv(name + ".proj", c_in, c_out, 1);
}

Var resblock(const NetworkParams& p, const std::string& name, const Var& x) {
  Var h = ad::relu(hidden_conv(p, name + ".conv1", x, 1, 1));
  h = hidden_conv(p, name + ".conv2", h, 1, 1);
  const Var skip = p.tensors.count(name + ".proj.weight") ? hidden_conv(p, name + ".proj", x, 1, 0) : x;
  return ad::relu(ad::add(h, skip));
}

std::array<Var, 4> btr_encode(const NetworkParams& p, const Var& uv_image) {
  std::array<Var, 4> e;
  Var h = uv_image;
  for (int level = 0; level < 4; ++level) {
    if (level > 0) h = ad::avg_pool2(h);
    const std::string name = "btr.enc" + std::to_string(level + 1);
    h = resblock(p, name + ".res1", h);
    h = resblock(p, name + ".res2", h);
    e[level] = h;
  }
  return e;
}

// Direction normalization with a zero fallback.
Var normalize3(const Var& v, bool& degenerate) {
  const Tensor& x = v.value();
  const Real norm = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  if (!(norm > 1e-12)) {
    degenerate = true;
    return Var(Tensor({3}, {0.0, 0.0, -1.0}));
  }
  degenerate = false;
  Tensor out({3}, {x[0] / norm, x[1] / norm, x[2] / norm});
  return ad::make_op(out, {v}, [norm, out](ad::Node& n) {
    auto& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    const Real dot = n.grad[0] * out[0] + n.grad[1] * out[1] + n.grad[2] * out[2];
    Tensor& g = parent.grad_buffer();
    for (int i = 0; i < 3; ++i) g[i] += (n.grad[i] - dot * out[i]) / norm;
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// ArchConfig

ArchConfig ArchConfig::scaled(double factor) const {
  ArchConfig a = *this;
  auto s = [factor](std::array<int, 4>& w) {
    for (auto& x : w) x = std::max(1, static_cast<int>(std::lround(x * factor)));
  };
  s(a.albedo_widths);
  s(a.light_widths);
  s(a.coeff_widths);
  s(a.btr_widths);
  return a;
}

void ArchConfig::validate() const {
  if (image_resolution < 16 || image_resolution % 16) {
    throw std::invalid_argument("image resolution must be a positive multiple of 16, got " +
                                std::to_string(image_resolution));
  }
  if (uv_resolution < 8 || uv_resolution % 8) {
    throw std::invalid_argument("UV resolution must be a positive multiple of 8, got " + std::to_string(uv_resolution));
  }
  if (pca_components < 1) throw std::invalid_argument("architecture needs the PCA component count K >= 1");
  for (const auto* w : {&albedo_widths, &light_widths, &coeff_widths, &btr_widths})
    for (int x : *w)
      if (x < 1) throw std::invalid_argument("layer widths must be positive");
  if (normalization != "none" && normalization != "instance")
    throw std::invalid_argument("normalization must be \"none\" or \"instance\", got \"" + normalization + "\"");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"image_resolution", image_resolution}, {"uv_resolution", uv_resolution},
          {"pca_components", pca_components},     {"albedo_widths", albedo_widths},
          {"light_widths", light_widths},         {"coeff_widths", coeff_widths},
          {"btr_widths", btr_widths},             {"shared_decoder", shared_decoder},
          {"bidirectional", bidirectional},       {"leaky_slope", leaky_slope},
          {"normalization", normalization}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.image_resolution = j.value("image_resolution", a.image_resolution);
  a.uv_resolution = j.value("uv_resolution", a.uv_resolution);
  a.pca_components = j.value("pca_components", a.pca_components);
  a.albedo_widths = j.value("albedo_widths", a.albedo_widths);
  a.light_widths = j.value("light_widths", a.light_widths);
  a.coeff_widths = j.value("coeff_widths", a.coeff_widths);
  a.btr_widths = j.value("btr_widths", a.btr_widths);
  a.shared_decoder = j.value("shared_decoder", a.shared_decoder);
  a.bidirectional = j.value("bidirectional", a.bidirectional);
  a.leaky_slope = j.value("leaky_slope", a.leaky_slope);
  a.normalization = j.value("normalization", a.normalization);
  return a;
}

// ---------------------------------------------------------------------------
// NetworkParams

const Var& NetworkParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("missing parameter tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> NetworkParams::names_of(const std::string& net) const {
  std::vector<std::string> names;
  const std::string prefix = net + ".";
  for (const auto& [name, _] : tensors)
    if (name.compare(0, prefix.size(), prefix) == 0) names.push_back(name);
  return names;
}

std::size_t NetworkParams::num_values() const {
  std::size_t n = 0;
  for (const auto& [_, v] : tensors) n += v.size();
  return n;
}

bool NetworkParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const auto& kv) { return kv.second.value().all_finite(); });
}

NetworkParams NetworkParams::clone() const {
  NetworkParams c;
  c.arch = arch;
  for (const auto& [name, v] : tensors) c.tensors[name] = Var(v.value(), v.requires_grad());
  return c;
}

NetworkParams init_params(uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  NetworkParams p;
  p.arch = arch;
  ParamBuilder b(seed, p);

  // Albedo U-Net.
  {
    const auto& w = arch.albedo_widths;
    int c_in = 3;
    for (int i = 0; i < 4; ++i) {
      b.conv("albedo.enc" + std::to_string(i + 1), c_in, w[i], 3);
      c_in = w[i];
    }
    b.conv("albedo.bottleneck", w[3], w[3], 3);
    // Decoder level i consumes [previous, skip] and emits w[i - 1].
    int c_cat = 2 * w[3];
    for (int i = 3; i >= 1; --i) {
      b.conv("albedo.dec" + std::to_string(i), c_cat, w[i - 1], 3);
      c_cat = 2 * w[i - 1];
    }
    b.conv("albedo.out", c_cat, 3, 3);
  }
  // Light and coefficient encoders.
  for (const auto& [net, widths, head] :
       {std::tuple{std::string("light"), arch.light_widths, 12},
        std::tuple{std::string("coeff"), arch.coeff_widths, 2 * arch.pca_components}}) {
    int c_in = 3;
    for (int i = 0; i < 4; ++i) {
      b.conv(net + ".enc" + std::to_string(i + 1), c_in, widths[i], 3);
      c_in = widths[i];
    }
    b.linear(net + ".head", widths[3], head);
  }
  // Texture reconstructor: shared encoder, one or two decoders.
  {
    const auto& w = arch.btr_widths;
    int c_in = 3;
    for (int l = 0; l < 4; ++l) {
      const std::string name = "btr.enc" + std::to_string(l + 1);
      add_resblock(b, name + ".res1", c_in, w[l]);
      add_resblock(b, name + ".res2", w[l], w[l]);
      c_in = w[l];
    }
    const std::vector<std::string> decoders =
        arch.shared_decoder ? std::vector<std::string>{"btr.dec"} : std::vector<std::string>{"btr.dec_left", "btr.dec_right"};
    for (const auto& dec : decoders) {
      for (int l = 4; l >= 1; --l) {
        const int out = l > 1 ? w[l - 2] : w[0];
        b.conv(dec + ".level" + std::to_string(l), 3 * w[l - 1], out, 3);
      }
      b.conv(dec + ".out", w[0], 3, 3);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

Var albedo_forward(const NetworkParams& p, const Var& image) {
  check_image_input(p.arch, image, "albedo_forward");
  const Real slope = p.arch.leaky_slope;
  std::array<Var, 4> e;
  Var h = image;
  for (int i = 0; i < 4; ++i) {
    h = ad::leaky_relu(hidden_conv(p, "albedo.enc" + std::to_string(i + 1), h, 2, 1), slope);
    e[i] = h;
  }
  h = ad::relu(hidden_conv(p, "albedo.bottleneck", h, 1, 1));
  h = ad::concat_channels({h, e[3]});
  for (int i = 3; i >= 1; --i) {
    h = ad::upsample_nearest2(h);
    h = ad::relu(hidden_conv(p, "albedo.dec" + std::to_string(i), h, 1, 1));
    h = ad::concat_channels({h, e[i - 1]});
  }
  h = ad::upsample_nearest2(h);
  return ad::sigmoid(conv(p, "albedo.out", h, 1, 1));
}

LightOutput light_from_head(const Var& t) {
  if (t.size() != 12) throw std::invalid_argument("light head must emit 12 values");
  // 0.2 + 0.8 * (t + 1) / 2 = 0.6 + 0.4 t
  const Var colors = ad::add_const(ad::scale(ad::slice(t, 0, 9), 0.4), Tensor({9}, 0.6));
  LightOutput out;
  const Var dir = normalize3(ad::slice(t, 9, 3), out.degenerate_direction);
  out.light = ad::concat({colors, dir});
  return out;
}

LightOutput light_forward(const NetworkParams& p, const Var& image) {
  check_image_input(p.arch, image, "light_forward");
  const Var feat = strided_encoder(p, "light", image, false);
  return light_from_head(ad::tanh(ad::linear(feat, p.at("light.head.weight"), p.at("light.head.bias"))));
}

CoeffOutput coeffs_from_head(const Var& t, const PCATextureModel& pca) {
  const int k = pca.num_components();
  if (t.size() != static_cast<std::size_t>(2 * k)) {
    throw std::invalid_argument("coefficient head emits " + std::to_string(t.size()) + " values but the PCA model needs 2K = " +
                                std::to_string(2 * k));
  }
  Tensor scale({2 * k});
  const auto sd = pca.stddevs();
  for (int i = 0; i < k; ++i) scale[i] = scale[k + i] = 3 * sd[i];
  const Var scaled = ad::mul_const(t, scale);
  return {ad::slice(scaled, 0, k), ad::slice(scaled, k, k)};
}

CoeffOutput html_encode(const NetworkParams& p, const Var& image, const PCATextureModel& pca) {
  check_image_input(p.arch, image, "html_encode");
  const Var& w = p.at("coeff.head.weight");
  if (w.value().dim(0) != 2 * pca.num_components()) {
    throw std::invalid_argument("coefficient head size " + std::to_string(w.value().dim(0)) +
                                " does not match 2K = " + std::to_string(2 * pca.num_components()) +
                                " of the loaded PCA model");
  }
  const Var feat = strided_encoder(p, "coeff", image, true);
  return coeffs_from_head(ad::tanh(ad::linear(feat, w, p.at("coeff.head.bias"))), pca);
}

BTROutput btr_forward(const NetworkParams& p, const Var& t_left, const Var& t_right, const UVAtlas& atlas) {
  check_vector_length(atlas, t_left.value(), "btr_forward (left)");
  check_vector_length(atlas, t_right.value(), "btr_forward (right)");
  if (atlas.resolution % 8) throw std::invalid_argument("btr_forward: UV resolution must be a multiple of 8");
  const std::array<Var, 4> e[2] = {btr_encode(p, vector_to_uv_image(atlas, t_left)),
                                   btr_encode(p, vector_to_uv_image(atlas, t_right))};
  const std::string dec[2] = {p.arch.shared_decoder ? "btr.dec" : "btr.dec_left",
                              p.arch.shared_decoder ? "btr.dec" : "btr.dec_right"};
  Var f[2] = {e[0][3], e[1][3]};
  for (int level = 4; level >= 1; --level) {
    Var next[2];
    for (int h = 0; h < 2; ++h) {
      const Var other = p.arch.bidirectional ? f[1 - h] : ad::zeros_like_detached(f[1 - h]);
      Var x = ad::concat_channels({e[h][level - 1], f[h], other});
      x = ad::relu(hidden_conv(p, dec[h] + ".level" + std::to_string(level), x, 1, 1));
      next[h] = level > 1 ? ad::upsample_nearest2(x) : x;
    }
    f[0] = next[0];
    f[1] = next[1];
  }
  BTROutput out;
  out.left = uv_image_to_vector(atlas, ad::sigmoid(conv(p, dec[0] + ".out", f[0], 1, 1)));
  out.right = uv_image_to_vector(atlas, ad::sigmoid(conv(p, dec[1] + ".out", f[1], 1, 1)));
  return out;
}

Var vector_to_uv_image(const UVAtlas& atlas, const Var& t) {
  check_vector_length(atlas, t.value(), "vector_to_uv_image");
  return ad::make_op(vector_to_uv_image(atlas, t.value()), {t}, [&atlas](ad::Node& n) {
    auto& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    parent.grad_buffer() += uv_image_to_vector(atlas, n.grad);
  });
}

Var uv_image_to_vector(const UVAtlas& atlas, const Var& img) {
  return ad::make_op(uv_image_to_vector(atlas, img.value()), {img}, [&atlas](ad::Node& n) {
    auto& parent = *n.parents[0];
    if (!parent.requires_grad) return;
    parent.grad_buffer() += vector_to_uv_image(atlas, n.grad);
  });
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_params(const std::filesystem::path& path, const NetworkParams& params) {
  npz::Archive ar;
  for (const auto& [name, v] : params.tensors) ar["param/" + name] = npz::Array::from_tensor(v.value());
  const std::string arch = params.arch.to_json().dump();
  ar["arch_json"] = npz::Array::from_bytes({arch.begin(), arch.end()}, {static_cast<int64_t>(arch.size())});
  ar["version"] = npz::Array::from_ints({kCheckpointVersion}, {1});
  npz::save(path, ar);
}

NetworkParams load_params(const std::filesystem::path& path) {
  const npz::Archive ar = npz::load(path);
  const int64_t version = npz::get(ar, "version").as_ints().at(0);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + " has version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto& arch_bytes = npz::get(ar, "arch_json").u8;
  const ArchConfig arch = ArchConfig::from_json(nlohmann::json::parse(std::string(arch_bytes.begin(), arch_bytes.end())));
  NetworkParams params = init_params(0, arch);
  for (auto& [name, v] : params.tensors) {
    const Tensor t = npz::get(ar, "param/" + name).to_tensor();
    if (t.size() != v.size()) throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong size");
    v = Var(t.reshaped(v.shape()), true);
  }
  return params;
}

}  // namespace handtex

#include "handtex/texture_pca.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "handtex/npz.hpp"

namespace handtex {

namespace {

void check_alpha(const PCATextureModel& model, std::size_t n) {
  if (n != static_cast<std::size_t>(model.num_components())) {
    throw std::invalid_argument("alpha has " + std::to_string(n) + " entries, model has K = " +
                                std::to_string(model.num_components()));
  }
}

void check_length(const PCATextureModel& model, const TextureVector& t) {
  if (t.size() != model.vector_length()) {
    throw std::invalid_argument("texture length " + std::to_string(t.size()) + " does not match model length " +
                                std::to_string(model.vector_length()));
  }
}

Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

}  // namespace

std::vector<Real> PCATextureModel::stddevs() const {
  std::vector<Real> s(variances.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = std::sqrt(std::max<Real>(0, variances[k]));
  return s;
}

PCATextureModel fit_pca(const std::vector<TextureVector>& corpus, int components, std::string template_version) {
  const int n = static_cast<int>(corpus.size());
  if (n < 2) throw std::invalid_argument("PCA needs at least 2 corpus textures");
  if (components < 1) throw std::invalid_argument("component count must be at least 1");
  if (components > n - 1) {
    throw std::invalid_argument("K exceeds corpus rank: K = " + std::to_string(components) + " but n - 1 = " +
                                std::to_string(n - 1));
  }
  const std::size_t dim = corpus[0].size();
  for (const auto& t : corpus) {
    if (t.size() != dim) throw std::invalid_argument("corpus textures have inconsistent lengths");
  }
  if (dim == 0) throw std::invalid_argument("corpus textures are empty");

  PCATextureModel model;
  model.template_version = std::move(template_version);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& t : corpus) mean += as_vector(t);
  mean /= n;
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(dim), n);
  for (int i = 0; i < n; ++i) centered.col(i) = as_vector(corpus[i]) - mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  const Real tol = std::max<Real>(sv.size() > 0 ? sv[0] : 0, 1.0) * 1e-10 * std::sqrt(static_cast<Real>(dim));
  int kept = 0;
  while (kept < components && kept < sv.size() && sv[kept] > tol) ++kept;

  model.mean = Tensor({static_cast<int>(dim)}, std::vector<Real>(mean.data(), mean.data() + mean.size()));
  model.basis = svd.matrixU().leftCols(kept);
  model.variances.resize(kept);
  for (int k = 0; k < kept; ++k) {
    model.variances[k] = sv[k] * sv[k] / (n - 1);
    auto col = model.basis.col(k);
    const Real max_abs = col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (std::abs(col[i]) > 1e-9 * max_abs) {
        if (col[i] < 0) col = -col;
        break;
      }
    }
  }
  return model;
}

TextureVector reconstruct_unclamped(const PCATextureModel& model, const std::vector<Real>& alpha) {
  check_alpha(model, alpha.size());
  TextureVector out = model.mean;
  if (!alpha.empty()) {
    Eigen::Map<Eigen::VectorXd> o(out.data(), static_cast<Eigen::Index>(out.size()));
    o.noalias() += model.basis * Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  }
  return out;
}

TextureVector reconstruct(const PCATextureModel& model, const std::vector<Real>& alpha) {
  TextureVector t = reconstruct_unclamped(model, alpha);
  for (auto& x : t.storage()) x = std::clamp<Real>(x, 0, 1);
  return t;
}

ad::Var reconstruct(const PCATextureModel& model, const ad::Var& alpha) {
  check_alpha(model, alpha.size());
  const std::vector<Real> a(alpha.value().storage().begin(), alpha.value().storage().end());
  ad::Var affine = ad::make_op(reconstruct_unclamped(model, a), {alpha}, [&model](ad::Node& node) {
    auto& parent = *node.parents[0];
    if (!parent.requires_grad) return;
    Tensor& g = parent.grad_buffer();
    Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())).noalias() +=
        model.basis.transpose() * as_vector(node.grad);
  });
  return ad::clamp(affine, 0, 1);
}

std::vector<Real> project(const PCATextureModel& model, const TextureVector& t) {
  check_length(model, t);
  const Eigen::VectorXd alpha = model.basis.transpose() * (as_vector(t) - as_vector(model.mean));
  return {alpha.data(), alpha.data() + alpha.size()};
}

void save_pca(const std::filesystem::path& path, const PCATextureModel& model) {
  const auto dim = static_cast<int64_t>(model.vector_length());
  const auto k = static_cast<int64_t>(model.num_components());
  std::vector<double> basis(static_cast<std::size_t>(dim * k));
  for (int64_t i = 0; i < dim; ++i)
    for (int64_t j = 0; j < k; ++j) basis[static_cast<std::size_t>(i * k + j)] = model.basis(i, j);
  npz::Archive ar;
  ar["mean"] = npz::Array::from_tensor(model.mean);
  ar["basis"] = npz::Array::from_doubles(std::move(basis), {dim, k});
  ar["variances"] = npz::Array::from_doubles(model.variances, {k});
  ar["K"] = npz::Array::from_ints({k}, {1});
  ar["P"] = npz::Array::from_ints({dim / 3}, {1});
  const std::string& v = model.template_version;
  ar["template_version"] = npz::Array::from_bytes({v.begin(), v.end()}, {static_cast<int64_t>(v.size())});
  npz::save(path, ar);
}

PCATextureModel load_pca(const std::filesystem::path& path) {
  const npz::Archive ar = npz::load(path);
  PCATextureModel model;
  model.mean = npz::get(ar, "mean").to_tensor().reshaped({static_cast<int>(npz::get(ar, "mean").numel())});
  const npz::Array& basis = npz::get(ar, "basis");
  const int64_t k = npz::get(ar, "K").as_ints().at(0);
  const auto dim = static_cast<int64_t>(model.mean.size());
  if (basis.shape.size() != 2 || basis.shape[0] != dim || basis.shape[1] != k) {
    throw std::runtime_error("PCA model " + path.string() + ": basis shape does not match mean length and K");
  }
  const auto b = basis.as_doubles();
  model.basis.resize(dim, k);
  for (int64_t i = 0; i < dim; ++i)
    for (int64_t j = 0; j < k; ++j) model.basis(i, j) = b[static_cast<std::size_t>(i * k + j)];
  model.variances = npz::get(ar, "variances").as_doubles();
  if (static_cast<int64_t>(model.variances.size()) != k) throw std::runtime_error("PCA model: variances length != K");
  if (npz::get(ar, "P").as_ints().at(0) * 3 != dim) throw std::runtime_error("PCA model: P does not match mean length");
  if (auto it = ar.find("template_version"); it != ar.end()) {
    model.template_version.assign(it->second.u8.begin(), it->second.u8.end());
  }
  return model;
}

}  // namespace handtex

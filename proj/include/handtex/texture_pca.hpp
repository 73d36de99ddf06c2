#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "handtex/autograd.hpp"
#include "handtex/uv_atlas.hpp"

namespace handtex {

/// Linear texture model: texture = mean + basis * alpha.
struct PCATextureModel {
  TextureVector mean;                       // 3P
  Eigen::MatrixXd basis;                    // 3P x K, orthonormal columns
  std::vector<Real> variances;              // K, nonincreasing
  std::string template_version = "custom";

  int num_components() const { return static_cast<int>(basis.cols()); }
  std::size_t vector_length() const { return mean.size(); }
  std::vector<Real> stddevs() const;
};

/// Top-K principal directions of the centered corpus (thin SVD of the n x 3P
/// data matrix). Columns are sign-fixed so their first nonzero entry is
/// positive; directions with zero variance are dropped, so the result may
/// hold fewer than K components.
PCATextureModel fit_pca(const std::vector<TextureVector>& corpus, int components,
                        std::string template_version = "custom");

/// mean + basis * alpha, before clamping.
TextureVector reconstruct_unclamped(const PCATextureModel& model, const std::vector<Real>& alpha);
/// mean + basis * alpha clamped to [0, 1].
TextureVector reconstruct(const PCATextureModel& model, const std::vector<Real>& alpha);
/// Differentiable clamped reconstruction; alpha has K entries.
ad::Var reconstruct(const PCATextureModel& model, const ad::Var& alpha);

/// basis^T (t - mean).
std::vector<Real> project(const PCATextureModel& model, const TextureVector& t);

/// Named-array container with mean, basis, variances, K, P and the template
/// version (as UTF-8 bytes).
void save_pca(const std::filesystem::path& path, const PCATextureModel& model);
PCATextureModel load_pca(const std::filesystem::path& path);

}  // namespace handtex

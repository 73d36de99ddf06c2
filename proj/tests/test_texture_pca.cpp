#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "handtex/texture_pca.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

std::vector<TextureVector> random_corpus(int n, int len, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TextureVector> c;
  for (int i = 0; i < n; ++i) c.push_back(testing::random_tensor({len}, rng, 0.1, 0.9));
  return c;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(PCA, TwoSampleClosedForm) {
  const auto c = random_corpus(2, 30, 1);
  const PCATextureModel m = fit_pca(c, 1);
  ASSERT_EQ(m.num_components(), 1);
  Eigen::VectorXd d(30);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR(m.mean[i], 0.5 * (c[0][i] + c[1][i]), 1e-12);
    d[i] = c[0][i] - c[1][i];
  }
  d.normalize();
  EXPECT_NEAR(std::abs(m.basis.col(0).dot(d)), 1.0, 1e-10);
  // Sample variance of the two projections (n - 1 normalization).
  const Real half = 0.5 * (Eigen::Map<const Eigen::VectorXd>(c[0].data(), 30) -
                           Eigen::Map<const Eigen::VectorXd>(c[1].data(), 30)).norm();
  EXPECT_NEAR(m.variances[0], 2 * half * half, 1e-10);
}

TEST(PCA, BasisOrthonormalVariancesSorted) {
  const PCATextureModel m = fit_pca(random_corpus(8, 50, 2), 7);
  ASSERT_EQ(m.num_components(), 7);
  const Eigen::MatrixXd gram = m.basis.transpose() * m.basis;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-6);
  for (int k = 1; k < 7; ++k) EXPECT_LE(m.variances[k], m.variances[k - 1]);
}

TEST(PCA, ExactReconstructionAtFullRank) {
  const auto c = random_corpus(6, 40, 3);
  const PCATextureModel m = fit_pca(c, 5);
  for (const auto& t : c) EXPECT_LT(max_abs_diff(reconstruct_unclamped(m, project(m, t)), t), 1e-5);
}

TEST(PCA, ErrorNonincreasingInK) {
  const auto c = random_corpus(6, 40, 4);
  for (const auto& t : c) {
    Real prev = 1e9;
    for (int k = 1; k <= 5; ++k) {
      const PCATextureModel m = fit_pca(c, k);
      const Tensor r = reconstruct_unclamped(m, project(m, t));
      Real err = 0;
      for (std::size_t i = 0; i < t.size(); ++i) err += (r[i] - t[i]) * (r[i] - t[i]);
      EXPECT_LE(err, prev + 1e-12);
      prev = err;
    }
  }
}

TEST(PCA, RejectsKBeyondRank) {
  try {
    fit_pca(random_corpus(4, 10, 5), 4);
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("K exceeds corpus rank"), std::string::npos);
  }
}

TEST(PCA, DegenerateCorpusHasNoVariance) {
  std::mt19937_64 rng(6);
  const Tensor t = testing::random_tensor({20}, rng);
  const PCATextureModel m = fit_pca({t, t, t}, 2);
  for (Real v : m.variances) EXPECT_EQ(v, 0.0);
  const std::vector<Real> alpha(static_cast<std::size_t>(m.num_components()), 3.0);
  EXPECT_LT(max_abs_diff(reconstruct(m, alpha), t), 1e-12);
}

TEST(PCA, AffineIdentitiesAndProjection) {
  const auto c = random_corpus(6, 40, 7);
  const PCATextureModel m = fit_pca(c, 4);
  const std::vector<Real> zero(4, 0.0);
  EXPECT_LT(max_abs_diff(reconstruct_unclamped(m, zero), m.mean), 1e-15);
  const std::vector<Real> a1{0.1, -0.2, 0.3, 0.05}, a2{-0.3, 0.1, 0.2, -0.1};
  std::vector<Real> a12(4);
  for (int k = 0; k < 4; ++k) a12[k] = a1[k] + a2[k];
  const Tensor r12 = reconstruct_unclamped(m, a12), r1 = reconstruct_unclamped(m, a1), r2 = reconstruct_unclamped(m, a2);
  for (std::size_t i = 0; i < r12.size(); ++i) EXPECT_NEAR(r12[i] - r1[i] - r2[i] + m.mean[i], 0.0, 1e-12);

  EXPECT_LT(std::abs(project(m, m.mean)[0]), 1e-12);
  Tensor e = m.mean;
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += m.basis(static_cast<Eigen::Index>(i), 2);
  const auto p = project(m, e);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p[k], k == 2 ? 1.0 : 0.0, 1e-10);

  std::mt19937_64 rng(8);
  const Tensor t = testing::random_tensor({40}, rng);
  const Tensor r = reconstruct_unclamped(m, project(m, t));
  Eigen::VectorXd resid(40);
  for (int i = 0; i < 40; ++i) resid[i] = t[i] - r[i];
  EXPECT_LT((m.basis.transpose() * resid).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PCA, SignConventionAndDeterminism) {
  const auto c = random_corpus(5, 30, 9);
  const PCATextureModel a = fit_pca(c, 3), b = fit_pca(c, 3);
  EXPECT_EQ(a.basis, b.basis);
  for (int k = 0; k < 3; ++k) {
    Eigen::Index first = 0;
    while (std::abs(a.basis(first, k)) < 1e-9 * a.basis.col(k).cwiseAbs().maxCoeff()) ++first;
    EXPECT_GT(a.basis(first, k), 0.0);
  }
}

TEST(PCA, DifferentiableReconstructionClampsAndMatches) {
  const auto c = random_corpus(6, 40, 10);
  const PCATextureModel m = fit_pca(c, 5);
  const std::vector<Real> alpha{0.5, -0.2, 0.1, 0.0, 0.3};
  const ad::Var r = reconstruct(m, ad::Var(Tensor({5}, alpha)));
  EXPECT_EQ(r.value().storage(), reconstruct(m, alpha).storage());
  const Tensor clamped = reconstruct(m, std::vector<Real>{40, 0, 0, 0, 0});
  for (Real v : clamped.storage()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  std::mt19937_64 rng(11);
  const Tensor w = testing::random_tensor({40}, rng, -1, 1);
  auto f = [&](const ad::Var& a) { return testing::probe(reconstruct(m, a), w); };
  EXPECT_LT(testing::check_gradient(f, Tensor({5}, alpha), {0, 1, 2, 3, 4}).worst, 1e-6);
}

TEST(PCA, SaveLoadRoundTrip) {
  const PCATextureModel m = fit_pca(random_corpus(5, 30, 12), 3, "v-test");
  const auto path = std::filesystem::temp_directory_path() / "handtex_test_pca.npz";
  save_pca(path, m);
  const PCATextureModel b = load_pca(path);
  EXPECT_EQ(b.basis, m.basis);
  EXPECT_EQ(b.mean.storage(), m.mean.storage());
  EXPECT_EQ(b.variances, m.variances);
  EXPECT_EQ(b.template_version, "v-test");
}

}  // namespace
}  // namespace handtex

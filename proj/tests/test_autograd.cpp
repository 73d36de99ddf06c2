#include <gtest/gtest.h>

#include <random>

#include "handtex/autograd.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

using ad::Var;
using testing::check_gradient;
using testing::probe;
using testing::random_coords;
using testing::random_tensor;

// Direct six-loop convolution.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y({cout, oh, ow});
  for (int o = 0; o < cout; ++o)
    for (int yy = 0; yy < oh; ++yy)
      for (int xx = 0; xx < ow; ++xx) {
        Real s = b[o];
        for (int c = 0; c < cin; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = yy * stride + ky - pad, ix = xx * stride + kx - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              s += w[((o * cin + c) * k + ky) * k + kx] * x.at(c, iy, ix);
            }
        y.at(o, yy, xx) = s;
      }
  return y;
}

TEST(Autograd, ConvMatchesDirectLoops) {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    const Tensor x = random_tensor({3, 9, 8}, rng, -1, 1);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1);
    const Tensor b = random_tensor({4}, rng, -1, 1);
    const Tensor y = ad::conv2d(Var(x), Var(w), Var(b), stride, 1).value();
    const Tensor ref = conv_reference(x, w, b, stride, 1);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Autograd, ConvGradients) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 8, 8}, rng, -1, 1);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng, -1, 1);
  const Tensor b = random_tensor({5}, rng, -1, 1);
  for (int stride : {1, 2}) {
    const Tensor probe_w = random_tensor({5, 8 / stride, 8 / stride}, rng, -1, 1);
    auto wrt_x = [&](const Var& v) { return probe(ad::conv2d(v, Var(w), Var(b), stride, 1), probe_w); };
    auto wrt_w = [&](const Var& v) { return probe(ad::conv2d(Var(x), v, Var(b), stride, 1), probe_w); };
    auto wrt_b = [&](const Var& v) { return probe(ad::conv2d(Var(x), Var(w), v, stride, 1), probe_w); };
    EXPECT_LT(check_gradient(wrt_x, x, random_coords(x.size(), 20, rng)).worst, 1e-6);
    EXPECT_LT(check_gradient(wrt_w, w, random_coords(w.size(), 20, rng)).worst, 1e-6);
    EXPECT_LT(check_gradient(wrt_b, b, {0, 1, 2, 3, 4}).worst, 1e-6);
  }
}

TEST(Autograd, PoolingUpsampleConcatGradients) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 6, 6}, rng, -1, 1);
  const Tensor p3 = random_tensor({2, 3, 3}, rng);
  const Tensor p12 = random_tensor({2, 12, 12}, rng);
  const Tensor pc = random_tensor({4, 6, 6}, rng);
  auto pool = [&](const Var& v) { return probe(ad::avg_pool2(v), p3); };
  auto up = [&](const Var& v) { return probe(ad::upsample_nearest2(v), p12); };
  auto cat = [&](const Var& v) { return probe(ad::concat_channels({v, ad::scale(v, 2.0)}), pc); };
  auto gap = [&](const Var& v) { return probe(ad::global_avg_pool(v), Tensor({2}, {0.3, -0.7})); };
  for (const auto& f : {std::function<Var(const Var&)>(pool), std::function<Var(const Var&)>(up),
                        std::function<Var(const Var&)>(cat), std::function<Var(const Var&)>(gap)}) {
    EXPECT_LT(check_gradient(f, x, random_coords(x.size(), 15, rng)).worst, 1e-6);
  }
}

TEST(Autograd, InstanceNormStatsAndGradients) {
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor({3, 5, 4}, rng, -2, 3);
  const Tensor y = ad::instance_norm(Var(x)).value();
  for (int c = 0; c < 3; ++c) {
    Real mean = 0, sq = 0;
    for (int i = 0; i < 20; ++i) mean += y[c * 20 + i];
    mean /= 20;
    for (int i = 0; i < 20; ++i) sq += (y[c * 20 + i] - mean) * (y[c * 20 + i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 20, 1.0, 1e-3);
  }
  const Tensor w = random_tensor({3, 5, 4}, rng, -1, 1);
  auto f = [&](const Var& v) { return probe(ad::instance_norm(v), w); };
  EXPECT_LT(check_gradient(f, x, random_coords(x.size(), 30, rng)).worst, 1e-5);
}

TEST(Autograd, ElementwiseGradients) {
  std::mt19937_64 rng(4);
  // Keep away from the kinks of relu / leaky / clamp.
  Tensor x = random_tensor({40}, rng, 0.05, 0.45);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  const Tensor pw = random_tensor({40}, rng, -1, 1);
  const std::vector<std::function<Var(const Var&)>> fns = {
      [&](const Var& v) { return probe(ad::sigmoid(v), pw); },
      [&](const Var& v) { return probe(ad::tanh(v), pw); },
      [&](const Var& v) { return probe(ad::relu(v), pw); },
      [&](const Var& v) { return probe(ad::leaky_relu(v, 0.2), pw); },
      [&](const Var& v) { return probe(ad::clamp(v, -0.3, 0.3), pw); },
      [&](const Var& v) { return probe(ad::abs(v), pw); },
      [&](const Var& v) { return probe(ad::mul(v, ad::sigmoid(v)), pw); },
      [&](const Var& v) { return ad::mean(ad::sub(v, ad::scale(v, 0.5))); },
  };
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& f : fns) {
    const auto r = check_gradient(f, x, all, 1e-6);
    EXPECT_LT(r.worst, 1e-5);
  }
}

TEST(Autograd, LinearSliceConcatWeightedSum) {
  std::mt19937_64 rng(5);
  const Tensor w = random_tensor({3, 4}, rng, -1, 1);
  const Tensor b = random_tensor({3}, rng, -1, 1);
  const Tensor x = random_tensor({4}, rng, -1, 1);
  auto lin = [&](const Var& v) { return probe(ad::linear(v, Var(w), Var(b)), Tensor({3}, {1.0, -2.0, 0.5})); };
  EXPECT_LT(check_gradient(lin, x, {0, 1, 2, 3}).worst, 1e-6);
  auto parts = [&](const Var& v) {
    const Var joined = ad::concat({ad::slice(v, 2, 2), ad::slice(v, 0, 2)});
    return ad::weighted_sum({ad::sum(joined), ad::sum(ad::mul(joined, joined))}, {0.5, 2.0});
  };
  EXPECT_LT(check_gradient(parts, x, {0, 1, 2, 3}).worst, 1e-6);
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Var x(Tensor({1}, {3.0}), true);
  const Var y = ad::mul(x, x);
  ad::backward(ad::add(y, y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autograd, DetachBlocksGradient) {
  Var x(Tensor({1}, {2.0}), true);
  ad::backward(ad::add(ad::mul(x, x.detach()), x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

}  // namespace
}  // namespace handtex

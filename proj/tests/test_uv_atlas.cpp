#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "handtex/hand_template.hpp"
#include "handtex/uv_atlas.hpp"
#include "test_support.hpp"

namespace handtex {
namespace {

std::vector<std::array<Vec2, 3>> quad(double u0, double u1, double v0, double v1) {
  return {{Vec2(u0, v0), Vec2(u1, v0), Vec2(u1, v1)}, {Vec2(u0, v0), Vec2(u1, v1), Vec2(u0, v1)}};
}

TEST(UVAtlas, FullQuadCoversEverything) {
  const UVAtlas a = build_atlas(quad(0, 1, 0, 1), 4);
  EXPECT_EQ(a.num_slots(), 16);
  for (auto m : a.valid_mask) EXPECT_EQ(m, 1);
}

TEST(UVAtlas, HalfQuadCoversHalf) {
  const UVAtlas a = build_atlas(quad(0, 0.5, 0, 1), 4);
  EXPECT_EQ(a.num_slots(), 8);
  for (int slot = 0; slot < a.num_slots(); ++slot) EXPECT_LT(a.texel_col(slot), 2);
}

TEST(UVAtlas, SlotsEnumerateValidTexelsRowMajor) {
  const UVAtlas a = build_atlas(quad(0.25, 0.75, 0.25, 1), 8);
  int prev = -1;
  for (int slot = 0; slot < a.num_slots(); ++slot) {
    const int texel = a.texel_of_index[slot];
    EXPECT_GT(texel, prev);
    EXPECT_EQ(a.index_of_texel[texel], slot);
    prev = texel;
  }
}

TEST(UVAtlas, VectorImageConversions) {
  const UVAtlas a = build_atlas(quad(0, 0.5, 0, 1), 8);
  const std::size_t len = a.vector_length();
  const ImageBuffer ones = vector_to_uv_image(a, Tensor({static_cast<int>(len)}, 1.0));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(ones.at(1, y, x), a.valid_mask[y * 8 + x] ? 1.0 : 0.0);

  std::mt19937_64 rng(3);
  const Tensor t = testing::random_tensor({static_cast<int>(len)}, rng);
  const Tensor back = uv_image_to_vector(a, vector_to_uv_image(a, t));
  for (std::size_t i = 0; i < len; ++i) EXPECT_EQ(back[i], t[i]);

  // Basis vector -> one lit texel.
  Tensor e({static_cast<int>(len)});
  const int k = 5;
  e[3 * k + 2] = 1.0;
  const ImageBuffer img = vector_to_uv_image(a, e);
  int nonzero = 0;
  for (std::size_t i = 0; i < img.size(); ++i) nonzero += img[i] != 0;
  EXPECT_EQ(nonzero, 1);
  EXPECT_EQ(img.at(2, a.texel_row(k), a.texel_col(k)), 1.0);
}

TEST(UVAtlas, InvalidTexelsAreIgnored) {
  const UVAtlas a = build_atlas(quad(0, 0.5, 0, 1), 8);
  std::mt19937_64 rng(4);
  ImageBuffer img = testing::random_tensor({3, 8, 8}, rng);
  const Tensor ref = uv_image_to_vector(a, img);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        if (!a.valid_mask[y * 8 + x]) img.at(c, y, x) = 7.0;
  const Tensor got = uv_image_to_vector(a, img);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], ref[i]);
  EXPECT_EQ(uv_image_to_vector(a, make_image(8, 8)).storage(), Storage(a.vector_length(), 0.0));
}

TEST(UVAtlas, SymMapIsAnInvolution) {
  const UVAtlas a = build_atlas(HandTemplate::shipped().rest_mesh(), 32);
  std::mt19937_64 rng(5);
  const Tensor t = testing::random_tensor({static_cast<int>(a.vector_length())}, rng);
  const Tensor twice = apply_sym_map(a, apply_sym_map(a, t));
  EXPECT_EQ(twice.storage(), t.storage());
  const Tensor uniform({static_cast<int>(a.vector_length())}, 0.4);
  EXPECT_EQ(apply_sym_map(a, uniform).storage(), uniform.storage());
}

TEST(UVAtlas, CustomSymMapMovesSingleSlot) {
  UVAtlas a = build_atlas(quad(0, 1, 0, 1), 4);
  std::vector<int> swap(16);
  for (int k = 0; k < 16; ++k) swap[k] = k ^ 1;
  set_sym_map(a, swap);
  Tensor t({48});
  t[3 * 6 + 1] = 1.0;
  const Tensor m = apply_sym_map(a, t);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[i], i == 3 * 7 + 1 ? 1.0 : 0.0);
  std::vector<int> bad(16, 0);
  EXPECT_THROW(set_sym_map(a, bad), std::exception);
}

TEST(UVAtlas, SaveLoadRoundTrip) {
  const UVAtlas a = build_atlas(HandTemplate::shipped().rest_mesh(), 32);
  const auto path = std::filesystem::temp_directory_path() / "handtex_test_atlas.npz";
  save_atlas(path, a);
  const UVAtlas b = load_atlas(path);
  EXPECT_EQ(b.resolution, a.resolution);
  EXPECT_EQ(b.valid_mask, a.valid_mask);
  EXPECT_EQ(b.texel_of_index, a.texel_of_index);
  EXPECT_EQ(b.sym_map, a.sym_map);
  EXPECT_EQ(b.template_version, a.template_version);
}

TEST(UVAtlas, SlotAtFindsContainingTexel) {
  const UVAtlas a = build_atlas(quad(0, 1, 0, 1), 4);
  EXPECT_EQ(a.slot_at(Vec2(0.1, 0.1)), 0);
  EXPECT_EQ(a.slot_at(Vec2(0.3, 0.1)), 1);
  EXPECT_EQ(a.slot_at(Vec2(0.1, 0.3)), 4);
  EXPECT_EQ(a.slot_at(Vec2(1.5, 0.1)), -1);
}

TEST(UVAtlas, LengthChecks) {
  const UVAtlas a = build_atlas(quad(0, 1, 0, 1), 4);
  EXPECT_THROW(check_vector_length(a, Tensor({47}), "test"), std::exception);
  EXPECT_THROW(build_atlas(quad(0, 1, 0, 1), 1), std::exception);
}

}  // namespace
}  // namespace handtex

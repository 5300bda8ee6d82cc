#include <algorithm>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "olvit/dialog.hpp"
#include "olvit/encoders.hpp"
#include "olvit/model.hpp"
#include "olvit/optim.hpp"

using namespace olvit;
using T64 = Tensor<double>;

namespace {

T64 random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return T64(std::move(shape), std::move(v));
}

Scene two_object_scene() {
  Scene s;
  s.num_frames = 4;
  SceneObject a{0, 2, 0, 1, {}}, b{0, 5, 0, 1, {}};
  for (int f = 0; f < 4; ++f) {
    a.trajectory.push_back({0.2, 0.3});
    b.trajectory.push_back({0.6, 0.1 + 0.05 * f});
  }
  s.objects = {a, b};
  return s;
}

}  // namespace

TEST(SampleFrames, IdentityWhenCountsMatch) {
  std::vector<int> expected(20);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(sample_frame_indices(20, 20), expected);
}

TEST(SampleFrames, SingleFrameVideo) { EXPECT_EQ(sample_frame_indices(1, 4), (std::vector<int>{0, 0, 0, 0})); }

TEST(SampleFrames, HundredFramesTwentySamples) {
  EXPECT_EQ(sample_frame_indices(100, 20),
            (std::vector<int>{0, 5, 10, 16, 21, 26, 31, 36, 42, 47, 52, 57, 63, 68, 73, 78, 83, 89, 94, 99}));
}

TEST(SampleFrames, EndpointsAndMonotone) {
  for (int F = 2; F < 60; F += 7)
    for (int T = 2; T < 25; T += 3) {
      auto idx = sample_frame_indices(F, T);
      EXPECT_EQ(idx.front(), 0);
      EXPECT_EQ(idx.back(), F - 1);
      EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    }
}

TEST(EncodeObjects, DefaultShape) {
  Rng rng(1);
  auto out = encode_objects(random_tensor({240, 16}, rng), random_tensor({216, 16}, rng), random_tensor({240, 216}, rng));
  EXPECT_EQ(out.shape(), (Shape{240, 216}));
}

TEST(EncodeObjects, ZeroLatentsGivePositions) {
  Rng rng(2);
  auto pos = random_tensor({6, 8}, rng);
  EXPECT_EQ(encode_objects(T64::zeros({6, 16}), T64::zeros({8, 16}), pos).values(), pos.values());
}

TEST(EncodeObjects, ZeroExtendedLatent) {
  // W_obj = [[1,0],[0,1],[0,0],[0,0]]
  auto out = encode_objects(T64::matrix(1, 2, {0.75, -2.5}), T64::matrix(4, 2, {1, 0, 0, 1, 0, 0, 0, 0}), T64::zeros({1, 4}));
  EXPECT_EQ(out.values(), (std::vector<double>{0.75, -2.5, 0, 0}));
}

TEST(EncodeObjects, WrongLatentCount) {
  try {
    encode_objects(T64::zeros({5, 16}), T64::zeros({8, 16}), T64::zeros({6, 8}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("T·N_o = 6"), std::string::npos) << e.what();
  }
}

TEST(EncodeObjects, PermutingLatentsAndPositionsCommutes) {
  Rng rng(3);
  auto lat = random_tensor({5, 16}, rng), w = random_tensor({8, 16}, rng), pos = random_tensor({5, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto permuted = encode_objects(ops::select_rows(lat, perm), w, ops::select_rows(pos, perm));
  auto expected = ops::select_rows(encode_objects(lat, w, pos), perm);
  EXPECT_EQ(permuted.values(), expected.values());
}

TEST(EncodeText, EmptyQuestionRejected) {
  FixtureEmbedder<double> emb(1, 10, 4);
  EXPECT_THROW(encode_text({}, emb, T64::zeros({3, 4}), T64::zeros({8, 3})), DimensionError);
}

TEST(EncodeText, TokenOutsideVocabulary) {
  FixtureEmbedder<double> emb(1, 10, 4);
  EXPECT_THROW(encode_text({3, 10}, emb, T64::zeros({3, 4}), T64::zeros({8, 3})), IndexError);
}

TEST(EncodeText, TooLong) {
  FixtureEmbedder<double> emb(1, 10, 4);
  EXPECT_THROW(encode_text({1, 2, 3}, emb, T64::zeros({3, 4}), T64::zeros({2, 3})), DimensionError);
}

TEST(EncodeText, ZeroProjectionGivesPositionPrefix) {
  Rng rng(4);
  FixtureEmbedder<double> emb(1, 10, 4);
  auto pos = random_tensor({8, 3}, rng);
  auto out = encode_text({7, 2, 9}, emb, T64::zeros({3, 4}), pos);
  EXPECT_EQ(out.values(), ops::slice_rows(pos, 0, 3).values());
}

TEST(EncodeText, ThreeTokensByHand) {
  FixtureEmbedder<double> emb(5, 6, 2);
  const auto W = T64::matrix(2, 2, {1.0, 2.0, -0.5, 3.0});
  const auto P = T64::matrix(3, 2, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const std::vector<std::size_t> ids{4, 0, 4};
  auto out = encode_text(ids, emb, W, P);
  for (std::size_t j = 0; j < 3; ++j) {
    const double e0 = emb.table().at(ids[j], 0), e1 = emb.table().at(ids[j], 1);
    EXPECT_NEAR(out.at(j, 0), 1.0 * e0 + 2.0 * e1 + P.at(j, 0), 1e-15);
    EXPECT_NEAR(out.at(j, 1), -0.5 * e0 + 3.0 * e1 + P.at(j, 1), 1e-15);
  }
}

TEST(FixtureEmbedder, SameSeedSameTable) {
  FixtureEmbedder<double> a(9, 50, 16), b(9, 50, 16), c(10, 50, 16);
  EXPECT_EQ(a.table().values(), b.table().values());
  EXPECT_NE(a.table().values(), c.table().values());
  EXPECT_FALSE(a.table().requires_grad());
}

TEST(FixtureEmbedder, TableSpread) {
  FixtureEmbedder<double> emb(3, 200, 64);
  double sq = 0.0;
  for (double v : emb.table().values()) sq += v * v;
  const double var = sq / static_cast<double>(emb.table().numel());
  EXPECT_NEAR(var, 1.0 / 64.0, 0.1 / 64.0);
}

TEST(FixtureLatent, BlockLayout) {
  const auto scene = two_object_scene();
  const auto frames = sample_frame_indices(4, 4);
  const LatentConfig cfg;
  auto mu = fixture_scene_latent(scene, frames, 2, 1, cfg).mu;
  ASSERT_EQ(mu.size(), 16u);
  std::vector<double> expected(16, 0.0);
  expected[kLatentShape + 0] = 1.0;
  expected[kLatentColor + 5] = 1.0;
  expected[kLatentMaterial] = 1.0;  // metal
  expected[kLatentSize] = 1.0;      // large
  expected[kLatentMotion + 1] = 0.05 / cfg.step;
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(mu[i], expected[i], 1e-12) << i;
}

TEST(FixtureLatent, Deterministic) {
  const auto scene = two_object_scene();
  const auto frames = sample_frame_indices(4, 4);
  LatentConfig cfg;
  cfg.noise_sigma = 0.3;
  cfg.seed = 7;
  EXPECT_EQ(fixture_scene_latent(scene, frames, 1, 0, cfg, 3).mu, fixture_scene_latent(scene, frames, 1, 0, cfg, 3).mu);
  EXPECT_NE(fixture_scene_latent(scene, frames, 1, 0, cfg, 3).mu, fixture_scene_latent(scene, frames, 1, 0, cfg, 4).mu);
}

TEST(FixtureLatent, ColorOnlyDifferenceStaysInColorBlock) {
  auto scene = two_object_scene();
  scene.objects[1].trajectory = scene.objects[0].trajectory;
  const auto frames = sample_frame_indices(4, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    auto a = fixture_scene_latent(scene, frames, t, 0, {}).mu;
    auto b = fixture_scene_latent(scene, frames, t, 1, {}).mu;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool in_color = i >= kLatentColor && i < kLatentColor + 8;
      if (!in_color) {
        EXPECT_EQ(a[i], b[i]) << i;
      }
    }
    EXPECT_NE(a, b);
  }
}

TEST(FixtureLatent, EmptySlotIsZero) {
  const auto scene = two_object_scene();
  auto mu = fixture_scene_latent(scene, sample_frame_indices(4, 4), 0, 5, {}).mu;
  EXPECT_EQ(mu, std::vector<double>(16, 0.0));
}

TEST(FixtureLatent, WidthBelowLayoutRejected) {
  LatentConfig cfg;
  cfg.d_obj = 12;
  EXPECT_THROW(fixture_scene_latent(two_object_scene(), sample_frame_indices(4, 4), 0, 0, cfg), ConfigError);
}

TEST(FixtureLatent, SceneLatentsFrameMajor) {
  const auto scene = two_object_scene();
  auto lat = scene_latents<double>(scene, 4, 3, {});
  ASSERT_EQ(lat.shape(), (Shape{12, 16}));
  const auto frames = sample_frame_indices(4, 4);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(lat.row_values(t * 3 + n), fixture_scene_latent(scene, frames, t, n, {}).mu);
}

TEST(FixtureEmbedder, FrozenThroughTraining) {
  ModelConfig mc;
  mc.d = 12;
  mc.heads = 2;
  mc.L = 1;
  mc.T = 4;
  mc.N_o = 4;
  mc.d_w = 16;
  OlvitModel<double> model(mc, 1);
  for (const auto& p : model.params().entries()) EXPECT_FALSE(p.value.same_storage(model.embedder().table())) << p.name;
  const auto before = model.embedder().table().values();
  DatasetConfig dc;
  dc.scene.num_frames = 8;
  dc.scene.sampled_frames = 4;
  dc.scene.max_objects = 4;
  dc.episode.max_objects = 4;
  auto turns = episode_inputs<double>(make_episode(dc, 0), mc, {});
  AdamW<double> opt(model.params(), {});
  for (int step = 0; step < 3; ++step) {
    model.params().zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(model.episode_loss(turns));
    opt.step(1e-2);
  }
  EXPECT_EQ(model.embedder().table().values(), before);
}

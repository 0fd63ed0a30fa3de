#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "voxsplat/objectives/discriminator.hpp"
#include "voxsplat/objectives/losses.hpp"
#include "voxsplat/objectives/metrics.hpp"

using namespace voxsplat;
using namespace voxsplat::objectives;

namespace {

Image random_image(Rng& rng, std::size_t w, std::size_t h, std::size_t c = 3, double lo = 0.0, double hi = 1.0) {
  Image img(w, h, c);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

LossWeights l1_only() {
  LossWeights w;
  w.l1 = 1.0;
  w.dssim = 0.0;
  return w;
}

struct DepthCase {
  std::size_t W = 0, H = 0;
  std::vector<double> d, ref, alpha;
};

// Smooth reference with a hole and a low-alpha corner, rendered depth nearby.
DepthCase depth_case(Rng& rng, std::size_t W, std::size_t H) {
  DepthCase c{W, H, {}, {}, {}};
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double r = 2.0 + 0.1 * x + 0.05 * y + 0.2 * std::sin(0.7 * x * y);
      c.ref.push_back((x == 2 && y == 3) ? 0.0 : r);
      c.d.push_back(r + rng.uniform(-0.3, 0.3));
      c.alpha.push_back((x + y < 2) ? 0.01 : rng.uniform(0.3, 1.0));
    }
  return c;
}

Map2D as_map(const std::vector<double>& v, std::size_t W, std::size_t H) {
  Map2D m(W, H, 1);
  m.data = v;
  return m;
}

std::function<double(double)> relative_eps(double k) {
  return [k](double s) { return k * s + 1e-8; };
}

}  // namespace

TEST(Reconstruction, IdenticalImagesGiveZero) {
  Rng rng(1);
  const auto img = image_tensor(random_image(rng, 16, 12));
  ad::Tape t;
  const auto parts = reconstruction_loss(t, img, img, LossWeights{});
  EXPECT_EQ(parts.l1, 0.0);
  EXPECT_NEAR(parts.dssim, 0.0, 1e-15);
  EXPECT_NEAR(parts.total.item(), 0.0, 1e-15);
}

TEST(Reconstruction, ConstantOffsetL1) {
  Rng rng(2);
  const auto a = random_image(rng, 16, 16, 3, 0.0, 0.8);
  auto b = a;
  for (auto& v : b.data) v += 0.1;
  ad::Tape t;
  EXPECT_NEAR(reconstruction_loss(t, image_tensor(a), image_tensor(b), l1_only()).total.item(), 0.1, 1e-12);
}

TEST(Reconstruction, ShapeMismatch) {
  ad::Tape t;
  EXPECT_THROW(reconstruction_loss(t, ad::Tensor::zeros({4, 4, 3}), ad::Tensor::zeros({4, 5, 3}), LossWeights{}), ShapeError);
}

TEST(Reconstruction, BoundsOnRandomInputs) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    ad::Tape t;
    const auto p = reconstruction_loss(t, image_tensor(random_image(rng, 12, 12)), image_tensor(random_image(rng, 12, 12)),
                                       LossWeights{});
    EXPECT_GE(p.l1, 0.0);
    EXPECT_LE(p.l1, 1.0);
    EXPECT_GE(p.dssim, 0.0);
    EXPECT_LE(p.dssim, 1.0);
  }
}

TEST(Reconstruction, PerceptualTermIsPluggable) {
  Rng rng(4);
  const auto a = image_tensor(random_image(rng, 8, 8));
  const auto b = image_tensor(random_image(rng, 8, 8));
  LossWeights w = l1_only();
  ad::Tape t;
  const double base = reconstruction_loss(t, a, b, w).total.item();
  EXPECT_EQ(reconstruction_loss(t, a, b, w, [](ad::Tape&, const ad::Tensor&, const ad::Tensor&) {
              return ad::Tensor::scalar(1.0);
            }).total.item(),
            base);
  w.lpips = 0.5;
  EXPECT_NEAR(reconstruction_loss(t, a, b, w, [](ad::Tape&, const ad::Tensor&, const ad::Tensor&) {
                return ad::Tensor::scalar(1.0);
              }).total.item(),
              base + 0.5, 1e-15);
}

TEST(Ssim, MatchesDirectWindowedSum) {
  Rng rng(5);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{16, 16}, {23, 9}, {5, 30}}) {
    const auto a = random_image(rng, w, h);
    auto b = a;
    for (auto& v : b.data) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-12);
  }
  const auto a = random_image(rng, 16, 16);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Gradients, ReconstructionMatchesFiniteDifference) {
  Rng rng(6);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 12}}) {
    auto x = image_tensor(random_image(rng, w, h));
    x.set_requires_grad(true);
    const auto y = image_tensor(random_image(rng, w, h));
    const auto r = oracle::fd_check([&](ad::Tape& t) { return reconstruction_loss(t, x, y, LossWeights{}).total; }, x);
    EXPECT_LT(r.max_rel, 1e-5) << w << "x" << h << " abs " << r.max_abs;
  }
}

TEST(Gradients, DepthLossMatchesFiniteDifference) {
  Rng rng(7);
  for (auto [W, H, tau] : {std::tuple<std::size_t, std::size_t, double>{8, 8, 0.0}, {8, 8, 0.05}, {12, 11, 0.05}, {16, 16, 0.02}}) {
    LossWeights w;
    w.tau = tau;
    // redraw until no residual sits on the truncation boundary
    DepthCase c;
    for (int attempt = 0; attempt < 100; ++attempt) {
      c = depth_case(rng, W, H);
      const auto layout = patch_layout(W, H, depth_mask(c.ref, c.alpha, w.alpha_threshold), w.patch);
      const auto a = depth_normalize_local(c.d, layout, w.epsilon), b = depth_normalize_local(c.ref, layout, w.epsilon);
      const auto ga = depth_normalize_global(c.d, layout, w.epsilon), gb = depth_normalize_global(c.ref, layout, w.epsilon);
      bool near_band = false;
      for (auto i : layout.valid) {
        near_band |= tau > 0 && std::abs(std::abs(a[i] - b[i]) - tau) < 1e-4;
        near_band |= tau > 0 && std::abs(std::abs(ga[i] - gb[i]) - tau) < 1e-4;
      }
      if (!near_band) break;
    }
    const auto ref = as_map(c.ref, W, H);
    auto d = ad::Tensor::from({H, W}, c.d, true);
    const auto r = oracle::fd_check([&](ad::Tape& t) { return depth_loss(t, d, c.alpha, ref, w).loss; }, d);
    EXPECT_LT(r.max_rel, 1e-5) << W << "x" << H << " tau " << tau << " abs " << r.max_abs;
  }
}

TEST(Gradients, FixedEpsilonDepthLoss) {
  Rng rng(8);
  const auto c = depth_case(rng, 10, 10);
  LossWeights w;
  w.tau = 0.0;
  w.epsilon = EpsilonPolicy::fixed(0.05);
  const auto ref = as_map(c.ref, 10, 10);
  auto d = ad::Tensor::from({10, 10}, c.d, true);
  const auto r = oracle::fd_check([&](ad::Tape& t) { return depth_loss(t, d, c.alpha, ref, w).loss; }, d);
  EXPECT_LT(r.max_rel, 1e-5);
}

TEST(Gradients, HingeLossesMatchFiniteDifference) {
  Rng rng(9);
  auto real = oracle::random_tensor(rng, {2, 1, 3, 3}, -2.0, 2.0);
  auto fake = oracle::random_tensor(rng, {2, 1, 3, 3}, -2.0, 2.0);
  for (auto* t : {&real, &fake})
    for (auto& v : t->data())
      if (std::abs(std::abs(v) - 1.0) < 1e-2) v += 0.05;
  EXPECT_LT(oracle::fd_check([&](ad::Tape& t) { return discriminator_hinge(t, real, fake); }, real).max_rel, 1e-5);
  EXPECT_LT(oracle::fd_check([&](ad::Tape& t) { return discriminator_hinge(t, real, fake); }, fake).max_rel, 1e-5);
  EXPECT_LT(oracle::fd_check([&](ad::Tape& t) { return generator_hinge(t, fake); }, fake).max_rel, 1e-5);

  Rng drng(10);
  Discriminator disc(drng);
  auto img = oracle::random_tensor(rng, {1, 3, 32, 32}, 0.0, 1.0);
  std::vector<std::size_t> entries;
  for (std::size_t i = 0; i < img.numel(); i += 37) entries.push_back(i);
  const auto r = oracle::fd_check([&](ad::Tape& t) { return gan_generator_loss(t, disc, img); }, img, 1e-5, entries);
  EXPECT_LT(r.max_rel, 1e-5);
}

TEST(DepthNormalization, HandValues) {
  const std::vector<double> d{1, 2, 3};
  const auto layout = patch_layout(3, 1, {true, true, true}, 8);
  const auto ln = depth_normalize_local(d, layout, EpsilonPolicy::fixed(0.0));
  EXPECT_NEAR(ln[0], -1.2247, 1e-4);
  EXPECT_NEAR(ln[1], 0.0, 1e-12);
  EXPECT_NEAR(ln[2], 1.2247, 1e-4);
}

TEST(DepthNormalization, ConstantPatchIsZero) {
  std::vector<double> full(16 * 4, 3.5);
  const auto layout = patch_layout(16, 4, std::vector<bool>(64, true), 8);
  for (std::size_t y = 0; y < 4; ++y) full[y * 16 + 1] = 7.0;
  const auto ln = depth_normalize_local(full, layout, EpsilonPolicy{});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 8; x < 16; ++x) EXPECT_EQ(ln[y * 16 + x], 0.0);
}

TEST(DepthNormalization, AffineInvarianceWithZeroEpsilon) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3.0, 3.0);
    std::vector<double> d(100), e(100);
    for (std::size_t i = 0; i < 100; ++i) {
      d[i] = rng.uniform(1.0, 4.0);
      e[i] = a * d[i] + b;
    }
    std::vector<bool> mask(100, true);
    mask[13] = mask[57] = false;
    const auto layout = patch_layout(10, 10, mask, 8);
    const auto eps = EpsilonPolicy::fixed(0.0);
    const auto l1 = depth_normalize_local(d, layout, eps), l2 = depth_normalize_local(e, layout, eps);
    const auto g1 = depth_normalize_global(d, layout, eps), g2 = depth_normalize_global(e, layout, eps);
    for (std::size_t i = 0; i < 100; ++i) {
      EXPECT_NEAR(l1[i], l2[i], 1e-9);
      EXPECT_NEAR(g1[i], g2[i], 1e-9);
    }
  }
}

TEST(TruncatedL2, Values) {
  EXPECT_EQ(truncated_l2(2.0, 0.0, 1.0), 4.0);
  EXPECT_EQ(truncated_l2(0.5, 0.0, 0.5), 0.0);
  EXPECT_EQ(truncated_l2(0.3, 0.1, 0.5), 0.0);
  EXPECT_NEAR(truncated_l2(0.3, 0.1, 0.0), 0.04, 1e-15);
  EXPECT_EQ(truncated_l2(0.3, 0.3, 0.0), 0.0);
  EXPECT_EQ(truncated_l2(-1.0, 1.0, 0.5), 4.0);
}

TEST(DepthLoss, MatchesTermByTermOracle) {
  Rng rng(12);
  for (auto [W, H] : {std::pair<std::size_t, std::size_t>{8, 8}, {13, 9}, {20, 17}}) {
    const auto c = depth_case(rng, W, H);
    LossWeights w;
    ad::Tape t;
    const auto got = depth_loss(t, ad::Tensor::from({H, W}, c.d), c.alpha, as_map(c.ref, W, H), w);
    const auto want = oracle::depth_loss(c.d, c.ref, c.alpha, W, H, relative_eps(0.01), w.tau, 1.0, 0.5);
    EXPECT_NEAR(got.loss.item(), want.loss, 1e-12);
    EXPECT_EQ(got.valid_pixels, want.valid);
  }
}

TEST(DepthLoss, IdentityAndAffineExamples) {
  Rng rng(13);
  const auto c = depth_case(rng, 12, 12);
  LossWeights w;
  ad::Tape t;
  EXPECT_EQ(depth_loss(t, ad::Tensor::from({12, 12}, c.ref), c.alpha, as_map(c.ref, 12, 12), w).loss.item(), 0.0);
  std::vector<double> affine(c.ref.size());
  for (std::size_t i = 0; i < affine.size(); ++i) affine[i] = 2.0 * c.ref[i] + 5.0;
  w.tau = 0.0;
  w.epsilon = EpsilonPolicy::fixed(0.0);
  EXPECT_NEAR(depth_loss(t, ad::Tensor::from({12, 12}, affine), c.alpha, as_map(c.ref, 12, 12), w).loss.item(), 0.0, 1e-20);
}

TEST(DepthLoss, NoValidPixelsFlagged) {
  ad::Tape t;
  const auto r = depth_loss(t, ad::Tensor::zeros({4, 4}, true), std::vector<double>(16, 1.0), Map2D(4, 4, 1, 0.0), LossWeights{});
  EXPECT_TRUE(r.no_valid_pixels);
  EXPECT_EQ(r.loss.item(), 0.0);
}

TEST(DepthLoss, UniformOffsetIsInvisibleToLossButNotMetric) {
  Rng rng(14);
  const auto c = depth_case(rng, 12, 12);
  std::vector<double> shifted(c.ref);
  for (auto& v : shifted) v += 0.3;
  ad::Tape t;
  const auto ref = as_map(c.ref, 12, 12);
  const std::vector<double> opaque(144, 1.0);
  EXPECT_NEAR(depth_loss(t, ad::Tensor::from({12, 12}, shifted), opaque, ref, LossWeights{}).loss.item(), 0.0, 1e-20);
  EXPECT_EQ(depth_psnr(ref, ref), kPsnrCap);
  EXPECT_LT(depth_psnr(as_map(shifted, 12, 12), ref), 30.0);
}

TEST(Hinge, FixedPoints) {
  ad::Tape t;
  const auto ones = ad::Tensor::full({2, 1, 4, 4}, 1.0);
  const auto minus = ad::Tensor::full({2, 1, 4, 4}, -1.0);
  const auto zero = ad::Tensor::zeros({2, 1, 4, 4});
  EXPECT_EQ(discriminator_hinge(t, ones, minus).item(), 0.0);
  EXPECT_EQ(discriminator_hinge(t, zero, zero).item(), 1.0);
  EXPECT_NEAR(generator_hinge(t, ad::Tensor::full({1, 1, 2, 2}, 0.3)).item(), -0.3, 1e-15);
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    const auto r = oracle::random_tensor(rng, {1, 1, 3, 3}, -3.0, 3.0, false);
    const auto f = oracle::random_tensor(rng, {1, 1, 3, 3}, -3.0, 3.0, false);
    EXPECT_GE(discriminator_hinge(t, r, f).item(), 0.0);
  }
}

TEST(Discriminator, OutputShapeAndMinimumSize) {
  Rng rng(16);
  Discriminator disc(rng);
  ad::Tape t;
  EXPECT_EQ(disc.forward(t, ad::Tensor::zeros({2, 3, 32, 32})).shape(), (ad::Shape{2, 1, 1, 1}));
  EXPECT_EQ(disc.forward(t, ad::Tensor::zeros({1, 3, 64, 48})).shape(), (ad::Shape{1, 1, 5, 3}));
  EXPECT_THROW(disc.forward(t, ad::Tensor::zeros({1, 3, 31, 64})), InvalidArgument);
}

TEST(Discriminator, GradientRouting) {
  Rng rng(17);
  Discriminator disc(rng);
  auto fake = oracle::random_tensor(rng, {1, 3, 32, 32}, 0.0, 1.0);
  const auto real = oracle::random_tensor(rng, {1, 3, 32, 32}, 0.0, 1.0, false);
  {
    ad::Tape t;
    t.backward(gan_generator_loss(t, disc, fake));
    EXPECT_TRUE(fake.has_grad());
    for (const auto& p : disc.parameters()) EXPECT_FALSE(p.has_grad());
  }
  fake.zero_grad();
  {
    ad::Tape t;
    t.backward(gan_discriminator_loss(t, disc, real, fake));
    EXPECT_FALSE(fake.has_grad());
    for (const auto& p : disc.parameters()) EXPECT_TRUE(p.has_grad());
  }
}

TEST(TotalLoss, Schedule) {
  ad::Tape t;
  const auto rec = ad::Tensor::scalar(1.0);
  const auto depth = ad::Tensor::scalar(2.0);
  const auto gan = ad::Tensor::scalar(-0.4);
  LossWeights w;
  EXPECT_DOUBLE_EQ(total_generator_loss(t, rec, depth, gan, w, 499).item(), 1.0 + 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(total_generator_loss(t, rec, depth, gan, w, 500).item(), 1.0 + 0.1 * 2.0 + 0.05 * -0.4);
  w.depth = w.gan = 0.0;
  EXPECT_EQ(total_generator_loss(t, rec, depth, gan, w, 900).item(), 1.0);
  EXPECT_EQ(total_generator_loss(t, rec, ad::Tensor{}, ad::Tensor{}, LossWeights{}, 900).item(), 1.0);
}

TEST(LossWeights, DefaultsAndValidation) {
  LossWeights w;
  EXPECT_EQ(w.depth, 0.1);
  EXPECT_EQ(w.gan, 0.05);
  EXPECT_EQ(w.gan_start_iter, 500u);
  EXPECT_EQ(w.l1, 0.8);
  EXPECT_EQ(w.dssim, 0.2);
  w.validate();
  w.tau = -1.0;
  EXPECT_THROW(w.validate(), InvalidArgument);
}

TEST(Metrics, Examples) {
  Rng rng(18);
  const auto a = random_image(rng, 10, 10);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  Image x(4, 4, 3, 0.5), y(4, 4, 3, 0.6);
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-9);
  EXPECT_THROW(psnr(x, Image(4, 5, 3)), ShapeError);
}

TEST(Metrics, Sharpness) {
  Image flat(8, 8, 3, 0.4);
  EXPECT_EQ(laplacian_sharpness(flat), 0.0);
  Image checker(8, 8, 3);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) checker.at(x, y, c) = (x + y) % 2;
  // interior Laplacian alternates between -4 and +4
  EXPECT_NEAR(laplacian_sharpness(checker), 16.0, 1e-9);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "voxsplat/autodiff/adam.hpp"
#include "voxsplat/features/feature_volume.hpp"

using namespace voxsplat;
using namespace voxsplat::features;
using geometry::Camera;
using geometry::Vec3;

namespace {

constexpr std::size_t kImage = 32;

std::shared_ptr<const geometry::VoxelGrid> small_grid() {
  std::vector<std::int64_t> lin;
  for (std::int64_t i = 0; i < 64; i += 3) lin.push_back(i);
  return std::make_shared<geometry::VoxelGrid>(4, Vec3(-1, -1, -1), 0.5, lin);
}

Camera camera_from(const Vec3& eye) {
  Camera c;
  c.fx = c.fy = 30.0;
  c.cx = c.cy = 15.5;
  c.width = c.height = kImage;
  c.world_to_camera = geometry::look_at(eye, Vec3::Zero());
  return c;
}

FeatureMap random_map(std::uint64_t seed, std::uint32_t id = 0, std::size_t fw = 8, std::size_t fh = 6, std::size_t d = 3) {
  Rng rng(seed);
  FeatureMap fm;
  fm.view_id = id;
  fm.feature_width = fw;
  fm.feature_height = fh;
  fm.dim = d;
  fm.image_width = fm.image_height = kImage;
  fm.values.resize(fw * fh * d);
  for (auto& v : fm.values) v = rng.uniform(-1.0, 1.0);
  return fm;
}

Map2D empty_depth() { return Map2D(kImage, kImage, 1, 0.0); }

// Independent clamped bilinear lookup straight from texel centers.
std::vector<double> lookup(const FeatureMap& fm, const Camera& cam, const Vec3& p) {
  const Vec3 q = cam.to_camera(p);
  const double u = cam.cx + cam.fx * q.x() / q.z();
  const double v = cam.cy + cam.fy * q.y() / q.z();
  double x = (u + 0.5) * fm.feature_width / cam.width - 0.5;
  double y = (v + 0.5) * fm.feature_height / cam.height - 0.5;
  x = std::clamp(x, 0.0, fm.feature_width - 1.0);
  y = std::clamp(y, 0.0, fm.feature_height - 1.0);
  const auto x0 = static_cast<std::size_t>(std::min(std::floor(x), fm.feature_width - 2.0));
  const auto y0 = static_cast<std::size_t>(std::min(std::floor(y), fm.feature_height - 2.0));
  const double fx = x - x0, fy = y - y0;
  std::vector<double> out(fm.dim);
  for (std::size_t d = 0; d < fm.dim; ++d) {
    const auto at = [&](std::size_t xx, std::size_t yy) { return fm.values[(yy * fm.feature_width + xx) * fm.dim + d]; };
    out[d] = (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
             fx * fy * at(x0 + 1, y0 + 1);
  }
  return out;
}

}  // namespace

TEST(FeatureCoords, HalfTexelConvention) {
  const auto a = image_to_feature_coords(-0.5, -0.5, 32, 32, 8, 8);
  EXPECT_DOUBLE_EQ(a.x, -0.5);
  EXPECT_DOUBLE_EQ(a.y, -0.5);
  const auto b = image_to_feature_coords(31.5, 15.5, 32, 32, 8, 8);
  EXPECT_DOUBLE_EQ(b.x, 7.5);
  EXPECT_DOUBLE_EQ(b.y, 3.5);
  // texel centers land on integers
  const auto c = image_to_feature_coords(1.5, 5.5, 32, 32, 8, 8);
  EXPECT_DOUBLE_EQ(c.x, 0.0);
  EXPECT_DOUBLE_EQ(c.y, 1.0);
}

TEST(Backproject, SingleViewMatchesDirectLookup) {
  const auto grid = small_grid();
  const auto cam = camera_from({0.3, -4.0, 1.0});
  const auto fm = random_map(1);
  const auto vol = backproject(grid, {fm}, {cam}, {empty_depth()});
  ASSERT_EQ(vol.size(), grid->size());
  for (std::size_t p = 0; p < grid->size(); ++p) {
    ASSERT_EQ(vol.view_counts[p], 1u);
    const auto want = lookup(fm, cam, grid->center(p));
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(vol.base.data()[p * 3 + d], want[d], 1e-12);
  }
}

TEST(Backproject, IdenticalViewsGiveSingleViewValue) {
  const auto grid = small_grid();
  const auto cam = camera_from({0.3, -4.0, 1.0});
  const auto fm = random_map(2);
  const auto one = backproject(grid, {fm}, {cam}, {empty_depth()});
  const auto three = backproject(grid, {fm, fm, fm}, {cam, cam, cam}, {empty_depth(), empty_depth(), empty_depth()});
  for (std::size_t i = 0; i < one.base.numel(); ++i) EXPECT_NEAR(three.base.data()[i], one.base.data()[i], 1e-14);
  EXPECT_EQ(three.view_counts[0], 3u);
}

TEST(Backproject, OppositeFeaturesCancel) {
  const auto grid = small_grid();
  const auto cam = camera_from({2.0, -3.0, 1.5});
  auto fm = random_map(3);
  auto neg = fm;
  for (auto& v : neg.values) v = -v;
  const auto vol = backproject(grid, {fm, neg}, {cam, cam}, {empty_depth(), empty_depth()});
  for (double v : vol.base.values()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Backproject, OccludedVoxelsAreSkipped) {
  const auto grid = small_grid();
  const auto cam = camera_from({0.0, -4.0, 0.0});
  const Map2D wall(kImage, kImage, 1, 1.0);  // a surface one unit in front of the camera
  const auto vol = backproject(grid, {random_map(4)}, {cam}, {wall});
  for (std::size_t p = 0; p < vol.size(); ++p) {
    EXPECT_EQ(vol.view_counts[p], 0u);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(vol.base.data()[p * 3 + d], 0.0);
  }
}

TEST(Backproject, ViewOrderDoesNotMatter) {
  const auto grid = small_grid();
  const std::vector<Camera> cams{camera_from({0, -4, 1}), camera_from({4, 0, 1}), camera_from({-3, 3, 2})};
  const std::vector<FeatureMap> maps{random_map(5), random_map(6), random_map(7)};
  const std::vector<Map2D> depths(3, empty_depth());
  const auto a = backproject(grid, maps, cams, depths);
  const auto b = backproject(grid, {maps[2], maps[0], maps[1]}, {cams[2], cams[0], cams[1]}, depths);
  EXPECT_EQ(a.view_counts, b.view_counts);
  for (std::size_t i = 0; i < a.base.numel(); ++i) EXPECT_NEAR(a.base.data()[i], b.base.data()[i], 1e-14);
}

TEST(Backproject, NonContributingViewChangesNothing) {
  const auto grid = small_grid();
  const auto cam = camera_from({0, -4, 1});
  const auto away = [] {
    Camera c = camera_from({0, -4, 1});
    c.world_to_camera = geometry::look_at({0, -4, 1}, {0, -8, 1});
    return c;
  }();
  const auto a = backproject(grid, {random_map(8)}, {cam}, {empty_depth()});
  const auto b = backproject(grid, {random_map(8), random_map(9)}, {cam, away}, {empty_depth(), empty_depth()});
  EXPECT_EQ(a.view_counts, b.view_counts);
  EXPECT_EQ(a.base.values(), b.base.values());
}

TEST(Backproject, RejectsMismatchedInputs) {
  const auto grid = small_grid();
  const auto cam = camera_from({0, -4, 1});
  EXPECT_THROW(backproject(grid, {random_map(1)}, {cam, cam}, {empty_depth()}), ShapeError);
  EXPECT_THROW(backproject(grid, {random_map(1, 0, 8, 6, 3), random_map(2, 1, 8, 6, 4)}, {cam, cam},
                           {empty_depth(), empty_depth()}),
               ShapeError);
  EXPECT_THROW(backproject(grid, {}, {}, {}), ShapeError);
}

TEST(Refined, EqualsBaseAtZeroResidual) {
  const auto vol = backproject(small_grid(), {random_map(10)}, {camera_from({0, -4, 1})}, {empty_depth()});
  ad::Tape t;
  EXPECT_EQ(refined(t, vol).values(), vol.base.values());
  EXPECT_EQ(refined(t, vol, false).values(), vol.base.values());
}

TEST(Refined, ResidualGradientOfSquaredNorm) {
  auto vol = backproject(small_grid(), {random_map(11)}, {camera_from({0, -4, 1})}, {empty_depth()});
  Rng rng(12);
  for (auto& v : vol.residual.data()) v = rng.uniform(-0.2, 0.2);
  ad::Tape t;
  const auto r = refined(t, vol);
  t.backward(ad::sum(t, ad::mul(t, r, r)));
  const auto g = vol.residual.grad_values();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], 2.0 * r.data()[i], 1e-14);
  EXPECT_FALSE(vol.base.requires_grad());
}

TEST(Refined, AdamStepShrinksNorm) {
  auto vol = backproject(small_grid(), {random_map(13)}, {camera_from({0, -4, 1})}, {empty_depth()});
  ad::Adam opt({vol.residual}, ad::AdamOptions{1e-3});
  const auto norm = [&] {
    ad::Tape t;
    const auto r = refined(t, vol);
    return ad::sum(t, ad::mul(t, r, r));
  };
  const double before = norm().item();
  ad::Tape t;
  const auto r = refined(t, vol);
  t.backward(ad::sum(t, ad::mul(t, r, r)));
  opt.step();
  EXPECT_LT(norm().item(), before);
}

TEST(FeatureMapFormat, RoundTripAndLayout) {
  auto fm = random_map(14, 7, 5, 4, 2);
  fm.image_width = 40;
  fm.image_height = 30;
  const auto bytes = encode_feature_map(fm);
  EXPECT_EQ(bytes.size(), 4u + 4u * 7u + 5u * 4u * 2u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GDFV");
  const auto back = decode_feature_map(bytes, "mem");
  EXPECT_EQ(back.view_id, 7u);
  EXPECT_EQ(back.feature_width, 5u);
  EXPECT_EQ(back.feature_height, 4u);
  EXPECT_EQ(back.dim, 2u);
  EXPECT_EQ(back.image_width, 40u);
  EXPECT_EQ(back.image_height, 30u);
  for (std::size_t i = 0; i < fm.values.size(); ++i) {
    EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(fm.values[i])));
  }
}

TEST(FeatureMapFormat, RejectsCorruptFiles) {
  auto bytes = encode_feature_map(random_map(15));
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_feature_map(bad, "mem"), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_feature_map(bytes, "mem"), FormatError);
}

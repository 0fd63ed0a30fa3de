#include <gtest/gtest.h>

#include <algorithm>

#include "voxsplat/core/rng.hpp"
#include "voxsplat/filter/pseudo_gt.hpp"
#include "voxsplat/geometry/coarse_render.hpp"
#include "voxsplat/pipeline/synth.hpp"

using namespace voxsplat;
using namespace voxsplat::filter;

namespace {

// Colored rectangle [x0, x1) x [y0, y1) on a white canvas.
Image rectangle_image(std::size_t W, std::size_t H, std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1) {
  Image img(W, H, 3, 1.0);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      img.at(x, y, 0) = 0.2;
      img.at(x, y, 1) = 0.5;
      img.at(x, y, 2) = 0.3;
    }
  return img;
}

Map2D rectangle_mask(std::size_t W, std::size_t H, std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1) {
  Map2D m(W, H, 1, 0.0);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.at(x, y) = 1.0;
  return m;
}

std::vector<CandidateView> candidates(Rng& rng, std::size_t n) {
  std::vector<CandidateView> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({static_cast<std::uint32_t>(i), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  return c;
}

}  // namespace

// Pixel-center render of the coarse model: depth-shaded gray on white.
static Image shaded_coarse(const geometry::CoarseRender& coarse) {
  const auto& d = coarse.depth;
  double lo = 1e300, hi = 0.0;
  for (double z : d.data)
    if (z > 0.0) lo = std::min(lo, z), hi = std::max(hi, z);
  Image img(d.width, d.height, 3, 1.0);
  for (std::size_t i = 0; i < d.pixels(); ++i) {
    if (coarse.silhouette.data[i] <= 0.5) continue;
    const double g = 0.2 + 0.5 * (d.data[i] - lo) / std::max(hi - lo, 1e-9);
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = g;
  }
  return img;
}

TEST(GeometricScore, CoarseModelRendersAreSelfConsistent) {
  pipeline::SynthOptions opt;
  opt.scene = pipeline::Scene::kTerrace;
  opt.noise = 0.0;
  opt.views = 6;
  opt.image_size = 48;
  const auto ds = pipeline::synthesize(opt);
  for (std::size_t v = 0; v < ds.cameras.size(); ++v) {
    const auto coarse = geometry::render_coarse(ds.scene.mesh, ds.cameras[v]);
    EXPECT_GE(geometric_score(shaded_coarse(coarse), coarse.silhouette), 0.95) << "view " << v;
    // supersampled textured renders only add partially covered rim pixels
    const auto fg = estimate_foreground(ds.clean[v]);
    for (std::size_t i = 0; i < fg.size(); ++i)
      if (coarse.silhouette.data[i] > 0.5) {
        EXPECT_TRUE(fg[i]) << "view " << v << " pixel " << i;
      }
  }
}

TEST(GeometricScore, PureBackgroundScoresZero) {
  const Image white(32, 32, 3, 1.0);
  EXPECT_EQ(geometric_score(white, rectangle_mask(32, 32, 8, 24, 8, 24)), 0.0);
}

TEST(GeometricScore, HalfWidthShift) {
  const auto sil = rectangle_mask(40, 30, 8, 24, 6, 22);
  // foreground moved right by 8 of its 16 columns: IoU = 8 / 24
  const double s = geometric_score(rectangle_image(40, 30, 16, 32, 6, 22), sil);
  EXPECT_NEAR(s, 1.0 / 3.0, 1e-12);
  EXPECT_LT(s, 0.4);
}

TEST(GeometricScore, ExactMatchIsOne) {
  const auto sil = rectangle_mask(20, 20, 3, 12, 5, 17);
  EXPECT_EQ(geometric_score(rectangle_image(20, 20, 3, 12, 5, 17), sil), 1.0);
  EXPECT_LT(geometric_score(rectangle_image(20, 20, 3, 13, 5, 17), sil), 1.0);
}

TEST(GeometricScore, BackgroundIsTheDominantBorderColor) {
  // dark background, light object
  Image img(24, 24, 3, 0.05);
  for (std::size_t y = 6; y < 18; ++y)
    for (std::size_t x = 6; x < 18; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.9;
  EXPECT_EQ(geometric_score(img, rectangle_mask(24, 24, 6, 18, 6, 18)), 1.0);
}

TEST(SelectViews, TopCombinedScores) {
  std::vector<CandidateView> c;
  for (std::uint32_t i = 0; i < 10; ++i) c.push_back({i, 0.5 + 0.04 * i, 0.9 - 0.01 * i});
  const auto sel = select_views(c, Thresholds{}, 4);
  EXPECT_EQ(sel.selected, (std::vector<std::uint32_t>{9, 8, 7, 6}));
  EXPECT_FALSE(sel.insufficient);
}

TEST(SelectViews, BelowGeometricThresholdIsExcluded) {
  std::vector<CandidateView> c{{0, 1.0, 0.49}, {1, 0.3, 0.6}, {2, 0.6, 0.8}};
  const auto sel = select_views(c, Thresholds{0.25, 0.5}, 3);
  EXPECT_EQ(sel.selected, (std::vector<std::uint32_t>{2, 1}));
  EXPECT_TRUE(sel.insufficient);
  ASSERT_FALSE(sel.warnings.empty());
  EXPECT_NE(sel.warnings.back().find("InsufficientViews"), std::string::npos);
}

TEST(SelectViews, MissingSemanticScoreWarnsAndCountsAsOne) {
  std::vector<CandidateView> c{{0, std::nullopt, 0.7}, {1, 0.8, 0.8}};
  const auto sel = select_views(c, Thresholds{}, 1);
  EXPECT_EQ(sel.selected, (std::vector<std::uint32_t>{0}));
  ASSERT_EQ(sel.warnings.size(), 1u);
  EXPECT_NE(sel.warnings[0].find("view 0"), std::string::npos);
}

TEST(SelectViews, TiesGoToLowerViewId) {
  std::vector<CandidateView> c{{5, 0.8, 0.8}, {2, 0.8, 0.8}, {9, 0.8, 0.8}};
  EXPECT_EQ(select_views(c, Thresholds{}, 2).selected, (std::vector<std::uint32_t>{2, 5}));
}

TEST(SelectViews, LargeSceneKeepsTwelveViews) {
  Rng rng(1);
  std::vector<CandidateView> c;
  for (std::uint32_t i = 0; i < 20; ++i) c.push_back({i, rng.uniform(0.5, 1.0), rng.uniform(0.6, 1.0)});
  EXPECT_EQ(select_views(c, Thresholds{}, 12).selected.size(), 12u);
}

TEST(SelectViews, RejectsZeroTarget) { EXPECT_THROW(select_views({}, Thresholds{}, 0), InvalidArgument); }

TEST(SelectViews, OrderInvariantAndIdempotent) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = candidates(rng, 15);
    const auto a = select_views(c, Thresholds{0.3, 0.3}, 6);
    std::reverse(c.begin(), c.end());
    std::rotate(c.begin(), c.begin() + 4, c.end());
    const auto b = select_views(c, Thresholds{0.3, 0.3}, 6);
    EXPECT_EQ(a.selected, b.selected);
    std::vector<CandidateView> kept;
    for (const auto& cv : c)
      if (std::find(a.selected.begin(), a.selected.end(), cv.view_id) != a.selected.end()) kept.push_back(cv);
    EXPECT_EQ(select_views(kept, Thresholds{0.3, 0.3}, 6).selected, a.selected);
  }
}

TEST(SelectViews, LoweringThresholdsNeverShrinksSurvivors) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = candidates(rng, 20);
    const double s = rng.uniform(0.2, 0.8), g = rng.uniform(0.2, 0.8);
    const auto strict = select_views(c, Thresholds{s, g}, 20).selected;
    const auto loose = select_views(c, Thresholds{s * 0.8, g * 0.7}, 20).selected;
    for (auto id : strict) EXPECT_NE(std::find(loose.begin(), loose.end(), id), loose.end());
    EXPECT_GE(loose.size(), strict.size());
  }
}

TEST(Scores, ParseAndValidate) {
  const auto s = parse_scores(R"([{"view_id": 3, "score": 0.75}, {"view_id": 0, "score": 1}])");
  EXPECT_EQ(s.at(3), 0.75);
  EXPECT_EQ(s.at(0), 1.0);
  EXPECT_THROW(parse_scores("{"), FormatError);
  EXPECT_THROW(parse_scores(R"({"view_id": 1})"), FormatError);
  EXPECT_THROW(parse_scores(R"([{"view_id": 1, "score": 1.5}])"), FormatError);
  EXPECT_THROW(parse_scores(R"([{"view_id": -1, "score": 0.5}])"), FormatError);
  EXPECT_THROW(parse_scores(R"([{"score": 0.5}])"), FormatError);
}

TEST(Scores, RoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "voxsplat_scores_test.json").string();
  const std::map<std::uint32_t, double> s{{0, 0.125}, {7, 0.5}};
  save_scores(path, s);
  EXPECT_EQ(load_scores(path), s);
  std::filesystem::remove(path);
  EXPECT_THROW(load_scores(path), IoError);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "defletter/font.hpp"
#include "defletter/raster.hpp"
#include "support.hpp"

using namespace defletter;
using namespace testing_support;

namespace {

Font font_of(const std::vector<std::uint8_t>& bytes) { return Font::from_bytes(bytes); }

std::vector<std::vector<std::pair<double, double>>> as_pairs(const std::vector<Polyline>& lines) {
  std::vector<std::vector<std::pair<double, double>>> out;
  for (const auto& l : lines) {
    out.emplace_back();
    for (const auto& p : l) out.back().emplace_back(p.x, p.y);
  }
  return out;
}

double shoelace(const Polyline& p) {
  double a = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return a / 2;
}

}  // namespace

TEST(Letter, RoundTripsAllUppercase) {
  for (char c = 'A'; c <= 'Z'; ++c) {
    Letter l = Letter::from_char(c);
    EXPECT_EQ(l.to_char(), c);
    EXPECT_EQ(l.index(), c - 'A');
  }
  EXPECT_THROW(Letter::from_char('a'), Error);
  EXPECT_THROW(Letter(26), Error);
  EXPECT_THROW(Letter(-1), Error);
}

TEST(GlyphImage, DefaultIsBackgroundAndBinary) {
  GlyphImage img;
  EXPECT_TRUE(img.is_binary());
  EXPECT_TRUE(img.in_range());
  EXPECT_EQ(img.ink_fraction(), 0.0);
  img.at(0, 0) = 0.5f;
  EXPECT_FALSE(img.is_binary());
  img.at(0, 0) = 1.5f;
  EXPECT_FALSE(img.in_range());
}

TEST(Font, ParsesSyntheticTrueType) {
  Font f = font_of(rectangle_font(1000, 500));
  EXPECT_EQ(f.units_per_em(), 1000);
  EXPECT_EQ(f.num_glyphs(), 27);
  EXPECT_TRUE(f.glyph_index(U'A').has_value());
  EXPECT_FALSE(f.glyph_index(U'a').has_value());
  auto outline = f.outline(U'Q');
  ASSERT_EQ(outline.contours.size(), 1u);
  EXPECT_EQ(outline.contours[0].size(), 4u);
}

TEST(Font, MissingGlyphIsReported) {
  auto bytes = build_ttf({{'A', {{{0, 0}, {0, 100}, {100, 100}, {100, 0}}}}});
  Font f = font_of(bytes);
  try {
    f.outline(U'B');
    FAIL() << "expected MissingGlyph";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGlyph);
  }
}

TEST(Font, GarbageAndTruncatedFilesAreUnparseable) {
  auto expect_unparseable = [](std::vector<std::uint8_t> bytes) {
    try {
      Font::from_bytes(std::move(bytes));
      FAIL() << "expected UnparseableFont";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::UnparseableFont);
    }
  };
  expect_unparseable({1, 2, 3});
  expect_unparseable(std::vector<std::uint8_t>(64, 0xAB));
  auto good = rectangle_font(100, 100);
  expect_unparseable(std::vector<std::uint8_t>(good.begin(), good.begin() + 40));
  auto cff = good;
  cff[0] = 'O', cff[1] = 'T', cff[2] = 'T', cff[3] = 'O';
  expect_unparseable(cff);
}

TEST(Raster, SquareGlyphFillsTheCentredFitBox) {
  auto img = rasterize_glyph(font_of(rectangle_font(1000, 1000)), Letter::from_char('A'));
  for (int r = 0; r < kCanvas; ++r)
    for (int c = 0; c < kCanvas; ++c) {
      const bool inside = r >= 4 && r < 60 && c >= 4 && c < 60;
      ASSERT_EQ(img.at(r, c), inside ? kInk : kBackground) << r << "," << c;
    }
}

TEST(Raster, WideRectangleKeepsAspectRatio) {
  auto img = rasterize_glyph(font_of(rectangle_font(1000, 500)), Letter::from_char('M'));
  for (int r = 0; r < kCanvas; ++r)
    for (int c = 0; c < kCanvas; ++c) {
      const bool inside = r >= 18 && r < 46 && c >= 4 && c < 60;
      ASSERT_EQ(img.at(r, c), inside ? kInk : kBackground) << r << "," << c;
    }
}

TEST(Raster, LayoutMapsBoundingBoxOntoFitSquare) {
  // Triangle with apex up; y grows upward in font units and downward on the canvas.
  auto bytes = build_ttf({{'A', {{{0, 0}, {500, 800}, {1000, 0}}}}});
  auto lines = layout_glyph(font_of(bytes), Letter::from_char('A'));
  ASSERT_EQ(lines.size(), 1u);
  const double s = 56.0 / 1000.0;
  const std::vector<std::pair<double, double>> expected{
      {4, 32 + 400 * s}, {32, 32 - 400 * s}, {60, 32 + 400 * s}};
  ASSERT_GE(lines[0].size(), 3u);
  for (const auto& [x, y] : expected) {
    bool found = false;
    for (const auto& p : lines[0]) found |= std::abs(p.x - x) < 1e-9 && std::abs(p.y - y) < 1e-9;
    EXPECT_TRUE(found) << x << "," << y;
  }
}

TEST(Raster, AreaCoverageMatchesSupersamplingOracle) {
  auto bytes = build_ttf({{'A', {{{0, 0}, {430, 800}, {1000, 130}}, {{100, 500}, {300, 700}, {250, 300}}}}});
  auto lines = layout_glyph(font_of(bytes), Letter::from_char('A'));
  auto cov = area_coverage(lines);
  auto polys = as_pairs(lines);
  constexpr int kSamples = 128;
  double worst = 0;
  for (int r = 0; r < kCanvas; r += 3)
    for (int c = 0; c < kCanvas; c += 3) {
      double oracle = supersampled_coverage(polys, r, c, kSamples);
      worst = std::max(worst, std::abs(oracle - cov[static_cast<size_t>(r * kCanvas + c)]));
    }
  EXPECT_LT(worst, 0.02);
}

TEST(Raster, CoverageSumsToPolygonAreaForRandomConvexPolygons) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> radius(3, 25), centre(28, 36), phase(0, 6.283185307179586);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + trial % 7;
    const double cx = centre(rng), cy = centre(rng), r = radius(rng), p0 = phase(rng);
    Polyline poly;
    for (int i = 0; i < n; ++i) {
      const double a = p0 + 6.283185307179586 * i / n;
      poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    auto cov = area_coverage({poly});
    double sum = 0;
    for (double v : cov) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, std::abs(shoelace(poly)), 1e-9 * 4096) << "trial " << trial;
  }
}

TEST(Raster, NonzeroFillClampsOverlapAndRespectsHoles) {
  Polyline outer{{10, 10}, {50, 10}, {50, 50}, {10, 50}};
  Polyline same{{20, 20}, {40, 20}, {40, 40}, {20, 40}};
  Polyline hole{{20, 20}, {20, 40}, {40, 40}, {40, 20}};
  auto overlap = area_coverage({outer, same});
  EXPECT_DOUBLE_EQ(overlap[30 * kCanvas + 30], 1.0);
  auto holed = area_coverage({outer, hole});
  EXPECT_DOUBLE_EQ(holed[30 * kCanvas + 30], 0.0);
  EXPECT_DOUBLE_EQ(holed[15 * kCanvas + 15], 1.0);
  EXPECT_DOUBLE_EQ(holed[5 * kCanvas + 5], 0.0);
}

TEST(Raster, HalfPixelEdgesGiveHalfCoverage) {
  Polyline rect{{10.5, 10}, {20, 10}, {20, 20}, {10.5, 20}};
  auto cov = area_coverage({rect});
  EXPECT_DOUBLE_EQ(cov[15 * kCanvas + 10], 0.5);
  EXPECT_DOUBLE_EQ(cov[15 * kCanvas + 11], 1.0);
}

TEST(Outline, QuadraticFlatteningConvergesToExactArea) {
  // Region between a quadratic arc and its chord has 2/3 of the control triangle's area.
  auto bytes = build_ttf({{'A', {{{0, 0}, {500, 1000, false}, {1000, 0}}}}});
  auto outline = font_of(bytes).outline(U'A');
  const double exact = 2.0 / 3.0 * 0.5 * 1000 * 1000;
  double previous_error = 1e300;
  for (double tol : {50.0, 5.0, 0.5, 0.05}) {
    auto lines = outline.flatten(tol);
    ASSERT_EQ(lines.size(), 1u);
    const double error = std::abs(std::abs(shoelace(lines[0])) - exact);
    EXPECT_LE(error, tol * 2300) << "tol " << tol;  // deficit bounded by tol times arc length
    EXPECT_LE(error, previous_error);
    previous_error = error;
  }
}

TEST(Raster, DegenerateGlyphIsEmpty) {
  auto bytes = build_ttf({{'A', {{{0, 0}, {500, 500}, {1000, 1000}}}}});
  try {
    rasterize_glyph(font_of(bytes), Letter::from_char('A'));
    FAIL() << "expected EmptyGlyph";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGlyph);
  }
}

TEST(Raster, ToyCorpusRasterizesEveryLetter) {
  int fonts = 0;
  for (const auto& entry : std::filesystem::directory_iterator(data_dir() / "fonts")) {
    if (entry.path().extension() != ".ttf") continue;
    ++fonts;
    Font f = Font::from_file(entry.path());
    for (int c = 0; c < kNumClasses; ++c) {
      auto img = rasterize_glyph(f, Letter(c));
      ASSERT_TRUE(img.is_binary());
      const double ink = img.ink_fraction();
      EXPECT_GT(ink, 0.02) << entry.path() << " " << Letter(c).to_char();
      EXPECT_LT(ink, 0.9) << entry.path() << " " << Letter(c).to_char();
      int rmin = kCanvas, rmax = -1, cmin = kCanvas, cmax = -1;
      for (int r = 0; r < kCanvas; ++r)
        for (int col = 0; col < kCanvas; ++col)
          if (img.at(r, col) == kInk) {
            rmin = std::min(rmin, r), rmax = std::max(rmax, r);
            cmin = std::min(cmin, col), cmax = std::max(cmax, col);
          }
      EXPECT_GE(std::max(rmax - rmin, cmax - cmin) + 1, 54);
      EXPECT_GE(std::min(rmin, cmin), 3);
      EXPECT_LE(std::max(rmax, cmax), 60);
    }
  }
  EXPECT_EQ(fonts, 10);
}

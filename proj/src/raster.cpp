#include "defletter/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace defletter {
namespace {

struct Box {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void add(Point p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

double signed_area(const Polyline& line) {
  double a = 0;
  for (size_t i = 0; i < line.size(); ++i) {
    const Point& p = line[i];
    const Point& q = line[(i + 1) % line.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return a / 2;
}

/// Signed-area accumulation rasterizer: each edge deposits, per scanline, the
/// area it sweeps into the cells it crosses; a running prefix sum then yields
/// the winding-weighted coverage of every pixel.
class Accumulator {
 public:
  Accumulator() : acc_(kPixels + 2, 0.0) {}

  void line(Point p0, Point p1) {
    if (p0.y == p1.y) return;
    double dir = 1.0;
    if (p0.y > p1.y) {
      std::swap(p0, p1);
      dir = -1.0;
    }
    const double dxdy = (p1.x - p0.x) / (p1.y - p0.y);
    double y_top = std::max(p0.y, 0.0);
    double x = p0.x + (y_top - p0.y) * dxdy;
    int row_end = std::min(kCanvas, static_cast<int>(std::ceil(p1.y)));
    for (int row = static_cast<int>(std::floor(y_top)); row < row_end; ++row) {
      double dy = std::min<double>(row + 1, p1.y) - std::max<double>(row, p0.y);
      double x_next = x + dxdy * dy;
      deposit(row, x, x_next, dy * dir);
      x = x_next;
    }
  }

  std::array<double, kPixels> coverage() const {
    std::array<double, kPixels> out{};
    for (int row = 0; row < kCanvas; ++row) {
      double sum = 0;
      for (int col = 0; col < kCanvas; ++col) {
        sum += acc_[static_cast<size_t>(row * kCanvas + col)];
        out[static_cast<size_t>(row * kCanvas + col)] = std::min(1.0, std::abs(sum));
      }
    }
    return out;
  }

 private:
  void add(int row, int col, double v) {
    if (col >= kCanvas) return;  // spills past the row's end carry nothing visible
    acc_[static_cast<size_t>(row * kCanvas + std::max(col, 0))] += v;
  }

  void deposit(int row, double xa, double xb, double d) {
    double x0 = std::clamp(std::min(xa, xb), 0.0, static_cast<double>(kCanvas));
    double x1 = std::clamp(std::max(xa, xb), 0.0, static_cast<double>(kCanvas));
    double x0_floor = std::floor(x0);
    int x0i = static_cast<int>(x0_floor);
    int x1i = static_cast<int>(std::ceil(x1));
    if (x1i <= x0i + 1) {
      double xm = 0.5 * (x0 + x1) - x0_floor;
      add(row, x0i, d * (1 - xm));
      add(row, x0i + 1, d * xm);
      return;
    }
    double s = 1.0 / (x1 - x0);
    double x0f = x0 - x0_floor;
    double a0 = 0.5 * s * (1 - x0f) * (1 - x0f);
    double x1f = x1 - std::ceil(x1) + 1;
    double am = 0.5 * s * x1f * x1f;
    add(row, x0i, d * a0);
    if (x1i == x0i + 2) {
      add(row, x0i + 1, d * (1 - a0 - am));
    } else {
      double a1 = s * (1.5 - x0f);
      add(row, x0i + 1, d * (a1 - a0));
      for (int xi = x0i + 2; xi < x1i - 1; ++xi) add(row, xi, d * s);
      double a2 = a1 + (x1i - x0i - 3) * s;
      add(row, x1i - 1, d * (1 - a2 - am));
    }
    add(row, x1i, d * am);
  }

  std::vector<double> acc_;
};

}  // namespace

std::vector<Polyline> layout_glyph(const Font& font, Letter letter, const RasterOptions& opts) {
  Outline outline = font.outline(letter.codepoint());
  if (outline.empty()) throw Error(ErrorCode::EmptyGlyph, std::string("glyph '") + letter.to_char() + "' has no outline");

  // control points bound the curves, so this scale is a lower bound
  Box rough;
  for (const auto& contour : outline.contours)
    for (const auto& seg : contour) {
      rough.add(seg.from);
      rough.add(seg.to);
      if (seg.quadratic) rough.add(seg.control);
    }
  double extent = std::max(rough.width(), rough.height());
  if (!(extent > 0)) throw Error(ErrorCode::EmptyGlyph, std::string("glyph '") + letter.to_char() + "' has zero extent");

  auto lines = outline.flatten(opts.flatten_tolerance * extent / opts.fit);
  Box box;
  double area = 0;
  for (const auto& line : lines) {
    for (const auto& p : line) box.add(p);
    area += std::abs(signed_area(line));
  }
  extent = std::max(box.width(), box.height());
  if (lines.empty() || !(extent > 0) || area <= 1e-9 * extent * extent)
    throw Error(ErrorCode::EmptyGlyph, std::string("glyph '") + letter.to_char() + "' has zero area");

  const double scale = opts.fit / extent;
  const double cx = (box.min_x + box.max_x) / 2;
  const double cy = (box.min_y + box.max_y) / 2;
  const double half = kCanvas / 2.0;
  for (auto& line : lines)
    for (auto& p : line) p = {half + (p.x - cx) * scale, half - (p.y - cy) * scale};
  return lines;
}

std::array<double, kPixels> area_coverage(const std::vector<Polyline>& polygon) {
  Accumulator acc;
  for (const auto& line : polygon)
    for (size_t i = 0; i < line.size(); ++i) acc.line(line[i], line[(i + 1) % line.size()]);
  return acc.coverage();
}

GlyphImage rasterize_glyph(const Font& font, Letter letter, const RasterOptions& opts) {
  auto coverage = area_coverage(layout_glyph(font, letter, opts));
  GlyphImage img;
  auto px = img.pixels();
  bool any_ink = false;
  for (size_t i = 0; i < coverage.size(); ++i) {
    bool ink = coverage[i] >= opts.coverage_threshold;
    px[i] = ink ? kInk : kBackground;
    any_ink |= ink;
  }
  if (!any_ink) throw Error(ErrorCode::EmptyGlyph, std::string("glyph '") + letter.to_char() + "' has no ink after binarization");
  return img;
}

GlyphImage rasterize_glyph(const std::filesystem::path& font_file, Letter letter, const RasterOptions& opts) {
  return rasterize_glyph(Font::from_file(font_file), letter, opts);
}

}  // namespace defletter

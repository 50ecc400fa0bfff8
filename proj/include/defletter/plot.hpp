#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "defletter/image_io.hpp"

namespace defletter::plot {

enum class Anchor { Start, Middle, End };

struct Rect {
  double x, y, w, h;
  Rgb fill;
  std::optional<Rgb> stroke;
};
struct Line {
  double x0, y0, x1, y1;
  Rgb color;
  double width = 1;
};
struct Text {
  double x, y;  // baseline
  std::string text;
  double size = 10;
  Rgb color{0, 0, 0};
  Anchor anchor = Anchor::Start;
};
struct Polygon {
  std::vector<std::pair<double, double>> points;
  Rgb fill;
  std::optional<Rgb> stroke;
};
struct Circle {
  double x, y, r;
  Rgb fill;
};
struct Glyph {
  double x, y;
  GlyphImage image;
  int scale = 1;
};

using Shape = std::variant<Rect, Line, Text, Polygon, Circle, Glyph>;

/// A backend-neutral drawing: the same shapes render to SVG and to PNG.
class Figure {
 public:
  Figure(int width, int height) : width_(width), height_(height) {}

  template <typename S>
  void add(S shape) {
    shapes_.emplace_back(std::move(shape));
  }

  int width() const { return width_; }
  int height() const { return height_; }

  std::string to_svg(const std::string& comment = "") const;
  Canvas to_canvas() const;

  /// Writes `<stem>.svg` and `<stem>.png`, embedding `provenance` in both.
  void save(const std::filesystem::path& stem, const std::string& provenance = "") const;

 private:
  int width_, height_;
  std::vector<Shape> shapes_;
};

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kGrid{220, 220, 220};
inline constexpr Rgb kBlue{31, 119, 180};
inline constexpr Rgb kOrange{255, 127, 14};
inline constexpr Rgb kRed{214, 39, 40};

/// Heatmap with row/column labels; NaN cells are left blank.
struct HeatmapData {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;
  bool annotate = true;
  int decimals = 0;
};
Figure heatmap(const HeatmapData& data);

/// Two overlaid integer-valued histograms (e.g. original vs generated).
struct HistogramPair {
  std::string title;
  std::vector<int> first;
  std::vector<int> second;
  std::string first_label;
  std::string second_label;
  int max_value = 100;
};
Figure histogram_pair(const HistogramPair& data, int width = 320, int height = 200);
/// Draws `data` into an existing figure's sub-rectangle.
void draw_histogram_pair(Figure& fig, const HistogramPair& data, double x, double y, double w, double h);

struct ScatterPanel {
  std::string title;
  std::vector<double> xs;
  std::vector<double> ys;
};
/// Grid of y-y scatter panels sharing axis range [0, max_axis] with the diagonal drawn.
Figure scatter_grid(const std::vector<ScatterPanel>& panels, int columns, double max_axis);

/// One row per label of glyph images.
Figure gallery(const std::vector<std::pair<std::string, std::vector<GlyphImage>>>& rows, int scale = 1);

}  // namespace defletter::plot

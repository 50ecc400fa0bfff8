#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "defletter/glyph.hpp"

namespace defletter {

struct Rgb {
  std::uint8_t r = 255, g = 255, b = 255;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Minimal raster canvas used for the PNG renderings of plots and galleries.
class Canvas {
 public:
  Canvas(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }

  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const { return pixels_[static_cast<size_t>(y * width_ + x)]; }
  void fill_rect(int x, int y, int w, int h, Rgb c);
  void rect_outline(int x, int y, int w, int h, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  /// 5x7 bitmap text; supports A-Z, 0-9 and a little punctuation. `scale`
  /// multiplies the cell size.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  /// Blits a glyph image with -1 -> white and +1 -> black.
  void glyph(int x, int y, const GlyphImage& img, int scale = 1);

  const std::vector<Rgb>& pixels() const { return pixels_; }

 private:
  int width_, height_;
  std::vector<Rgb> pixels_;
};

/// Writes an 8-bit RGB PNG. `text` entries become tEXt chunks.
void write_png(const std::filesystem::path& path, const Canvas& canvas,
               const std::map<std::string, std::string>& text = {});

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major luminance
};

/// Reads any PNG (palette, gray, RGB, with or without alpha) as 8-bit luminance.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Sequential colour map from white through orange to dark red, t in [0, 1].
Rgb heat_color(double t);

}  // namespace defletter

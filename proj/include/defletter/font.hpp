#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "defletter/error.hpp"

namespace defletter {

struct Point {
  double x = 0;
  double y = 0;
};

/// One piece of a glyph contour: a line when `quadratic` is false, otherwise
/// a quadratic Bezier through `control`.
struct Segment {
  Point from;
  Point control;
  Point to;
  bool quadratic = false;
};

using Contour = std::vector<Segment>;
using Polyline = std::vector<Point>;  // implicitly closed

struct Outline {
  std::vector<Contour> contours;

  bool empty() const { return contours.empty(); }
  /// Flattens every curve so that no chord deviates more than `tolerance`
  /// from its Bezier, in the outline's own units.
  std::vector<Polyline> flatten(double tolerance) const;
};

/// Read-only view over a TrueType (glyf-flavoured sfnt) font. CFF-flavoured
/// OpenType files are rejected as UnparseableFont.
class Font {
 public:
  static Font from_file(const std::filesystem::path& path);
  static Font from_bytes(std::vector<std::uint8_t> bytes);

  std::uint16_t units_per_em() const { return units_per_em_; }
  std::uint16_t num_glyphs() const { return num_glyphs_; }

  std::optional<std::uint16_t> glyph_index(char32_t codepoint) const;

  /// Throws MissingGlyph when the cmap has no entry for the codepoint.
  Outline outline(char32_t codepoint) const;
  Outline outline_for_glyph(std::uint16_t glyph) const;

  std::span<const std::uint8_t> bytes() const { return data_; }

 private:
  struct Table {
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
  };

  Font() = default;
  void parse();
  std::optional<Table> find_table(const char tag[4]) const;
  void append_glyph(std::uint16_t glyph, double xx, double xy, double yx, double yy, double dx, double dy,
                    int depth, Outline& out) const;
  std::pair<std::uint32_t, std::uint32_t> glyph_range(std::uint16_t glyph) const;

  std::vector<std::uint8_t> data_;
  std::uint32_t font_offset_ = 0;
  std::uint16_t units_per_em_ = 0;
  std::uint16_t num_glyphs_ = 0;
  bool long_loca_ = false;
  Table glyf_{};
  Table loca_{};
  std::uint32_t cmap_subtable_ = 0;
  std::uint16_t cmap_format_ = 0;
};

}  // namespace defletter

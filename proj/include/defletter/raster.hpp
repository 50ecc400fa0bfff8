#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "defletter/font.hpp"
#include "defletter/glyph.hpp"

namespace defletter {

struct RasterOptions {
  /// The glyph's bounding box is scaled uniformly to fit a `fit` x `fit`
  /// square centred on the 64x64 canvas.
  double fit = 56.0;
  double coverage_threshold = 0.5;
  /// Curve flattening tolerance in output pixels.
  double flatten_tolerance = 0.01;
};

/// The glyph outline flattened and mapped to pixel coordinates (x right,
/// y down, canvas spanning [0, 64)).
std::vector<Polyline> layout_glyph(const Font& font, Letter letter, const RasterOptions& opts = {});

/// Exact per-pixel area coverage of a polygon set, clamped to [0, 1] with a
/// nonzero-style fill.
std::array<double, kPixels> area_coverage(const std::vector<Polyline>& polygon);

GlyphImage rasterize_glyph(const Font& font, Letter letter, const RasterOptions& opts = {});
GlyphImage rasterize_glyph(const std::filesystem::path& font_file, Letter letter, const RasterOptions& opts = {});

}  // namespace defletter

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "defletter/glyph.hpp"
#include "defletter/raster.hpp"

namespace defletter {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr const char* kPolarity = "ink=+1,background=-1";

/// A glyph that could not be rasterized during dataset construction.
struct SkippedGlyph {
  std::string font_id;
  char letter = '?';
  std::string reason;
};

struct BuildReport {
  std::vector<SkippedGlyph> skipped_glyphs;
  std::vector<std::string> unparseable_fonts;
};

/// Number of fonts assigned to train/val/test for `n` fonts. Uses largest
/// remainders and guarantees every split at least one font when n >= 3.
std::array<size_t, 3> split_sizes(size_t n, const SplitRatios& ratios);

/// Rasterizes A-Z from every TrueType file under `font_dir` (recursively) and
/// partitions the fonts, shuffled by `seed`, into font-disjoint splits.
/// Fonts are identified by their path relative to `font_dir`.
LabeledDataset build_dataset(const std::filesystem::path& font_dir, const SplitRatios& ratios, std::uint64_t seed,
                             const RasterOptions& raster = {}, BuildReport* report = nullptr);

/// Ingests the `<class>/<font_id>.png` layout. Dark pixels (luminance < 128)
/// are ink. Every image must be 64x64.
LabeledDataset load_png_directory(const std::filesystem::path& dir, const SplitRatios& ratios, std::uint64_t seed);

/// Assigns already-rasterized examples to font-disjoint splits.
LabeledDataset partition_examples(std::vector<LabeledExample> examples, const SplitRatios& ratios, std::uint64_t seed);

std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds);
LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// Hex SHA-256 of the serialized dataset body; equals the file trailer.
std::string dataset_checksum(const LabeledDataset& ds);

}  // namespace defletter

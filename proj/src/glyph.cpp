#include "defletter/glyph.hpp"

#include <algorithm>
#include <cmath>

namespace defletter {

GlyphImage::GlyphImage(std::span<const float> values) {
  if (values.size() != static_cast<size_t>(kPixels))
    throw Error(ErrorCode::InvalidArgument, "glyph image must have exactly 64x64 pixels");
  std::copy(values.begin(), values.end(), pixels_.begin());
}

bool GlyphImage::is_binary() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return v == kInk || v == kBackground; });
}

bool GlyphImage::in_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return v >= -1.0f && v <= 1.0f; });
}

double GlyphImage::ink_fraction() const {
  auto ink = std::count_if(pixels_.begin(), pixels_.end(), [](float v) { return v > 0.0f; });
  return static_cast<double>(ink) / kPixels;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + name + "'");
}

void SplitRatios::validate() const {
  if (!(train > 0 && val > 0 && test > 0))
    throw Error(ErrorCode::InvalidArgument, "split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidArgument, "split ratios must sum to 1");
}

std::optional<Split> LabeledDataset::split_of(const std::string& font_id) const {
  for (const auto& [split, fonts] : splits)
    if (fonts.contains(font_id)) return split;
  return std::nullopt;
}

std::vector<const LabeledExample*> LabeledDataset::subset(Split split) const {
  std::vector<const LabeledExample*> out;
  auto it = splits.find(split);
  if (it == splits.end()) return out;
  for (const auto& ex : examples)
    if (it->second.contains(ex.font_id)) out.push_back(&ex);
  return out;
}

void LabeledDataset::validate() const {
  for (auto a = splits.begin(); a != splits.end(); ++a) {
    for (auto b = std::next(a); b != splits.end(); ++b) {
      for (const auto& font : a->second)
        if (b->second.contains(font))
          throw Error(ErrorCode::CorruptDataset, "font '" + font + "' appears in two splits");
    }
  }
  for (const auto& ex : examples) {
    if (ex.font_id.empty()) throw Error(ErrorCode::CorruptDataset, "example with empty font id");
    if (!split_of(ex.font_id))
      throw Error(ErrorCode::CorruptDataset, "font '" + ex.font_id + "' belongs to no split");
  }
}

}  // namespace defletter

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "defletter/error.hpp"

namespace defletter {

inline constexpr int kCanvas = 64;
inline constexpr int kPixels = kCanvas * kCanvas;
inline constexpr int kNumClasses = 26;

inline constexpr float kInk = 1.0f;
inline constexpr float kBackground = -1.0f;

/// Uppercase Latin letter class, stored as 0..25.
class Letter {
 public:
  constexpr Letter() = default;
  constexpr explicit Letter(int index) : index_(index) {
    if (index < 0 || index >= kNumClasses) throw Error(ErrorCode::InvalidArgument, "letter index out of range");
  }

  static constexpr Letter from_char(char c) {
    if (c < 'A' || c > 'Z') throw Error(ErrorCode::InvalidArgument, std::string("not an uppercase letter: ") + c);
    return Letter(c - 'A');
  }

  constexpr int index() const { return index_; }
  constexpr char to_char() const { return static_cast<char>('A' + index_); }
  constexpr char32_t codepoint() const { return static_cast<char32_t>('A' + index_); }

  friend constexpr auto operator<=>(const Letter&, const Letter&) = default;

 private:
  int index_ = 0;
};

/// A 64x64 letter image. Ink is +1 and background -1 when rasterized; pixel
/// values become continuous in [-1, +1] once attacked or generated.
class GlyphImage {
 public:
  GlyphImage() { pixels_.fill(kBackground); }
  explicit GlyphImage(std::span<const float> values);

  float& at(int row, int col) { return pixels_[static_cast<size_t>(row * kCanvas + col)]; }
  float at(int row, int col) const { return pixels_[static_cast<size_t>(row * kCanvas + col)]; }

  std::span<float, kPixels> pixels() { return pixels_; }
  std::span<const float, kPixels> pixels() const { return pixels_; }

  bool is_binary() const;
  bool in_range() const;
  double ink_fraction() const;

  friend bool operator==(const GlyphImage&, const GlyphImage&) = default;

 private:
  std::array<float, kPixels> pixels_{};
};

struct LabeledExample {
  GlyphImage image;
  Letter label;
  std::string font_id;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct SplitRatios {
  double train = 0.47;
  double val = 0.06;
  double test = 0.47;

  void validate() const;
  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

/// Examples plus the font-disjoint partition they were built with.
class LabeledDataset {
 public:
  std::vector<LabeledExample> examples;
  std::map<Split, std::set<std::string>> splits;
  std::uint64_t seed = 0;
  SplitRatios ratios;

  std::optional<Split> split_of(const std::string& font_id) const;
  std::vector<const LabeledExample*> subset(Split split) const;

  /// Throws CorruptDataset if the split invariants are violated.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

}  // namespace defletter

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "defletter/attack.hpp"
#include "defletter/classifier.hpp"
#include "defletter/glyph.hpp"

namespace testing_support {

using namespace defletter;

std::filesystem::path data_dir();

/// Fresh empty directory under the system temp dir.
std::filesystem::path fresh_dir(const std::string& name);

struct TtfPoint {
  int x = 0;
  int y = 0;
  bool on_curve = true;
};
using TtfContour = std::vector<TtfPoint>;

/// Minimal glyf-flavoured TrueType file (head, maxp, cmap format 4, loca,
/// glyf) mapping each letter to a simple glyph made of `contours`.
std::vector<std::uint8_t> build_ttf(const std::map<char, std::vector<TtfContour>>& glyphs,
                                    std::uint16_t units_per_em = 1000);

/// Every letter A-Z as the same axis-aligned rectangle.
std::vector<std::uint8_t> rectangle_font(int width, int height);

/// Fraction of `samples` x `samples` subpixel centres of pixel (row, col)
/// inside the polygon set under the nonzero rule.
double supersampled_coverage(const std::vector<std::vector<std::pair<double, double>>>& polygons, int row, int col,
                             int samples);

/// Number of features entering fc1 of the linear probe network.
inline constexpr int kLinearFeatures = 14 * 14;

/// A classifier whose logit difference z_a - z_b is exactly
/// v . F(x) + bias, where F averages the 4x4 pixel block starting at
/// (4e + 3, 4f + 3) for feature (e, f). Every other class is pinned far
/// below. The network is conv/pool/fc with identity activations and
/// average pooling, so the input gradient is constant.
ClassifierModel linear_probe_model(const std::vector<double>& v, double bias, Letter a, Letter b);

/// Margin z_a - z_b of linear_probe_model computed directly from pixels.
double linear_probe_margin(const std::vector<double>& v, double bias, const GlyphImage& x);

/// A linear two-class problem with a known iteration count. Each FGSM step
/// lowers the margin by exactly eps * sum|v| while no pixel reaches the clamp.
struct LinearCase {
  std::vector<double> v;
  double bias = 0;
  GlyphImage x0;
  Letter a{0}, b{1};
  int expected_k = 0;
};

/// Random linear case whose closed-form iteration count is `target_k`.
LinearCase make_linear_case(std::uint64_t seed, int target_k, double epsilon);

/// Labeled images where each class is a bar at a class-specific position,
/// with per-font jitter. Fonts are named f0, f1, ...
LabeledDataset bar_dataset(int fonts, std::uint64_t seed, const SplitRatios& ratios = {0.6, 0.2, 0.2});

/// Image with pixels drawn uniformly from [lo, hi].
GlyphImage random_image(std::uint64_t seed, float lo = -1.0f, float hi = 1.0f);

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path);

/// Per-row ReLU signs and max-pool argmax indices of `net` on `x`. Two
/// inputs with equal rows lie in the same piece of the piecewise-affine
/// network, where the loss is smooth.
torch::Tensor activation_pattern(CnnNet net, const torch::Tensor& x);

struct GradientCheck {
  /// ||fd - analytic|| / ||analytic|| over probes whose +-h points share the
  /// activation pattern of the base image.
  double relative_error = 0;
  double analytic_norm = 0;
  /// Same ratio over every probe, kinks included.
  double raw_relative_error = 0;
  size_t probes = 0;
  /// Probes dropped because +-h crossed a ReLU or max-pool switch.
  size_t kinked = 0;
  /// |spliced - full forward| loss at the first probe; coordinate probes
  /// recompute only the window a pixel reaches.
  double splice_error = 0;
};

/// Compares input_gradient of `model` (evaluated in double precision) with
/// central differences of step `h` on `pixels` coordinates, half of them the
/// largest-magnitude gradient entries and half random, plus one random
/// direction. A central difference across a kink of the piecewise-affine
/// network does not estimate the derivative, so such probes are excluded
/// from `relative_error` and counted in `kinked`.
GradientCheck check_input_gradient(const ClassifierModel& model, const GlyphImage& image, Letter label, int pixels,
                                   std::uint64_t seed, double h = 1e-3);

/// A dataset image with uniform dither of +-amplitude, clamped to [-1, 1],
/// which keeps max-pool windows free of exact ties.
GlyphImage dithered(const GlyphImage& image, float amplitude, std::uint64_t seed);

}  // namespace testing_support

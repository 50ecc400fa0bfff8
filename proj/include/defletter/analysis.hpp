#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "defletter/attack.hpp"
#include "defletter/glyph.hpp"

namespace defletter {

template <typename T>
using ClassMatrix = std::array<std::array<T, kNumClasses>, kNumClasses>;

/// Row = true class, column = misrecognized class. Censored records have no
/// column and are excluded.
ClassMatrix<std::int64_t> confusion_matrix(const AttackLog& log);

struct AverageDefensibility {
  /// Mean k per (true, misrecognized) pair; NaN where the pair never occurs.
  ClassMatrix<double> values;
  ClassMatrix<std::int64_t> counts;
  /// True where counts > min_count.
  ClassMatrix<bool> mask;
  int min_count = 10;
};

AverageDefensibility average_defensibility_matrix(const AttackLog& log, int min_count = 10);

struct PairwiseMatrices {
  ClassMatrix<std::int64_t> confusion;
  AverageDefensibility average;
};

struct ClassDistribution {
  Letter label;
  /// Sorted ascending; censored records contribute k_max.
  std::vector<int> ks;
  size_t censored = 0;
  double median = 0;
  int min = 0;
  int max = 0;
  std::optional<double> accuracy;

  size_t count() const { return ks.size(); }
};

using ClassAccuracies = std::array<std::optional<double>, kNumClasses>;

/// One entry per letter; classes without records have count() == 0.
std::array<ClassDistribution, kNumClasses> class_distributions(const AttackLog& log,
                                                               const ClassAccuracies& accuracy = {});

struct AnalysisReport {
  PairwiseMatrices matrices;
  std::array<ClassDistribution, kNumClasses> classes;
  size_t censored = 0;
  size_t discarded = 0;
  size_t presented = 0;
  int k_max = 100;
};

AnalysisReport analyze(const AttackLog& log, const ClassAccuracies& accuracy = {}, int min_count = 10);

/// Writes confusion.csv, avg_defensibility.csv, avg_defensibility_mask.csv,
/// pair_counts.csv, class_k.csv, class_summary.csv and the heatmap and
/// distribution plots (SVG + PNG). Lines starting with '#' are comments.
void export_report(const AnalysisReport& report, const std::filesystem::path& out_dir,
                   const std::string& provenance = "");

/// Readers for the matrix CSVs; empty cells read back as NaN.
ClassMatrix<std::int64_t> read_count_matrix_csv(const std::filesystem::path& path);
ClassMatrix<double> read_value_matrix_csv(const std::filesystem::path& path);

/// Gaussian kernel density over integer k values with Silverman's bandwidth,
/// evaluated on `grid`. Used for the violin outlines.
std::vector<double> kernel_density(const std::vector<int>& ks, const std::vector<double>& grid);

}  // namespace defletter

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "defletter/attack.hpp"
#include "defletter/classifier.hpp"
#include "defletter/glyph.hpp"
#include "defletter/nn.hpp"
#include "defletter/stats.hpp"

namespace defletter {

struct RegressionSample {
  std::string font_id;
  GlyphImage image;  // the original, never an attacked image
  int k = 0;
};

struct ClassRegressionData {
  Letter label;
  std::vector<RegressionSample> train, val, test;

  size_t size() const { return train.size() + val.size() + test.size(); }
};

struct RegressionDataset {
  std::array<ClassRegressionData, kNumClasses> classes;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::string classifier_checksum;
  std::string dataset_checksum;
  size_t censored_excluded = 0;
};

/// Joins non-censored records back to their original images by
/// (font_id, label) and splits each class font-disjointly by `ratios`.
/// Throws JoinFailure when a record has no image, StaleArtifact when the
/// log was produced from a different dataset, and EmptyClass when a class
/// has fewer than three usable records (unless `allow_missing_classes`).
RegressionDataset build_regression_dataset(const AttackLog& log, const LabeledDataset& ds, const SplitRatios& ratios,
                                           std::uint64_t seed, bool allow_missing_classes = false);

struct RegressorConfig {
  /// Same as the classifier except for a single output unit.
  CnnArchitecture arch{{32, 64}, 3, 2, {128, 1}};
  TrainingConfig training;
  /// Start from the classifier's convolution and first dense layer rather
  /// than from random weights.
  bool init_from_classifier = false;

  void validate() const;
  nlohmann::json to_json() const;
  static RegressorConfig from_json(const nlohmann::json& j);
};

struct YyPair {
  int k = 0;
  double estimate = 0;
};

struct ResidualBin {
  int k_lo = 0, k_hi = 0;  // inclusive
  size_t count = 0;
  double mean_residual = 0;  // mean of (estimate - k)
};

struct RegressionEvaluation {
  double pearson_r = 0;
  /// One-sided p-value for r > 0 (Student t with n-2 degrees of freedom).
  double p_value = 1;
  double mse = 0;
  size_t n = 0;
  std::vector<YyPair> pairs;
  std::vector<ResidualBin> residuals;
};

struct RegressorMetrics {
  TrainingHistory history;
  std::optional<double> test_pearson_r;
  std::optional<double> test_p_value;
  std::optional<double> test_mse;
  size_t test_n = 0;

  nlohmann::json to_json() const;
  static RegressorMetrics from_json(const nlohmann::json& j);
};

class RegressorModel {
 public:
  RegressorModel(Letter label, RegressorConfig config);

  Letter label;
  CnnNet net;
  RegressorConfig config;
  RegressorMetrics metrics;
  std::string classifier_checksum;
  std::string dataset_checksum;

  std::string parameter_checksum() const { return state_checksum(*net); }
};

/// MSE on raw k with AdaDelta and early stopping on validation MSE.
RegressorModel train_regressor(Letter label, const RegressionDataset& rds, const RegressorConfig& cfg,
                               const ClassifierModel* classifier = nullptr);

/// Estimated defensibility of an unattacked image. Does not modify the model.
double estimate(const RegressorModel& model, const GlyphImage& image);
std::vector<double> estimate(const RegressorModel& model, std::span<const GlyphImage* const> images);

/// Evaluates on the model's class test split.
RegressionEvaluation evaluate_regressor(const RegressorModel& model, const RegressionDataset& rds);

std::vector<ResidualBin> residuals_by_k(const std::vector<YyPair>& pairs, int bin_width = 5);

void save_regressor(const RegressorModel& model, const std::filesystem::path& path,
                    const nlohmann::json& provenance = nullptr);
RegressorModel load_regressor(const std::filesystem::path& path);

/// "k,estimate" rows, full precision.
void write_yy_csv(const RegressionEvaluation& eval, const std::filesystem::path& path, const std::string& provenance = "");
std::vector<YyPair> read_yy_csv(const std::filesystem::path& path);

}  // namespace defletter

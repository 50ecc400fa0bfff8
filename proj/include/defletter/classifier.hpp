#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "defletter/glyph.hpp"
#include "defletter/nn.hpp"

namespace defletter {

struct ClassifierConfig {
  CnnArchitecture arch;  // fc_widths[1] must be 26
  TrainingConfig training;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Per-epoch losses plus final accuracies of the restored best checkpoint.
struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = 0;  // 1-based
  int epochs_run = 0;
};

struct ClassifierMetrics {
  double train_acc = 0;
  double val_acc = 0;
  std::optional<double> test_acc;
  /// Test accuracy per letter; empty when the test split is empty.
  std::array<std::optional<double>, kNumClasses> per_class_test_acc;
  TrainingHistory history;

  nlohmann::json to_json() const;
  static ClassifierMetrics from_json(const nlohmann::json& j);
};

class ClassifierModel {
 public:
  explicit ClassifierModel(ClassifierConfig config);

  CnnNet net;
  ClassifierConfig config;
  ClassifierMetrics metrics;
  std::string dataset_checksum;

  std::string parameter_checksum() const { return state_checksum(*net); }
  /// Deep copy with independent parameters, optionally converted to `dtype`.
  ClassifierModel clone(torch::Dtype dtype = torch::kFloat32) const;
};

struct Classification {
  std::array<float, kNumClasses> logits{};
  Letter predicted;
};

ClassifierModel train_classifier(const LabeledDataset& ds, const ClassifierConfig& cfg);

Classification classify(const ClassifierModel& model, const GlyphImage& image);

/// Classification loss J: negative log-softmax probability of `labels`,
/// summed over the batch so each image's gradient is independent of batching.
torch::Tensor classification_loss(const CnnNet& net, const torch::Tensor& images, const torch::Tensor& labels);
/// dJ/dx for a batch [N,1,64,64]; the result has the dtype of `images`.
torch::Tensor loss_input_gradient(const CnnNet& net, const torch::Tensor& images, const torch::Tensor& labels);

using GradientGrid = std::array<float, kPixels>;
GradientGrid input_gradient(const ClassifierModel& model, const GlyphImage& image, Letter label);

/// Fraction of `split` examples whose prediction equals their label.
double evaluate(const ClassifierModel& model, const LabeledDataset& ds, Split split);
/// Per-class accuracy over `split`; classes without examples are nullopt.
std::array<std::optional<double>, kNumClasses> evaluate_per_class(const ClassifierModel& model,
                                                                   const LabeledDataset& ds, Split split);
/// Batched argmax predictions.
std::vector<Letter> predict(const ClassifierModel& model, std::span<const GlyphImage* const> images);

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path,
                     const nlohmann::json& provenance = nullptr);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace defletter

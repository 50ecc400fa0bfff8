#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "defletter/classifier.hpp"
#include "defletter/glyph.hpp"

namespace defletter {

struct AttackConfig {
  double epsilon = 0.02;
  int k_max = 100;
  float clamp_min = -1.0f;
  float clamp_max = 1.0f;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// Outcome of attacking one image. `k` is the number of I-FGSM steps after
/// which the classifier first disagrees with `true_label`; censored records
/// never flipped within k_max and carry k = k_max.
struct AttackRecord {
  std::string font_id;
  Letter true_label;
  int k = 0;
  std::optional<Letter> misrecognized_as;
  bool censored = false;
  std::optional<GlyphImage> final_image;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

struct AttackLog {
  std::vector<AttackRecord> records;
  AttackConfig config;
  std::string classifier_checksum;
  std::string dataset_checksum;
  std::string split;
  /// Images already misclassified before any attack step; never recorded.
  size_t discarded_count = 0;
  /// Every image handed to the attack, discarded or not.
  size_t presented_count = 0;

  size_t censored_count() const;
};

/// The signed step eps * sign(dJ/dx) before clamping; zero-gradient pixels get 0.
std::vector<float> fgsm_perturbation(const ClassifierModel& model, const GlyphImage& image, Letter label,
                                     double epsilon);

/// One FGSM step, x' = clamp(x + eps * sign(dJ/dx), clamp_min, clamp_max).
GlyphImage fgsm_step(const ClassifierModel& model, const GlyphImage& image, Letter label, double epsilon,
                     float clamp_min = -1.0f, float clamp_max = 1.0f);

/// Iterates fgsm_step, re-classifying after each full step, until the
/// prediction leaves `label` or k_max steps have been taken. Throws
/// NotCorrectlyClassified if the unattacked image is already misrecognized.
AttackRecord measure_defensibility(const ClassifierModel& model, const GlyphImage& image, Letter label,
                                   const AttackConfig& cfg, bool keep_final_image = false);

/// One labelled image to attack.
struct AttackTarget {
  std::string id;
  const GlyphImage* image;
  Letter label;
};

/// Attacks every target; pre-attack misclassifications are counted in
/// discarded_count and skipped.
AttackLog attack_targets(const ClassifierModel& model, const std::vector<AttackTarget>& targets,
                         const AttackConfig& cfg, bool keep_final_images = false);

AttackLog attack_dataset(const ClassifierModel& model, const LabeledDataset& ds, Split split, const AttackConfig& cfg);

/// Line-delimited JSON: one header object, then one object per record.
void save_attack_log(const AttackLog& log, const std::filesystem::path& path, const nlohmann::json& provenance = nullptr);
AttackLog load_attack_log(const std::filesystem::path& path);
std::string attack_log_to_jsonl(const AttackLog& log, const nlohmann::json& provenance = nullptr);
AttackLog attack_log_from_jsonl(const std::string& text);

}  // namespace defletter

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "defletter/attack.hpp"
#include "defletter/classifier.hpp"
#include "defletter/glyph.hpp"
#include "defletter/nn.hpp"

namespace defletter {

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
};

struct GanConfig {
  int latent_dim = 100;
  /// Channel count of the generator's last hidden layer; earlier layers
  /// double it. The discriminator mirrors this with its own width.
  int generator_width = 32;
  int discriminator_width = 32;
  int batch_size = 64;
  std::uint64_t seed = 0;

  struct Step1 {
    AdamSettings adam;
    int epochs = 25;
    /// Save G and D every this many epochs when a checkpoint directory is set.
    int checkpoint_every = 5;
  } step1;

  struct Step2 {
    AdamSettings adam;
    int iterations = 300;
    /// Weight of the adversarial generator loss mixed into step 2.
    double adversarial_weight = 0.0;
    int probe_size = 1000;
    int probe_every = 50;
  } step2;

  /// Mean per-pixel variance across samples of a class below which the
  /// class is reported as collapsed.
  double mode_collapse_threshold = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);
};

/// (z, one-hot y) -> dense 8x8 map -> three stride-2 transposed convolutions
/// -> 64x64 image squashed by tanh into [-1, 1].
class GeneratorImpl : public torch::nn::Cloneable<GeneratorImpl> {
 public:
  explicit GeneratorImpl(int latent_dim = 100, int width = 32);
  void reset() override;
  /// z: [N, latent_dim], labels: [N] int64 -> [N, 1, 64, 64]
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& labels);
  int latent_dim() const { return latent_dim_; }
  /// Resets batch-norm running statistics and switches them to a cumulative
  /// average until end_batch_norm_recalibration().
  void begin_batch_norm_recalibration();
  void end_batch_norm_recalibration();

 private:
  int latent_dim_, width_;
  torch::nn::Linear project{nullptr};
  torch::nn::BatchNorm1d bn0{nullptr};
  torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr}, up3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(Generator);

/// Image plus the one-hot label broadcast as 26 extra channels -> three
/// stride-2 convolutions -> one logit.
class DiscriminatorImpl : public torch::nn::Cloneable<DiscriminatorImpl> {
 public:
  explicit DiscriminatorImpl(int width = 32);
  void reset() override;
  /// Returns logits [N]; probability is sigmoid(logit).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& labels);

 private:
  int width_;
  torch::nn::Conv2d down1{nullptr}, down2{nullptr}, down3{nullptr}, head{nullptr};
  torch::nn::BatchNorm2d bn2{nullptr}, bn3{nullptr};
};
TORCH_MODULE(Discriminator);

struct GeneratorModel {
  explicit GeneratorModel(GanConfig config);
  Generator net;
  GanConfig config;
  /// 1 after conditional GAN training, 2 after classifier fine-tuning.
  int step = 1;
  std::string dataset_checksum;
  std::string classifier_checksum;  // set by step 2

  std::string parameter_checksum() const { return state_checksum(*net); }
};

struct DiscriminatorModel {
  explicit DiscriminatorModel(GanConfig config);
  Discriminator net;
  GanConfig config;
  std::string dataset_checksum;

  /// Probability that `image` is a real example of `label`.
  double probability(const GlyphImage& image, Letter label) const;
};

struct GanIterationLog {
  int iteration = 0;
  int epoch = 0;
  double loss_d = 0;
  double loss_g = 0;
};

struct Step1Result {
  GeneratorModel generator;
  DiscriminatorModel discriminator;
  std::vector<GanIterationLog> curve;
  /// Classes whose samples barely vary (diagnostic only).
  std::vector<Letter> collapsed_classes;
};

/// Alternating discriminator / generator updates with binary cross-entropy
/// (non-saturating generator loss). Throws DivergedTraining on a non-finite
/// loss. With `checkpoint_dir` set, G and D are saved every
/// `checkpoint_every` epochs.
Step1Result train_cgan_step1(const LabeledDataset& ds, const GanConfig& cfg,
                             const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

struct ProbeLog {
  int iteration = 0;
  double probe_loss = 0;
};

struct Step2Result {
  GeneratorModel generator;
  std::vector<double> batch_loss;  // mean L_C per iteration
  std::vector<ProbeLog> probe;     // L_C on the fixed probe batch
  double probe_before = 0;
  double probe_after = 0;
  std::string classifier_checksum_before;
  std::string classifier_checksum_after;
};

/// Updates only the generator to minimize the frozen classifier's loss
/// (negative log-softmax of the conditioning class) on generated images.
/// `discriminator` is needed only when adversarial_weight > 0.
Step2Result finetune_generator_step2(const GeneratorModel& step1, const ClassifierModel& classifier,
                                     const DiscriminatorModel* discriminator = nullptr);

/// Mean classifier loss over the fixed probe batch defined by (cfg.seed, probe_size).
double probe_loss(const GeneratorModel& g, const ClassifierModel& classifier);

/// n images of `label` with fresh latent vectors; deterministic in `seed`.
std::vector<GlyphImage> generate(const GeneratorModel& g, Letter label, int n, std::uint64_t seed);

/// Classes whose mean per-pixel sample variance falls below the threshold.
std::vector<Letter> mode_collapse_check(const GeneratorModel& g, int samples_per_class, double threshold,
                                        std::uint64_t seed);

void save_generator(const GeneratorModel& g, const std::filesystem::path& path, const nlohmann::json& provenance = nullptr);
GeneratorModel load_generator(const std::filesystem::path& path);
void save_discriminator(const DiscriminatorModel& d, const std::filesystem::path& path,
                        const nlohmann::json& provenance = nullptr);
DiscriminatorModel load_discriminator(const std::filesystem::path& path);

/// Attack outcomes for one image population (original or generated).
struct Population {
  std::string name;
  std::array<std::vector<AttackRecord>, kNumClasses> records;
  /// Pre-attack images of the attacked (non-discarded) records, same order.
  std::array<std::vector<GlyphImage>, kNumClasses> images;
  std::array<size_t, kNumClasses> presented{};
  std::array<size_t, kNumClasses> discarded{};

  /// k per attacked image; censored images count as k_max.
  std::vector<double> ks(std::optional<Letter> label = std::nullopt) const;
  double mean_k(std::optional<Letter> label = std::nullopt) const;
  size_t censored() const;
};

/// Generates n_per_class images per letter and attacks them.
Population attack_generated(const GeneratorModel& g, const ClassifierModel& classifier, const AttackConfig& cfg,
                            int n_per_class, std::uint64_t seed, const std::string& name = "generated");

/// Attacks up to n_per_class `split` images per letter, picked in a seeded
/// order. Records already present in `known` (same classifier) are reused.
Population attack_originals(const LabeledDataset& ds, Split split, const ClassifierModel& classifier,
                            const AttackConfig& cfg, int n_per_class, std::uint64_t seed,
                            const AttackLog* known = nullptr);

struct PopulationComparison {
  std::string a_name, b_name;
  double mean_a = 0, mean_b = 0;
  /// One-sided Welch p-value for mean(b) > mean(a) over pooled k.
  double p_b_greater = 1;
  std::array<double, kNumClasses> class_mean_a{}, class_mean_b{};
};
PopulationComparison compare_populations(const Population& a, const Population& b);

/// The `m` generated images of `label` with the highest k (ties keep order).
std::vector<std::pair<GlyphImage, int>> top_defensible(const Population& p, Letter label, size_t m = 8);

/// Writes hist_<class>.csv, hist_pooled.csv, summary.csv, comparison.json,
/// the overlay plots and the top-8 galleries. `populations` are columns in
/// the order given; the last one supplies the galleries.
void export_generated_report(const std::vector<const Population*>& populations, int k_max,
                             const std::filesystem::path& out_dir, const std::string& provenance = "");

}  // namespace defletter

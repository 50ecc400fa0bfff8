#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "defletter/attack.hpp"
#include "defletter/classifier.hpp"
#include "defletter/gan.hpp"
#include "defletter/raster.hpp"
#include "defletter/regressor.hpp"

namespace defletter {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct DatasetSection {
  std::filesystem::path font_dir;
  /// Alternative input: `<class>/<font_id>.png` images.
  std::filesystem::path png_dir;
  SplitRatios ratios;
  RasterOptions raster;
};

struct AttackSection {
  AttackConfig attack;
  Split split = Split::Test;
};

struct RegressionSection {
  SplitRatios ratios{0.7, 0.1, 0.2};
  RegressorConfig model;
};

struct GanSection {
  GanConfig gan;
  int n_per_class = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  DatasetSection dataset;
  ClassifierConfig classifier;
  AttackSection attack;
  int min_count = 10;
  RegressionSection regression;
  GanSection gan;
  /// Record wall-clock time in provenance headers (breaks byte-identity).
  bool record_wall_clock = false;

  /// Pushes the global seed into every section.
  void apply_seed(std::uint64_t s);
  void validate() const;
  /// Everything except out_dir, which does not influence results.
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

struct ProvenanceHeader {
  std::string stage;
  std::map<std::string, std::string> inputs;  // artifact name -> checksum
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::optional<std::string> wall_clock;

  nlohmann::json to_json() const;
  /// Single-line form used in CSV and SVG comments and PNG text chunks.
  std::string to_line() const;
};

enum class Stage { Dataset, Classifier, Attack, Analyze, Regressor, GanStep1, GanStep2, EvalGenerated, Report };

inline constexpr Stage kAllStages[] = {Stage::Dataset,  Stage::Classifier, Stage::Attack,
                                       Stage::Analyze,  Stage::Regressor,  Stage::GanStep1,
                                       Stage::GanStep2, Stage::EvalGenerated, Stage::Report};

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Where each stage reads and writes under an output directory.
struct Layout {
  explicit Layout(std::filesystem::path root);
  std::filesystem::path root;
  std::filesystem::path dataset_dir, dataset, classifier_dir, classifier, attack_dir, attack_log, analysis_dir,
      regressor_dir, gan_step1_dir, generator1, discriminator, gan_step2_dir, generator2, generated_dir, report_dir,
      report;
  std::filesystem::path stage_record(Stage s) const;
};

struct RunOptions {
  /// Proceed even when upstream lineage checksums disagree.
  bool force = false;
  /// Re-run stages whose recorded inputs are unchanged.
  bool rerun = false;
};

struct StageOutcome {
  Stage stage;
  bool skipped = false;
  std::vector<std::filesystem::path> outputs;
};

/// Runs one stage on the standard layout. Throws MissingArtifact when an
/// upstream artifact is absent and StaleArtifact when lineage checksums
/// disagree (unless options.force). A stage whose recorded inputs and
/// outputs are unchanged is skipped unless options.rerun.
StageOutcome run_stage(const ExperimentConfig& cfg, Stage stage, const RunOptions& options = {});
std::vector<StageOutcome> run_pipeline(const ExperimentConfig& cfg, const RunOptions& options = {},
                                       std::optional<Stage> last = std::nullopt);

// Stage bodies with explicit paths; the CLI verbs call these directly.
namespace stages {

struct Lineage {
  bool force = false;
  /// Throws StaleArtifact (or warns under force) when a != b.
  void require(const std::string& what, const std::string& a, const std::string& b) const;
};

void build_dataset(const DatasetSection& cfg, std::uint64_t seed, const std::filesystem::path& out,
                   const ProvenanceHeader& prov);
void train_classifier(const std::filesystem::path& dataset, const ClassifierConfig& cfg,
                      const std::filesystem::path& out_dir, const ProvenanceHeader& prov);
void attack(const std::filesystem::path& dataset, const std::filesystem::path& classifier, const AttackSection& cfg,
            const std::filesystem::path& out, const ProvenanceHeader& prov, const Lineage& lineage);
void analyze(const std::filesystem::path& log, const std::filesystem::path& classifier, int min_count,
             const std::filesystem::path& out_dir, const ProvenanceHeader& prov, const Lineage& lineage);
void train_regressors(const std::filesystem::path& log, const std::filesystem::path& dataset,
                      const std::optional<std::filesystem::path>& classifier, const RegressionSection& cfg,
                      std::uint64_t seed, const std::filesystem::path& out_dir, const ProvenanceHeader& prov,
                      const Lineage& lineage);
void train_gan(const std::filesystem::path& dataset, const GanConfig& cfg, const std::filesystem::path& out_dir,
               const ProvenanceHeader& prov);
/// Step-2 settings come from `cfg`, not from the step-1 checkpoint.
void finetune_gan(const std::filesystem::path& generator, const std::filesystem::path& classifier,
                  const std::optional<std::filesystem::path>& discriminator, const GanConfig& cfg,
                  const std::filesystem::path& out_dir,
                  const ProvenanceHeader& prov, const Lineage& lineage);
void eval_generated(const std::filesystem::path& step1, const std::filesystem::path& step2,
                    const std::filesystem::path& classifier, const std::filesystem::path& dataset,
                    const std::optional<std::filesystem::path>& known_log, const AttackSection& attack,
                    int n_per_class, std::uint64_t seed, const std::filesystem::path& out_dir,
                    const ProvenanceHeader& prov, const Lineage& lineage);

}  // namespace stages

/// Assembles `report/report.html` from whatever stage outputs exist under
/// `out_dir`; missing stages are marked "not run". Throws MissingArtifact
/// when no stage output exists at all.
std::filesystem::path write_report(const std::filesystem::path& out_dir, const std::string& provenance = "");

}  // namespace defletter

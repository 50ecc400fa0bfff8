#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "defletter/error.hpp"
#include "defletter/log.hpp"
#include "defletter/pipeline.hpp"

namespace {

using defletter::ErrorCode;
using defletter::ExperimentConfig;
using defletter::Stage;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitStageFailure = 2;
constexpr int kExitStale = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool rerun = false;
  bool quiet = false;
};

/// Overrides a verb may apply on top of the loaded configuration.
struct Overrides {
  std::string fonts, png_dir;
  std::optional<int> max_epochs, k_max, min_count, gan_epochs, gan_iterations, n_per_class;
  std::optional<double> epsilon, adversarial_weight;
  bool init_from_classifier = false;
};

ExperimentConfig resolve(const Globals& g, const Overrides& o) {
  ExperimentConfig cfg;
  if (!g.config.empty()) cfg = ExperimentConfig::load(g.config);
  if (!o.fonts.empty()) cfg.dataset.font_dir = o.fonts;
  if (!o.png_dir.empty()) cfg.dataset.png_dir = o.png_dir;
  if (!g.out.empty()) cfg.out_dir = g.out;
  if (g.seed) cfg.apply_seed(*g.seed);
  if (o.max_epochs) cfg.classifier.training.max_epochs = *o.max_epochs;
  if (o.epsilon) cfg.attack.attack.epsilon = *o.epsilon;
  if (o.k_max) cfg.attack.attack.k_max = *o.k_max;
  if (o.min_count) cfg.min_count = *o.min_count;
  if (o.init_from_classifier) cfg.regression.model.init_from_classifier = true;
  if (o.gan_epochs) cfg.gan.gan.step1.epochs = *o.gan_epochs;
  if (o.gan_iterations) cfg.gan.gan.step2.iterations = *o.gan_iterations;
  if (o.adversarial_weight) cfg.gan.gan.step2.adversarial_weight = *o.adversarial_weight;
  if (o.n_per_class) cfg.gan.n_per_class = *o.n_per_class;
  cfg.validate();
  return cfg;
}

void print_outcome(const defletter::StageOutcome& out) {
  std::cout << defletter::to_string(out.stage) << (out.skipped ? " (up to date)" : "") << "\n";
  for (const auto& p : out.outputs) std::cout << "  " << p.string() << "\n";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::StaleArtifact: return kExitStale;
    case ErrorCode::InvalidArgument: return kExitUsage;
    default: return kExitStageFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Letter defensibility toolkit: dataset, classifier, I-FGSM attack, analysis, regressors, GAN."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Overrides o;
  app.add_option("--config", g.config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed; overrides every seed in the configuration");
  app.add_option("--out", g.out, "Output directory (default: out, or out_dir from the configuration)");
  app.add_flag("--force", g.force, "Proceed even when upstream checksums disagree");
  app.add_flag("--rerun", g.rerun, "Re-run stages whose inputs are unchanged");
  app.add_flag("-q,--quiet", g.quiet, "Only print warnings");

  std::optional<Stage> selected;
  auto verb = [&](const std::string& name, Stage stage, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&selected, stage] { selected = stage; });
    return sub;
  };

  auto* ds = verb("build-dataset", Stage::Dataset, "Rasterize A-Z of every font into a split dataset");
  ds->add_option("--fonts", o.fonts, "Directory of .ttf/.otf files")->check(CLI::ExistingDirectory);
  ds->add_option("--png-dir", o.png_dir, "Alternative input: <letter>/<font_id>.png images")
      ->check(CLI::ExistingDirectory);
  auto* tc = verb("train-classifier", Stage::Classifier, "Train the 26-way letter classifier");
  tc->add_option("--max-epochs", o.max_epochs, "Epoch cap")->check(CLI::PositiveNumber);
  auto* at = verb("attack", Stage::Attack, "Measure defensibility of every correctly classified test image");
  at->add_option("--epsilon", o.epsilon, "Step size")->check(CLI::PositiveNumber);
  at->add_option("--k-max", o.k_max, "Step cap; images surviving it are censored")->check(CLI::PositiveNumber);
  auto* an = verb("analyze", Stage::Analyze, "Confusion and average-defensibility matrices, class distributions");
  an->add_option("--min-count", o.min_count, "Pairs with at most this many records are masked")
      ->check(CLI::NonNegativeNumber);
  auto* tr = verb("train-regressor", Stage::Regressor, "Train one defensibility regressor per letter");
  tr->add_flag("--init-from-classifier", o.init_from_classifier, "Start from the classifier's feature layers");
  auto* tg = verb("train-gan", Stage::GanStep1, "Train the conditional GAN");
  tg->add_option("--epochs", o.gan_epochs, "Training epochs")->check(CLI::PositiveNumber);
  auto* fg = verb("finetune-gan", Stage::GanStep2, "Fine-tune the generator against the frozen classifier");
  fg->add_option("--iterations", o.gan_iterations, "Generator updates")->check(CLI::PositiveNumber);
  fg->add_option("--adversarial-weight", o.adversarial_weight, "Weight of the discriminator loss")
      ->check(CLI::NonNegativeNumber);
  auto* eg = verb("eval-generated", Stage::EvalGenerated, "Attack generated letters and compare with originals");
  eg->add_option("--n-per-class", o.n_per_class, "Images per letter and population")->check(CLI::PositiveNumber);
  verb("report", Stage::Report, "Assemble report.html from existing outputs");

  std::string last;
  auto* run = app.add_subcommand("run", "Run every stage in order, skipping those already up to date");
  run->add_option("--stage", last, "Stop after this stage")
      ->check(CLI::IsMember({"dataset", "classifier", "attack", "analyze", "regressor", "gan-step1", "gan-step2",
                             "eval-generated", "report"}));
  run->add_option("--fonts", o.fonts, "Directory of .ttf/.otf files")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  if (g.quiet) defletter::log::threshold() = defletter::log::Level::Warn;

  try {
    const ExperimentConfig cfg = resolve(g, o);
    const defletter::RunOptions options{g.force, g.rerun};
    if (run->parsed()) {
      std::optional<Stage> stop;
      if (!last.empty()) stop = defletter::stage_from_string(last);
      for (const auto& out : defletter::run_pipeline(cfg, options, stop)) print_outcome(out);
    } else {
      print_outcome(defletter::run_stage(cfg, *selected, options));
    }
  } catch (const defletter::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitOk;
}

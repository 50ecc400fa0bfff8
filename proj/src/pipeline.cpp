#include "defletter/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "defletter/analysis.hpp"
#include "defletter/checksum.hpp"
#include "defletter/dataset.hpp"
#include "defletter/log.hpp"
#include "defletter/plot.hpp"
#include "defletter/util.hpp"

namespace defletter {
namespace fs = std::filesystem;

namespace {

nlohmann::json ratios_json(const SplitRatios& r) { return {r.train, r.val, r.test}; }

SplitRatios ratios_from(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "ratios must have three entries");
  SplitRatios r{v[0], v[1], v[2]};
  r.validate();
  return r;
}

nlohmann::json raster_json(const RasterOptions& r) {
  return {{"fit", r.fit}, {"coverage_threshold", r.coverage_threshold}, {"flatten_tolerance", r.flatten_tolerance}};
}

RasterOptions raster_from(const nlohmann::json& j) {
  RasterOptions r;
  r.fit = j.value("fit", r.fit);
  r.coverage_threshold = j.value("coverage_threshold", r.coverage_threshold);
  r.flatten_tolerance = j.value("flatten_tolerance", r.flatten_tolerance);
  return r;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string optional_exact(const std::optional<double>& v) { return v ? exact(*v) : std::string(); }

std::string comments(const ProvenanceHeader& prov) { return "# " + prov.to_line() + "\n"; }

std::string letter_string(Letter l) { return std::string(1, l.to_char()); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifact, what + " not found at " + path.string());
}

/// SHA-256 over the sorted (relative path, content digest) list of a directory.
std::string directory_checksum(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingArtifact, "no directory at " + dir.string());
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) entries.emplace_back(fs::relative(e.path(), dir).generic_string(), sha256_file(e.path()));
  std::sort(entries.begin(), entries.end());
  std::string joined;
  for (const auto& [p, h] : entries) joined += p + '\0' + h + '\n';
  return sha256_hex(joined);
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "stage.json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

/// Data rows of a CSV file, skipping comments; the header is row 0.
std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') rows.push_back(csv_cells(line));
  return rows;
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

std::string html_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "<p>(empty)</p>\n";
  std::string out = "<table>\n<tr>";
  for (const auto& h : rows[0]) out += "<th>" + html_escape(h) + "</th>";
  out += "</tr>\n";
  for (size_t r = 1; r < rows.size(); ++r) {
    out += "<tr>";
    for (const auto& c : rows[r]) out += "<td>" + html_escape(c) + "</td>";
    out += "</tr>\n";
  }
  return out + "</table>\n";
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  classifier.training.seed = s;
  regression.model.training.seed = s;
  gan.gan.seed = s;
}

void ExperimentConfig::validate() const {
  dataset.ratios.validate();
  classifier.validate();
  attack.attack.validate();
  if (min_count < 0) throw Error(ErrorCode::InvalidArgument, "min_count must be >= 0");
  regression.ratios.validate();
  regression.model.validate();
  gan.gan.validate();
  if (gan.n_per_class < 1) throw Error(ErrorCode::InvalidArgument, "n_per_class must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"seed", seed},
          {"dataset",
           {{"font_dir", dataset.font_dir.string()},
            {"png_dir", dataset.png_dir.string()},
            {"ratios", ratios_json(dataset.ratios)},
            {"raster", raster_json(dataset.raster)}}},
          {"classifier", classifier.to_json()},
          {"attack", {{"epsilon", attack.attack.epsilon},
                      {"k_max", attack.attack.k_max},
                      {"clamp", {attack.attack.clamp_min, attack.attack.clamp_max}},
                      {"split", to_string(attack.split)}}},
          {"analysis", {{"min_count", min_count}}},
          {"regression", {{"ratios", ratios_json(regression.ratios)}, {"model", regression.model.to_json()}}},
          {"gan", {{"model", gan.gan.to_json()}, {"n_per_class", gan.n_per_class}}},
          {"record_wall_clock", record_wall_clock}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.font_dir = d.value("font_dir", std::string());
      c.dataset.png_dir = d.value("png_dir", std::string());
      if (d.contains("ratios")) c.dataset.ratios = ratios_from(d.at("ratios"));
      if (d.contains("raster")) c.dataset.raster = raster_from(d.at("raster"));
    }
    if (j.contains("classifier")) c.classifier = ClassifierConfig::from_json(j.at("classifier"));
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      c.attack.attack = AttackConfig::from_json(a);
      if (a.contains("split")) c.attack.split = split_from_string(a.at("split").get<std::string>());
    }
    if (j.contains("analysis")) c.min_count = j.at("analysis").value("min_count", c.min_count);
    if (j.contains("regression")) {
      const auto& r = j.at("regression");
      if (r.contains("ratios")) c.regression.ratios = ratios_from(r.at("ratios"));
      if (r.contains("model")) c.regression.model = RegressorConfig::from_json(r.at("model"));
    }
    if (j.contains("gan")) {
      const auto& g = j.at("gan");
      if (g.contains("model")) c.gan.gan = GanConfig::from_json(g.at("model"));
      c.gan.n_per_class = g.value("n_per_class", c.gan.n_per_class);
    }
    c.record_wall_clock = j.value("record_wall_clock", false);
    c.apply_seed(j.value("seed", c.seed));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  require_file(path, "config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  auto cfg = from_json(j);
  // Relative paths in the file are relative to the file.
  const auto base = path.parent_path();
  auto anchor = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  anchor(cfg.dataset.font_dir);
  anchor(cfg.dataset.png_dir);
  anchor(cfg.out_dir);
  return cfg;
}

nlohmann::json ProvenanceHeader::to_json() const {
  return {{"toolkit", "defletter"},
          {"version", kToolkitVersion},
          {"stage", stage},
          {"inputs", inputs},
          {"config", config},
          {"seed", seed},
          {"wall_clock", wall_clock ? nlohmann::json(*wall_clock) : nlohmann::json(nullptr)}};
}

std::string ProvenanceHeader::to_line() const { return to_json().dump(); }

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Dataset: return "dataset";
    case Stage::Classifier: return "classifier";
    case Stage::Attack: return "attack";
    case Stage::Analyze: return "analyze";
    case Stage::Regressor: return "regressor";
    case Stage::GanStep1: return "gan-step1";
    case Stage::GanStep2: return "gan-step2";
    case Stage::EvalGenerated: return "eval-generated";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : kAllStages)
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::InvalidArgument, "unknown stage '" + s + "'");
}

Layout::Layout(fs::path r) : root(std::move(r)) {
  dataset_dir = root / "dataset";
  dataset = dataset_dir / "dataset.dlds";
  classifier_dir = root / "classifier";
  classifier = classifier_dir / "classifier.ckpt";
  attack_dir = root / "attack";
  attack_log = attack_dir / "attack_log.jsonl";
  analysis_dir = root / "analysis";
  regressor_dir = root / "regressor";
  gan_step1_dir = root / "gan_step1";
  generator1 = gan_step1_dir / "generator.ckpt";
  discriminator = gan_step1_dir / "discriminator.ckpt";
  gan_step2_dir = root / "gan_step2";
  generator2 = gan_step2_dir / "generator.ckpt";
  generated_dir = root / "generated";
  report_dir = root / "report";
  report = report_dir / "report.html";
}

fs::path Layout::stage_record(Stage s) const {
  switch (s) {
    case Stage::Dataset: return dataset_dir / "stage.json";
    case Stage::Classifier: return classifier_dir / "stage.json";
    case Stage::Attack: return attack_dir / "stage.json";
    case Stage::Analyze: return analysis_dir / "stage.json";
    case Stage::Regressor: return regressor_dir / "stage.json";
    case Stage::GanStep1: return gan_step1_dir / "stage.json";
    case Stage::GanStep2: return gan_step2_dir / "stage.json";
    case Stage::EvalGenerated: return generated_dir / "stage.json";
    case Stage::Report: return report_dir / "stage.json";
  }
  return root / "stage.json";
}

// ---------------------------------------------------------------- stages

namespace stages {

void Lineage::require(const std::string& what, const std::string& a, const std::string& b) const {
  if (a == b) return;
  const std::string msg = what + " checksum mismatch: " + a + " vs " + b;
  if (!force) throw Error(ErrorCode::StaleArtifact, msg);
  log::warn(msg, " (continuing under --force)");
}

void build_dataset(const DatasetSection& cfg, std::uint64_t seed, const fs::path& out, const ProvenanceHeader& prov) {
  BuildReport report;
  LabeledDataset ds = cfg.png_dir.empty()
                          ? defletter::build_dataset(cfg.font_dir, cfg.ratios, seed, cfg.raster, &report)
                          : load_png_directory(cfg.png_dir, cfg.ratios, seed);
  save_dataset(ds, out);
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : report.skipped_glyphs)
    skipped.push_back({{"font_id", s.font_id}, {"letter", std::string(1, s.letter)}, {"reason", s.reason}});
  nlohmann::json manifest{{"provenance", prov.to_json()},
                          {"dataset_checksum", dataset_checksum(ds)},
                          {"examples", ds.examples.size()},
                          {"fonts",
                           {{"train", ds.splits[Split::Train].size()},
                            {"val", ds.splits[Split::Val].size()},
                            {"test", ds.splits[Split::Test].size()}}},
                          {"unparseable_fonts", report.unparseable_fonts},
                          {"skipped_glyphs", skipped}};
  write_text(out.parent_path() / "manifest.json", manifest.dump(2) + "\n");
  log::info("dataset: ", ds.examples.size(), " images from ", ds.splits[Split::Train].size(), "/",
            ds.splits[Split::Val].size(), "/", ds.splits[Split::Test].size(), " fonts");
}

void train_classifier(const fs::path& dataset, const ClassifierConfig& cfg, const fs::path& out_dir,
                      const ProvenanceHeader& prov) {
  auto ds = load_dataset(dataset);
  auto model = defletter::train_classifier(ds, cfg);
  ensure_dir(out_dir);
  save_classifier(model, out_dir / "classifier.ckpt", prov.to_json());
  const auto& m = model.metrics;
  write_text(out_dir / "metrics.json",
             nlohmann::json{{"provenance", prov.to_json()}, {"metrics", m.to_json()}, {"parameter_checksum",
                                                                                      model.parameter_checksum()}}
                     .dump(2) +
                 "\n");
  std::string curve = comments(prov) + "epoch,train_loss,val_loss\n";
  for (size_t e = 0; e < m.history.train_loss.size(); ++e)
    curve += std::to_string(e + 1) + "," + exact(m.history.train_loss[e]) + "," + exact(m.history.val_loss[e]) + "\n";
  write_text(out_dir / "training_curve.csv", curve);
  std::string acc = comments(prov) + "class,test_accuracy\n";
  for (int c = 0; c < kNumClasses; ++c)
    acc += letter_string(Letter(c)) + "," + optional_exact(m.per_class_test_acc[static_cast<size_t>(c)]) + "\n";
  acc += "all," + optional_exact(m.test_acc) + "\n";
  write_text(out_dir / "per_class_accuracy.csv", acc);
}

void attack(const fs::path& dataset, const fs::path& classifier, const AttackSection& cfg, const fs::path& out,
            const ProvenanceHeader& prov, const Lineage& lineage) {
  auto ds = load_dataset(dataset);
  auto model = load_classifier(classifier);
  lineage.require("classifier training dataset", model.dataset_checksum, dataset_checksum(ds));
  auto log = attack_dataset(model, ds, cfg.split, cfg.attack);
  save_attack_log(log, out, prov.to_json());
  log::info("attack: ", log.records.size(), " attacked, ", log.discarded_count, " discarded, ", log.censored_count(),
            " censored");
}

void analyze(const fs::path& log_path, const fs::path& classifier, int min_count, const fs::path& out_dir,
             const ProvenanceHeader& prov, const Lineage& lineage) {
  auto log = load_attack_log(log_path);
  auto model = load_classifier(classifier);
  lineage.require("attack log classifier", log.classifier_checksum, model.parameter_checksum());
  lineage.require("attack log dataset", log.dataset_checksum, model.dataset_checksum);
  auto report = defletter::analyze(log, model.metrics.per_class_test_acc, min_count);
  export_report(report, out_dir, prov.to_line());
}

void train_regressors(const fs::path& log_path, const fs::path& dataset, const std::optional<fs::path>& classifier,
                      const RegressionSection& cfg, std::uint64_t seed, const fs::path& out_dir,
                      const ProvenanceHeader& prov, const Lineage& lineage) {
  auto log = load_attack_log(log_path);
  auto ds = load_dataset(dataset);
  lineage.require("attack log dataset", log.dataset_checksum, dataset_checksum(ds));
  std::optional<ClassifierModel> clf;
  if (classifier) {
    clf = load_classifier(*classifier);
    lineage.require("attack log classifier", log.classifier_checksum, clf->parameter_checksum());
  }
  if (cfg.model.init_from_classifier && !clf)
    throw Error(ErrorCode::MissingArtifact, "init_from_classifier is set but no classifier was given");
  auto rds = build_regression_dataset(log, ds, cfg.ratios, seed);
  ensure_dir(out_dir);

  std::string split_csv = comments(prov) + "class,font_id,split,k\n";
  for (const auto& cls : rds.classes) {
    const std::string L = letter_string(cls.label);
    for (const auto& s : cls.train) split_csv += L + "," + s.font_id + ",train," + std::to_string(s.k) + "\n";
    for (const auto& s : cls.val) split_csv += L + "," + s.font_id + ",val," + std::to_string(s.k) + "\n";
    for (const auto& s : cls.test) split_csv += L + "," + s.font_id + ",test," + std::to_string(s.k) + "\n";
  }
  write_text(out_dir / "split.csv", split_csv);

  std::string summary =
      comments(prov) + "class,n_train,n_val,n_test,pearson_r,p_value,mse,best_epoch,epochs_run\n";
  std::string residuals = comments(prov) + "class,k_lo,k_hi,count,mean_residual\n";
  std::vector<plot::ScatterPanel> panels;
  std::vector<YyPair> pooled;
  double axis = 1;
  for (const auto& cls : rds.classes) {
    const std::string L = letter_string(cls.label);
    auto model = train_regressor(cls.label, rds, cfg.model, clf ? &*clf : nullptr);
    save_regressor(model, out_dir / ("regressor_" + L + ".ckpt"), prov.to_json());
    auto eval = evaluate_regressor(model, rds);
    write_yy_csv(eval, out_dir / ("yy_" + L + ".csv"), prov.to_line());
    summary += L + "," + std::to_string(cls.train.size()) + "," + std::to_string(cls.val.size()) + "," +
               std::to_string(cls.test.size()) + "," + exact(eval.pearson_r) + "," + exact(eval.p_value) + "," +
               exact(eval.mse) + "," + std::to_string(model.metrics.history.best_epoch) + "," +
               std::to_string(model.metrics.history.epochs_run) + "\n";
    for (const auto& b : eval.residuals)
      residuals += L + "," + std::to_string(b.k_lo) + "," + std::to_string(b.k_hi) + "," + std::to_string(b.count) +
                   "," + exact(b.mean_residual) + "\n";
    char title[64];
    std::snprintf(title, sizeof title, "%s r=%.2f", L.c_str(), eval.pearson_r);
    plot::ScatterPanel panel{title, {}, {}};
    for (const auto& p : eval.pairs) {
      panel.xs.push_back(p.k);
      panel.ys.push_back(p.estimate);
      axis = std::max({axis, static_cast<double>(p.k), p.estimate});
      pooled.push_back(p);
    }
    panels.push_back(std::move(panel));
    log::info("regressor ", L, ": r=", eval.pearson_r, " p=", eval.p_value, " n=", eval.n);
  }
  for (const auto& b : residuals_by_k(pooled))
    residuals += "pooled," + std::to_string(b.k_lo) + "," + std::to_string(b.k_hi) + "," + std::to_string(b.count) +
                 "," + exact(b.mean_residual) + "\n";
  write_text(out_dir / "summary.csv", summary);
  write_text(out_dir / "residuals.csv", residuals);
  plot::scatter_grid(panels, 6, std::ceil(axis / 10) * 10).save(out_dir / "yy_grid", prov.to_line());
}

namespace {

void save_samples(const GeneratorModel& g, const fs::path& stem, const std::string& provenance) {
  std::vector<std::pair<std::string, std::vector<GlyphImage>>> rows;
  for (int c = 0; c < kNumClasses; ++c) rows.emplace_back(letter_string(Letter(c)), generate(g, Letter(c), 8, 12345 + c));
  plot::gallery(rows).save(stem, provenance);
}

}  // namespace

void train_gan(const fs::path& dataset, const GanConfig& cfg, const fs::path& out_dir, const ProvenanceHeader& prov) {
  auto ds = load_dataset(dataset);
  ensure_dir(out_dir);
  auto result = train_cgan_step1(ds, cfg, out_dir / "checkpoints");
  save_generator(result.generator, out_dir / "generator.ckpt", prov.to_json());
  save_discriminator(result.discriminator, out_dir / "discriminator.ckpt", prov.to_json());
  std::string curve = comments(prov) + "iteration,epoch,loss_d,loss_g\n";
  for (const auto& it : result.curve)
    curve += std::to_string(it.iteration) + "," + std::to_string(it.epoch) + "," + exact(it.loss_d) + "," +
             exact(it.loss_g) + "\n";
  write_text(out_dir / "curve.csv", curve);
  nlohmann::json collapsed = nlohmann::json::array();
  for (Letter l : result.collapsed_classes) collapsed.push_back(letter_string(l));
  write_text(out_dir / "diagnostics.json",
             nlohmann::json{{"provenance", prov.to_json()}, {"mode_collapse_classes", collapsed}}.dump(2) + "\n");
  save_samples(result.generator, out_dir / "samples", prov.to_line());
}

void finetune_gan(const fs::path& generator, const fs::path& classifier, const std::optional<fs::path>& discriminator,
                  const GanConfig& cfg, const fs::path& out_dir, const ProvenanceHeader& prov,
                  const Lineage& lineage) {
  auto g1 = load_generator(generator);
  g1.config.step2 = cfg.step2;
  g1.config.seed = cfg.seed;
  auto clf = load_classifier(classifier);
  lineage.require("generator vs classifier training dataset", g1.dataset_checksum, clf.dataset_checksum);
  std::optional<DiscriminatorModel> d;
  if (discriminator) d = load_discriminator(*discriminator);
  auto result = finetune_generator_step2(g1, clf, d ? &*d : nullptr);
  ensure_dir(out_dir);
  save_generator(result.generator, out_dir / "generator.ckpt", prov.to_json());
  std::string curve = comments(prov) + "iteration,loss_c\n";
  for (size_t i = 0; i < result.batch_loss.size(); ++i)
    curve += std::to_string(i + 1) + "," + exact(result.batch_loss[i]) + "\n";
  write_text(out_dir / "curve.csv", curve);
  std::string probe = comments(prov) + "iteration,probe_loss_c\n";
  for (const auto& p : result.probe) probe += std::to_string(p.iteration) + "," + exact(p.probe_loss) + "\n";
  write_text(out_dir / "probe.csv", probe);
  write_text(out_dir / "step2.json", nlohmann::json{{"provenance", prov.to_json()},
                                                    {"probe_loss_before", result.probe_before},
                                                    {"probe_loss_after", result.probe_after},
                                                    {"classifier_checksum_before", result.classifier_checksum_before},
                                                    {"classifier_checksum_after", result.classifier_checksum_after},
                                                    {"classifier_frozen", result.classifier_checksum_before ==
                                                                              result.classifier_checksum_after}}
                                                         .dump(2) +
                                                     "\n");
  save_samples(result.generator, out_dir / "samples", prov.to_line());
}

void eval_generated(const fs::path& step1, const fs::path& step2, const fs::path& classifier, const fs::path& dataset,
                    const std::optional<fs::path>& known_log, const AttackSection& attack, int n_per_class,
                    std::uint64_t seed, const fs::path& out_dir, const ProvenanceHeader& prov,
                    const Lineage& lineage) {
  auto g1 = load_generator(step1);
  auto g2 = load_generator(step2);
  auto clf = load_classifier(classifier);
  auto ds = load_dataset(dataset);
  lineage.require("classifier training dataset", clf.dataset_checksum, dataset_checksum(ds));
  lineage.require("step-2 generator classifier", g2.classifier_checksum, clf.parameter_checksum());
  std::optional<AttackLog> known;
  if (known_log && fs::exists(*known_log)) known = load_attack_log(*known_log);

  auto original = attack_originals(ds, attack.split, clf, attack.attack, n_per_class, seed, known ? &*known : nullptr);
  auto pop1 = attack_generated(g1, clf, attack.attack, n_per_class, seed, "step1");
  auto pop2 = attack_generated(g2, clf, attack.attack, n_per_class, seed, "step2");
  export_generated_report({&original, &pop1, &pop2}, attack.attack.k_max, out_dir, prov.to_line());
  log::info("generated: mean k original=", original.mean_k(), " step1=", pop1.mean_k(), " step2=", pop2.mean_k());
}

}  // namespace stages

// ---------------------------------------------------------------- orchestration

namespace {

struct StagePlan {
  fs::path dir;
  std::map<std::string, fs::path> inputs;
  nlohmann::json config;
};

StagePlan plan(const ExperimentConfig& cfg, const Layout& L, Stage stage) {
  const auto cj = cfg.to_json();
  switch (stage) {
    case Stage::Dataset:
      return {L.dataset_dir,
              {{"fonts", cfg.dataset.png_dir.empty() ? cfg.dataset.font_dir : cfg.dataset.png_dir}},
              {{"dataset", cj["dataset"]}, {"seed", cfg.seed}}};
    case Stage::Classifier: return {L.classifier_dir, {{"dataset", L.dataset}}, cj["classifier"]};
    case Stage::Attack: return {L.attack_dir, {{"dataset", L.dataset}, {"classifier", L.classifier}}, cj["attack"]};
    case Stage::Analyze:
      return {L.analysis_dir, {{"attack_log", L.attack_log}, {"classifier", L.classifier}}, cj["analysis"]};
    case Stage::Regressor:
      return {L.regressor_dir,
              {{"attack_log", L.attack_log}, {"dataset", L.dataset}, {"classifier", L.classifier}},
              {{"regression", cj["regression"]}, {"seed", cfg.seed}}};
    case Stage::GanStep1: return {L.gan_step1_dir, {{"dataset", L.dataset}}, cj["gan"]["model"]};
    case Stage::GanStep2: {
      StagePlan p{L.gan_step2_dir, {{"generator", L.generator1}, {"classifier", L.classifier}}, cj["gan"]["model"]};
      if (cfg.gan.gan.step2.adversarial_weight > 0) p.inputs["discriminator"] = L.discriminator;
      return p;
    }
    case Stage::EvalGenerated:
      return {L.generated_dir,
              {{"generator_step1", L.generator1},
               {"generator_step2", L.generator2},
               {"classifier", L.classifier},
               {"dataset", L.dataset},
               {"attack_log", L.attack_log}},
              {{"attack", cj["attack"]}, {"n_per_class", cfg.gan.n_per_class}, {"seed", cfg.seed}}};
    case Stage::Report: return {L.report_dir, {}, nlohmann::json::object()};
  }
  return {};
}

std::map<std::string, std::string> input_checksums(const StagePlan& p) {
  std::map<std::string, std::string> out;
  for (const auto& [name, path] : p.inputs) {
    if (fs::is_directory(path))
      out[name] = directory_checksum(path);
    else if (fs::exists(path))
      out[name] = sha256_file(path);
    else
      throw Error(ErrorCode::MissingArtifact, name + " not found at " + path.string() + "; run its stage first");
  }
  return out;
}

bool up_to_date(const fs::path& record, const std::map<std::string, std::string>& inputs,
                const nlohmann::json& config) {
  if (!fs::exists(record)) return false;
  nlohmann::json r;
  try {
    r = nlohmann::json::parse(read_text(record));
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  if (r.value("version", "") != kToolkitVersion || r["inputs"] != nlohmann::json(inputs) || r["config"] != config)
    return false;
  const fs::path dir = record.parent_path();
  for (const auto& [rel, sum] : r["outputs"].items()) {
    const fs::path p = dir / rel;
    if (!fs::exists(p) || sha256_file(p) != sum.get<std::string>()) return false;
  }
  return !r["outputs"].empty();
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

StageOutcome run_stage(const ExperimentConfig& cfg, Stage stage, const RunOptions& options) {
  cfg.validate();
  const Layout L(cfg.out_dir);
  StagePlan p = plan(cfg, L, stage);
  StageOutcome outcome{stage, false, {}};

  if (stage == Stage::Report) {
    ProvenanceHeader prov{to_string(stage), {}, nlohmann::json::object(), cfg.seed, std::nullopt};
    if (cfg.record_wall_clock) prov.wall_clock = now_utc();
    outcome.outputs.push_back(write_report(cfg.out_dir, prov.to_line()));
    return outcome;
  }

  if (stage == Stage::Dataset && cfg.dataset.font_dir.empty() && cfg.dataset.png_dir.empty())
    throw Error(ErrorCode::InvalidArgument, "dataset needs font_dir or png_dir");
  auto inputs = input_checksums(p);
  const fs::path record = L.stage_record(stage);
  if (!options.rerun && up_to_date(record, inputs, p.config)) {
    log::info("stage ", to_string(stage), " is up to date");
    outcome.skipped = true;
    outcome.outputs = files_under(p.dir);
    return outcome;
  }

  ProvenanceHeader prov{to_string(stage), inputs, p.config, cfg.seed, std::nullopt};
  if (cfg.record_wall_clock) prov.wall_clock = now_utc();
  const stages::Lineage lineage{options.force};
  log::info("running stage ", to_string(stage));
  std::error_code ec;
  fs::remove_all(p.dir, ec);
  ensure_dir(p.dir);

  switch (stage) {
    case Stage::Dataset: stages::build_dataset(cfg.dataset, cfg.seed, L.dataset, prov); break;
    case Stage::Classifier: stages::train_classifier(L.dataset, cfg.classifier, L.classifier_dir, prov); break;
    case Stage::Attack: stages::attack(L.dataset, L.classifier, cfg.attack, L.attack_log, prov, lineage); break;
    case Stage::Analyze: stages::analyze(L.attack_log, L.classifier, cfg.min_count, L.analysis_dir, prov, lineage); break;
    case Stage::Regressor:
      stages::train_regressors(L.attack_log, L.dataset, L.classifier, cfg.regression, cfg.seed, L.regressor_dir, prov,
                               lineage);
      break;
    case Stage::GanStep1: stages::train_gan(L.dataset, cfg.gan.gan, L.gan_step1_dir, prov); break;
    case Stage::GanStep2: {
      std::optional<fs::path> d;
      if (cfg.gan.gan.step2.adversarial_weight > 0) d = L.discriminator;
      stages::finetune_gan(L.generator1, L.classifier, d, cfg.gan.gan, L.gan_step2_dir, prov, lineage);
      break;
    }
    case Stage::EvalGenerated:
      stages::eval_generated(L.generator1, L.generator2, L.classifier, L.dataset, L.attack_log, cfg.attack,
                             cfg.gan.n_per_class, cfg.seed, L.generated_dir, prov, lineage);
      break;
    case Stage::Report: break;
  }

  outcome.outputs = files_under(p.dir);
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& f : outcome.outputs) outputs[fs::relative(f, p.dir).generic_string()] = sha256_file(f);
  write_text(record, nlohmann::json{{"stage", to_string(stage)},
                                    {"version", kToolkitVersion},
                                    {"inputs", inputs},
                                    {"config", p.config},
                                    {"outputs", outputs}}
                             .dump(2) +
                         "\n");
  return outcome;
}

std::vector<StageOutcome> run_pipeline(const ExperimentConfig& cfg, const RunOptions& options,
                                       std::optional<Stage> last) {
  std::vector<StageOutcome> out;
  for (Stage s : kAllStages) {
    out.push_back(run_stage(cfg, s, options));
    if (last && s == *last) break;
  }
  if (last && *last != Stage::Report) out.push_back(run_stage(cfg, Stage::Report, options));
  return out;
}

// ---------------------------------------------------------------- report

fs::path write_report(const fs::path& out_dir, const std::string& provenance) {
  const Layout L(out_dir);
  const bool have_classifier = fs::exists(L.classifier_dir / "metrics.json");
  const bool have_analysis = fs::exists(L.analysis_dir / "confusion.csv");
  const bool have_regression = fs::exists(L.regressor_dir / "summary.csv");
  const bool have_step1 = fs::exists(L.gan_step1_dir / "samples.svg");
  const bool have_step2 = fs::exists(L.gan_step2_dir / "step2.json");
  const bool have_generated = fs::exists(L.generated_dir / "comparison.json");
  const bool have_dataset = fs::exists(L.dataset_dir / "manifest.json");
  if (!(have_dataset || have_classifier || have_analysis || have_regression || have_step1 || have_step2 ||
        have_generated))
    throw Error(ErrorCode::MissingArtifact, "no stage outputs under " + out_dir.string());

  auto not_run = [](const std::string& stage) {
    return "<p class=\"missing\">not run (stage " + stage + ")</p>\n";
  };
  auto img = [](const std::string& rel, const std::string& alt) {
    return "<figure><img src=\"" + rel + "\" alt=\"" + alt + "\"><figcaption>" + alt + "</figcaption></figure>\n";
  };

  std::string html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>defletter report</title>\n";
  if (!provenance.empty()) {
    std::string safe = provenance;
    for (size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- -");
    html += "<!-- " + safe + " -->\n";
  }
  html +=
      "<style>body{font-family:sans-serif;max-width:1200px;margin:auto}table{border-collapse:collapse}"
      "td,th{border:1px solid #ccc;padding:2px 6px;text-align:right}.missing{color:#999}"
      "figure{display:inline-block;margin:8px}img{max-width:100%}</style></head><body>\n"
      "<h1>Letter defensibility under iterative FGSM</h1>\n";

  html += "<h2>Dataset</h2>\n";
  if (have_dataset) {
    auto m = nlohmann::json::parse(read_text(L.dataset_dir / "manifest.json"));
    html += html_table({{"images", "train fonts", "val fonts", "test fonts", "skipped glyphs", "unparseable fonts"},
                        {std::to_string(m["examples"].get<size_t>()), m["fonts"]["train"].dump(),
                         m["fonts"]["val"].dump(), m["fonts"]["test"].dump(),
                         std::to_string(m["skipped_glyphs"].size()), std::to_string(m["unparseable_fonts"].size())}});
  } else {
    html += not_run("dataset");
  }

  html += "<h2>Classifier accuracy</h2>\n";
  if (have_classifier) {
    auto m = nlohmann::json::parse(read_text(L.classifier_dir / "metrics.json"))["metrics"];
    html += html_table({{"train", "validation", "test", "best epoch", "epochs run"},
                        {m["train_acc"].dump(), m["val_acc"].dump(), m["test_acc"].dump(), m["best_epoch"].dump(),
                         m["epochs_run"].dump()}});
    if (fs::exists(L.classifier_dir / "per_class_accuracy.csv"))
      html += "<h3>Per-class test accuracy</h3>\n" + html_table(read_csv(L.classifier_dir / "per_class_accuracy.csv"));
  } else {
    html += not_run("classifier");
  }

  html += "<h2>Defensibility of the test images</h2>\n";
  if (have_analysis) {
    if (fs::exists(L.analysis_dir / "totals.csv")) html += html_table(read_csv(L.analysis_dir / "totals.csv"));
    auto conf = read_count_matrix_csv(L.analysis_dir / "confusion.csv");
    std::vector<std::tuple<std::int64_t, int, int>> pairs;
    for (int r = 0; r < kNumClasses; ++r)
      for (int c = 0; c < kNumClasses; ++c)
        if (conf[static_cast<size_t>(r)][static_cast<size_t>(c)] > 0)
          pairs.emplace_back(-conf[static_cast<size_t>(r)][static_cast<size_t>(c)], r, c);
    std::sort(pairs.begin(), pairs.end());
    std::vector<std::vector<std::string>> top{{"rank", "pair", "count"}};
    for (size_t i = 0; i < pairs.size() && i < 10; ++i)
      top.push_back({std::to_string(i + 1),
                     letter_string(Letter(std::get<1>(pairs[i]))) + "&rarr;" + letter_string(Letter(std::get<2>(pairs[i]))),
                     std::to_string(-std::get<0>(pairs[i]))});
    std::string top_html = html_table(top);
    for (size_t p; (p = top_html.find("&amp;rarr;")) != std::string::npos;) top_html.replace(p, 10, "&rarr;");
    html += "<h3>Most frequent misrecognitions</h3>\n" + top_html;
    html += img("../analysis/confusion.svg", "confusion under attack");
    html += img("../analysis/avg_defensibility.svg", "average defensibility per class pair");
    html += img("../analysis/class_distributions.svg", "per-class defensibility and test accuracy");
  } else {
    html += not_run("analyze");
  }

  html += "<h2>Defensibility regression</h2>\n";
  if (have_regression) {
    html += html_table(read_csv(L.regressor_dir / "summary.csv"));
    html += img("../regressor/yy_grid.svg", "ground truth k (x) against estimate (y)");
  } else {
    html += not_run("regressor");
  }

  html += "<h2>Generated letters</h2>\n";
  if (have_step1)
    html += img("../gan_step1/samples.svg", "step 1 samples (conditional GAN)");
  else
    html += not_run("gan-step1");
  if (have_step2) {
    auto s = nlohmann::json::parse(read_text(L.gan_step2_dir / "step2.json"));
    html += html_table({{"probe loss before", "probe loss after", "classifier frozen"},
                        {s["probe_loss_before"].dump(), s["probe_loss_after"].dump(), s["classifier_frozen"].dump()}});
    html += img("../gan_step2/samples.svg", "step 2 samples (fine-tuned against the classifier)");
  } else {
    html += not_run("gan-step2");
  }
  if (have_generated) {
    auto c = nlohmann::json::parse(read_text(L.generated_dir / "comparison.json"));
    std::vector<std::vector<std::string>> rows{{"a", "b", "mean k (a)", "mean k (b)", "p (b > a)"}};
    for (const auto& e : c["comparisons"])
      rows.push_back({e["a"].get<std::string>(), e["b"].get<std::string>(), e["mean_a"].dump(), e["mean_b"].dump(),
                      e["p_b_greater"].dump()});
    html += html_table(rows);
    html += img("../generated/hist_pooled.svg", "pooled defensibility histogram");
    html += img("../generated/hist_grid.svg", "per-class defensibility histograms");
    html += img("../generated/top8_all.svg", "most defensible generated images per class");
  } else {
    html += not_run("eval-generated");
  }
  html += "</body></html>\n";
  ensure_dir(L.report_dir);
  write_text(L.report, html);
  return L.report;
}

}  // namespace defletter

#include "defletter/attack.hpp"

#include <algorithm>
#include <sstream>

#include "defletter/dataset.hpp"
#include "defletter/log.hpp"
#include "defletter/util.hpp"

namespace defletter {

void AttackConfig::validate() const {
  if (!(epsilon > 0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (k_max < 1) throw Error(ErrorCode::InvalidArgument, "k_max must be >= 1");
  if (!(clamp_min < clamp_max)) throw Error(ErrorCode::InvalidArgument, "empty clamp range");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"epsilon", epsilon}, {"k_max", k_max}, {"clamp", {clamp_min, clamp_max}}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.k_max = j.value("k_max", c.k_max);
  if (j.contains("clamp")) {
    auto clamp = j.at("clamp").get<std::vector<float>>();
    c.clamp_min = clamp.at(0);
    c.clamp_max = clamp.at(1);
  }
  c.validate();
  return c;
}

size_t AttackLog::censored_count() const {
  return static_cast<size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.censored; }));
}

std::vector<float> fgsm_perturbation(const ClassifierModel& model, const GlyphImage& image, Letter label,
                                     double epsilon) {
  GradientGrid g = input_gradient(model, image, label);
  const float eps = static_cast<float>(epsilon);
  std::vector<float> step(kPixels);
  for (size_t i = 0; i < g.size(); ++i) step[i] = g[i] > 0 ? eps : (g[i] < 0 ? -eps : 0.0f);
  return step;
}

GlyphImage fgsm_step(const ClassifierModel& model, const GlyphImage& image, Letter label, double epsilon,
                     float clamp_min, float clamp_max) {
  if (epsilon == 0) return image;
  auto step = fgsm_perturbation(model, image, label, epsilon);
  GlyphImage out = image;
  auto px = out.pixels();
  for (size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(px[i] + step[i], clamp_min, clamp_max);
  return out;
}

AttackRecord measure_defensibility(const ClassifierModel& model, const GlyphImage& image, Letter label,
                                   const AttackConfig& cfg, bool keep_final_image) {
  cfg.validate();
  if (classify(model, image).predicted != label)
    throw Error(ErrorCode::NotCorrectlyClassified,
                std::string("image of class ") + label.to_char() + " is misrecognized before the attack");
  AttackRecord rec;
  rec.true_label = label;
  GlyphImage x = image;
  for (int t = 1; t <= cfg.k_max; ++t) {
    x = fgsm_step(model, x, label, cfg.epsilon, cfg.clamp_min, cfg.clamp_max);
    Letter predicted = classify(model, x).predicted;
    if (predicted != label) {
      rec.k = t;
      rec.misrecognized_as = predicted;
      if (keep_final_image) rec.final_image = x;
      return rec;
    }
  }
  rec.k = cfg.k_max;
  rec.censored = true;
  if (keep_final_image) rec.final_image = x;
  return rec;
}

AttackLog attack_targets(const ClassifierModel& model, const std::vector<AttackTarget>& targets,
                         const AttackConfig& cfg, bool keep_final_images) {
  cfg.validate();
  AttackLog out;
  out.config = cfg;
  out.classifier_checksum = model.parameter_checksum();
  out.presented_count = targets.size();
  size_t done = 0;
  for (const auto& target : targets) {
    if (classify(model, *target.image).predicted != target.label) {
      ++out.discarded_count;
    } else {
      AttackRecord rec = measure_defensibility(model, *target.image, target.label, cfg, keep_final_images);
      rec.font_id = target.id;
      out.records.push_back(std::move(rec));
    }
    if (++done % 500 == 0) log::info("attacked ", done, "/", targets.size(), " images");
  }
  return out;
}

AttackLog attack_dataset(const ClassifierModel& model, const LabeledDataset& ds, Split split, const AttackConfig& cfg) {
  auto subset = ds.subset(split);
  if (subset.empty()) throw Error(ErrorCode::EmptySplit, to_string(split) + " split is empty");
  std::vector<AttackTarget> targets;
  targets.reserve(subset.size());
  for (const auto* ex : subset) targets.push_back({ex->font_id, &ex->image, ex->label});
  AttackLog out = attack_targets(model, targets, cfg);
  out.dataset_checksum = dataset_checksum(ds);
  out.split = to_string(split);
  return out;
}

std::string attack_log_to_jsonl(const AttackLog& log, const nlohmann::json& provenance) {
  nlohmann::json header{{"type", "header"},
                        {"epsilon", log.config.epsilon},
                        {"k_max", log.config.k_max},
                        {"clamp", {log.config.clamp_min, log.config.clamp_max}},
                        {"classifier_checksum", log.classifier_checksum},
                        {"dataset_checksum", log.dataset_checksum},
                        {"split", log.split},
                        {"discarded_count", log.discarded_count},
                        {"presented_count", log.presented_count},
                        {"gradient_variable", "input image (sign of dJ/dx)"},
                        {"provenance", provenance}};
  std::ostringstream out;
  out << header.dump() << '\n';
  for (const auto& r : log.records) {
    nlohmann::json line{{"font_id", r.font_id},
                        {"true_label", std::string(1, r.true_label.to_char())},
                        {"k", r.k},
                        {"misrecognized_as",
                         r.misrecognized_as ? nlohmann::json(std::string(1, r.misrecognized_as->to_char())) : nullptr},
                        {"censored", r.censored}};
    out << line.dump() << '\n';
  }
  return out.str();
}

AttackLog attack_log_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  AttackLog log;
  bool have_header = false;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptDataset, "attack log line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      if (j.value("type", "") != "header") throw Error(ErrorCode::CorruptDataset, "attack log lacks a header line");
      log.config = AttackConfig::from_json(j);
      log.classifier_checksum = j.value("classifier_checksum", "");
      log.dataset_checksum = j.value("dataset_checksum", "");
      log.split = j.value("split", "");
      log.discarded_count = j.value("discarded_count", size_t{0});
      log.presented_count = j.value("presented_count", size_t{0});
      have_header = true;
      continue;
    }
    AttackRecord r;
    r.font_id = j.at("font_id").get<std::string>();
    r.true_label = Letter::from_char(j.at("true_label").get<std::string>().at(0));
    r.k = j.at("k").get<int>();
    r.censored = j.at("censored").get<bool>();
    if (!j.at("misrecognized_as").is_null())
      r.misrecognized_as = Letter::from_char(j.at("misrecognized_as").get<std::string>().at(0));
    log.records.push_back(std::move(r));
  }
  if (!have_header) throw Error(ErrorCode::CorruptDataset, "empty attack log");
  return log;
}

void save_attack_log(const AttackLog& log, const std::filesystem::path& path, const nlohmann::json& provenance) {
  write_text(path, attack_log_to_jsonl(log, provenance));
}

AttackLog load_attack_log(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "no attack log at " + path.string());
  return attack_log_from_jsonl(read_text(path));
}

}  // namespace defletter

#include "defletter/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "defletter/dataset.hpp"
#include "defletter/log.hpp"
#include "defletter/util.hpp"
#include "training.hpp"

namespace defletter {
namespace {

constexpr const char* kRegressorKind = "regressor";

torch::Tensor mean_squared(CnnNet& net, const torch::Tensor& x, const torch::Tensor& y) {
  return torch::mse_loss(net->forward(x), y);
}

struct Tensors {
  torch::Tensor x, y;
};

Tensors tensors_of(const std::vector<RegressionSample>& samples) {
  std::vector<const GlyphImage*> images;
  std::vector<float> ks;
  for (const auto& s : samples) {
    images.push_back(&s.image);
    ks.push_back(static_cast<float>(s.k));
  }
  return {to_tensor(images), torch::tensor(ks, torch::kFloat32).reshape({-1, 1})};
}

void copy_classifier_features(CnnNet& dst, const ClassifierModel& classifier) {
  torch::NoGradGuard no_grad;
  auto src = classifier.net->named_parameters();
  for (auto& p : dst->named_parameters()) {
    const std::string& name = p.key();
    if (name.rfind("fc2", 0) == 0) continue;
    const auto* s = src.find(name);
    if (!s || s->sizes() != p.value().sizes())
      throw Error(ErrorCode::InvalidArgument, "classifier layer " + name + " does not match the regressor");
    p.value().copy_(*s);
  }
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

RegressionDataset build_regression_dataset(const AttackLog& log, const LabeledDataset& ds, const SplitRatios& ratios,
                                           std::uint64_t seed, bool allow_missing_classes) {
  ratios.validate();
  const std::string ds_sum = dataset_checksum(ds);
  if (!log.dataset_checksum.empty() && log.dataset_checksum != ds_sum)
    throw Error(ErrorCode::StaleArtifact, "attack log was produced from dataset " + log.dataset_checksum +
                                              ", not " + ds_sum);

  std::map<std::pair<std::string, int>, const LabeledExample*> index;
  for (const auto& ex : ds.examples) index[{ex.font_id, ex.label.index()}] = &ex;

  RegressionDataset out;
  out.ratios = ratios;
  out.seed = seed;
  out.classifier_checksum = log.classifier_checksum;
  out.dataset_checksum = ds_sum;

  std::array<std::map<std::string, RegressionSample>, kNumClasses> per_class;
  for (const auto& r : log.records) {
    if (r.censored) {
      ++out.censored_excluded;
      continue;
    }
    auto it = index.find({r.font_id, r.true_label.index()});
    if (it == index.end())
      throw Error(ErrorCode::JoinFailure,
                  "no image for font " + r.font_id + " letter " + std::string(1, r.true_label.to_char()));
    if (!it->second->image.is_binary())
      throw Error(ErrorCode::InvalidArgument, "regression inputs must be unattacked binary images");
    per_class[static_cast<size_t>(r.true_label.index())][r.font_id] = {r.font_id, it->second->image, r.k};
  }

  Rng rng(seed);
  for (int c = 0; c < kNumClasses; ++c) {
    auto& cls = out.classes[static_cast<size_t>(c)];
    cls.label = Letter(c);
    const auto& samples = per_class[static_cast<size_t>(c)];
    if (samples.size() < 3) {
      if (allow_missing_classes) continue;
      throw Error(ErrorCode::EmptyClass, std::string("class ") + Letter(c).to_char() + " has " +
                                             std::to_string(samples.size()) + " usable records");
    }
    std::vector<std::string> fonts;
    for (const auto& [font, _] : samples) fonts.push_back(font);
    shuffle(fonts, rng);
    auto sizes = split_sizes(fonts.size(), ratios);
    for (size_t i = 0; i < fonts.size(); ++i) {
      const auto& s = samples.at(fonts[i]);
      if (i < sizes[0])
        cls.train.push_back(s);
      else if (i < sizes[0] + sizes[1])
        cls.val.push_back(s);
      else
        cls.test.push_back(s);
    }
  }
  return out;
}

void RegressorConfig::validate() const {
  arch.validate();
  training.validate();
  if (arch.fc_widths[1] != 1) throw Error(ErrorCode::InvalidArgument, "regressor output width must be 1");
}

nlohmann::json RegressorConfig::to_json() const {
  return {{"arch", arch.to_json()},
          {"training", training.to_json()},
          {"init_from_classifier", init_from_classifier},
          {"target", "raw k, unnormalized"}};
}

RegressorConfig RegressorConfig::from_json(const nlohmann::json& j) {
  RegressorConfig c;
  if (j.contains("arch")) c.arch = CnnArchitecture::from_json(j.at("arch"));
  if (j.contains("training")) c.training = TrainingConfig::from_json(j.at("training"));
  c.init_from_classifier = j.value("init_from_classifier", c.init_from_classifier);
  c.validate();
  return c;
}

nlohmann::json RegressorMetrics::to_json() const {
  return {{"best_epoch", history.best_epoch},
          {"epochs_run", history.epochs_run},
          {"train_loss", history.train_loss},
          {"val_loss", history.val_loss},
          {"test_pearson_r", optional_json(test_pearson_r)},
          {"test_p_value", optional_json(test_p_value)},
          {"test_mse", optional_json(test_mse)},
          {"test_n", test_n}};
}

RegressorMetrics RegressorMetrics::from_json(const nlohmann::json& j) {
  RegressorMetrics m;
  m.history.best_epoch = j.at("best_epoch").get<int>();
  m.history.epochs_run = j.at("epochs_run").get<int>();
  m.history.train_loss = j.at("train_loss").get<std::vector<double>>();
  m.history.val_loss = j.at("val_loss").get<std::vector<double>>();
  m.test_pearson_r = optional_from(j, "test_pearson_r");
  m.test_p_value = optional_from(j, "test_p_value");
  m.test_mse = optional_from(j, "test_mse");
  m.test_n = j.value("test_n", size_t{0});
  return m;
}

RegressorModel::RegressorModel(Letter l, RegressorConfig cfg) : label(l), net(cfg.arch), config(std::move(cfg)) {
  config.validate();
  net->eval();
}

RegressorModel train_regressor(Letter label, const RegressionDataset& rds, const RegressorConfig& cfg,
                               const ClassifierModel* classifier) {
  cfg.validate();
  const auto& cls = rds.classes[static_cast<size_t>(label.index())];
  if (cls.train.empty() || cls.val.empty())
    throw Error(ErrorCode::EmptyClass, std::string("class ") + label.to_char() + " has no training or validation data");
  use_deterministic_runtime();

  RegressorConfig run_cfg = cfg;
  run_cfg.training.seed = cfg.training.seed + static_cast<std::uint64_t>(label.index());
  torch::manual_seed(run_cfg.training.seed);
  RegressorModel model(label, run_cfg);
  if (cfg.init_from_classifier) {
    if (!classifier) throw Error(ErrorCode::InvalidArgument, "init_from_classifier needs a classifier");
    copy_classifier_features(model.net, *classifier);
  }
  auto train = tensors_of(cls.train);
  auto val = tensors_of(cls.val);
  model.metrics.history = detail::train_early_stopping(model.net, train.x, train.y, val.x, val.y, mean_squared,
                                                       run_cfg.training, std::string("regressor ") + label.to_char());
  model.classifier_checksum = rds.classifier_checksum;
  model.dataset_checksum = rds.dataset_checksum;
  if (!cls.test.empty()) {
    auto eval = evaluate_regressor(model, rds);
    // constant estimates leave r undefined
    if (std::isfinite(eval.pearson_r)) model.metrics.test_pearson_r = eval.pearson_r;
    model.metrics.test_p_value = eval.p_value;
    model.metrics.test_mse = eval.mse;
    model.metrics.test_n = eval.n;
  }
  return model;
}

std::vector<double> estimate(const RegressorModel& model, std::span<const GlyphImage* const> images) {
  torch::NoGradGuard no_grad;
  CnnNet net = model.net;
  std::vector<double> out;
  out.reserve(images.size());
  constexpr size_t kChunk = 256;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    auto y = net->forward(to_tensor(chunk)).reshape({-1}).to(torch::kFloat64).contiguous();
    out.insert(out.end(), y.data_ptr<double>(), y.data_ptr<double>() + y.numel());
  }
  return out;
}

double estimate(const RegressorModel& model, const GlyphImage& image) {
  const GlyphImage* p = &image;
  return estimate(model, std::span<const GlyphImage* const>(&p, 1)).front();
}

std::vector<ResidualBin> residuals_by_k(const std::vector<YyPair>& pairs, int bin_width) {
  if (bin_width < 1) throw Error(ErrorCode::InvalidArgument, "bin width must be positive");
  std::map<int, std::pair<size_t, double>> bins;
  for (const auto& p : pairs) {
    auto& [n, sum] = bins[(p.k - 1) / bin_width];
    ++n;
    sum += p.estimate - p.k;
  }
  std::vector<ResidualBin> out;
  for (const auto& [b, acc] : bins)
    out.push_back({b * bin_width + 1, (b + 1) * bin_width, acc.first, acc.second / static_cast<double>(acc.first)});
  return out;
}

RegressionEvaluation evaluate_regressor(const RegressorModel& model, const RegressionDataset& rds) {
  const auto& test = rds.classes[static_cast<size_t>(model.label.index())].test;
  if (test.empty())
    throw Error(ErrorCode::EmptyClass, std::string("class ") + model.label.to_char() + " has no test data");
  std::vector<const GlyphImage*> images;
  for (const auto& s : test) images.push_back(&s.image);
  auto est = estimate(model, images);
  RegressionEvaluation out;
  out.n = test.size();
  std::vector<double> ks;
  double sq = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    out.pairs.push_back({test[i].k, est[i]});
    ks.push_back(test[i].k);
    sq += (est[i] - test[i].k) * (est[i] - test[i].k);
  }
  out.mse = sq / static_cast<double>(out.n);
  out.pearson_r = pearson(ks, est);
  out.p_value = pearson_p_value_positive(out.pearson_r, out.n);
  out.residuals = residuals_by_k(out.pairs);
  return out;
}

void save_regressor(const RegressorModel& model, const std::filesystem::path& path, const nlohmann::json& provenance) {
  Checkpoint ckpt;
  ckpt.header = {{"kind", kRegressorKind},
                 {"label", std::string(1, model.label.to_char())},
                 {"config", model.config.to_json()},
                 {"metrics", model.metrics.to_json()},
                 {"classifier_checksum", model.classifier_checksum},
                 {"dataset_checksum", model.dataset_checksum},
                 {"parameter_checksum", model.parameter_checksum()},
                 {"provenance", provenance}};
  ckpt.tensors = export_state(*model.net);
  save_checkpoint(ckpt, path);
}

RegressorModel load_regressor(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.header.value("kind", "") != kRegressorKind)
    throw Error(ErrorCode::CorruptDataset, path.string() + " is not a regressor checkpoint");
  RegressorModel model(Letter::from_char(ckpt.header.at("label").get<std::string>().at(0)),
                       RegressorConfig::from_json(ckpt.header.at("config")));
  import_state(*model.net, ckpt.tensors);
  model.metrics = RegressorMetrics::from_json(ckpt.header.at("metrics"));
  model.classifier_checksum = ckpt.header.value("classifier_checksum", "");
  model.dataset_checksum = ckpt.header.value("dataset_checksum", "");
  return model;
}

void write_yy_csv(const RegressionEvaluation& eval, const std::filesystem::path& path, const std::string& provenance) {
  std::string out;
  std::istringstream in(provenance);
  for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
  out += "k,estimate\n";
  for (const auto& p : eval.pairs) out += std::to_string(p.k) + "," + exact(p.estimate) + "\n";
  write_text(path, out);
}

std::vector<YyPair> read_yy_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<YyPair> out;
  bool header = true;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::CorruptDataset, path.string() + ": malformed row");
    out.push_back({std::stoi(line.substr(0, comma)), std::strtod(line.c_str() + comma + 1, nullptr)});
  }
  return out;
}

}  // namespace defletter

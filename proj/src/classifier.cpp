#include "defletter/classifier.hpp"

#include <cmath>

#include "defletter/dataset.hpp"
#include "defletter/log.hpp"
#include "training.hpp"

namespace defletter {
namespace {

constexpr const char* kClassifierKind = "classifier";

struct SplitTensors {
  torch::Tensor x;
  torch::Tensor y;
};

SplitTensors split_tensors(const LabeledDataset& ds, Split split) {
  auto subset = ds.subset(split);
  std::vector<const GlyphImage*> images;
  std::vector<std::int64_t> labels;
  for (const auto* ex : subset) {
    images.push_back(&ex->image);
    labels.push_back(ex->label.index());
  }
  return {to_tensor(images), torch::tensor(labels, torch::kLong)};
}

torch::Tensor mean_nll(CnnNet& net, const torch::Tensor& x, const torch::Tensor& y) {
  return torch::nll_loss(torch::log_softmax(net->forward(x), 1), y);
}

}  // namespace

void ClassifierConfig::validate() const {
  arch.validate();
  training.validate();
  if (arch.fc_widths[1] != kNumClasses) throw Error(ErrorCode::InvalidArgument, "classifier output width must be 26");
}

nlohmann::json ClassifierConfig::to_json() const { return {{"arch", arch.to_json()}, {"training", training.to_json()}}; }

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  if (j.contains("arch")) c.arch = CnnArchitecture::from_json(j.at("arch"));
  if (j.contains("training")) c.training = TrainingConfig::from_json(j.at("training"));
  c.validate();
  return c;
}

nlohmann::json ClassifierMetrics::to_json() const {
  nlohmann::json j{{"train_acc", train_acc},
                   {"val_acc", val_acc},
                   {"test_acc", test_acc ? nlohmann::json(*test_acc) : nlohmann::json(nullptr)},
                   {"per_class_test_acc", nlohmann::json::array()},
                   {"best_epoch", history.best_epoch},
                   {"epochs_run", history.epochs_run},
                   {"train_loss", history.train_loss},
                   {"val_loss", history.val_loss}};
  for (const auto& a : per_class_test_acc) j["per_class_test_acc"].push_back(a ? nlohmann::json(*a) : nullptr);
  return j;
}

ClassifierMetrics ClassifierMetrics::from_json(const nlohmann::json& j) {
  ClassifierMetrics m;
  m.train_acc = j.at("train_acc").get<double>();
  m.val_acc = j.at("val_acc").get<double>();
  if (!j.at("test_acc").is_null()) m.test_acc = j.at("test_acc").get<double>();
  if (j.contains("per_class_test_acc")) {
    const auto& pc = j.at("per_class_test_acc");
    for (size_t c = 0; c < pc.size() && c < kNumClasses; ++c)
      if (!pc[c].is_null()) m.per_class_test_acc[c] = pc[c].get<double>();
  }
  m.history.best_epoch = j.at("best_epoch").get<int>();
  m.history.epochs_run = j.at("epochs_run").get<int>();
  m.history.train_loss = j.at("train_loss").get<std::vector<double>>();
  m.history.val_loss = j.at("val_loss").get<std::vector<double>>();
  return m;
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg) : net(cfg.arch), config(std::move(cfg)) {
  config.validate();
  net->eval();
}

ClassifierModel ClassifierModel::clone(torch::Dtype dtype) const {
  ClassifierModel copy = *this;
  copy.net = std::dynamic_pointer_cast<CnnNetImpl>(net->clone());
  copy.net->to(dtype);
  copy.net->eval();
  return copy;
}

ClassifierModel train_classifier(const LabeledDataset& ds, const ClassifierConfig& cfg) {
  cfg.validate();
  use_deterministic_runtime();
  auto train = split_tensors(ds, Split::Train);
  auto val = split_tensors(ds, Split::Val);
  if (train.x.size(0) == 0) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val.x.size(0) == 0) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  torch::manual_seed(cfg.training.seed);
  ClassifierModel model(cfg);
  model.metrics.history = detail::train_early_stopping(model.net, train.x, train.y, val.x, val.y, mean_nll,
                                                       cfg.training, "classifier");
  model.metrics.train_acc = evaluate(model, ds, Split::Train);
  model.metrics.val_acc = evaluate(model, ds, Split::Val);
  if (!ds.subset(Split::Test).empty()) {
    model.metrics.test_acc = evaluate(model, ds, Split::Test);
    model.metrics.per_class_test_acc = evaluate_per_class(model, ds, Split::Test);
  }
  model.dataset_checksum = dataset_checksum(ds);
  log::info("classifier accuracies train=", model.metrics.train_acc, " val=", model.metrics.val_acc,
            " test=", model.metrics.test_acc.value_or(std::nan("")));
  return model;
}

Classification classify(const ClassifierModel& model, const GlyphImage& image) {
  torch::NoGradGuard no_grad;
  CnnNet net = model.net;
  auto logits = net->forward(to_tensor(image)).reshape({kNumClasses}).contiguous();
  Classification out;
  const float* data = logits.data_ptr<float>();
  std::copy(data, data + kNumClasses, out.logits.begin());
  out.predicted = Letter(static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin()));
  return out;
}

torch::Tensor classification_loss(const CnnNet& net, const torch::Tensor& images, const torch::Tensor& labels) {
  CnnNet handle = net;
  return torch::nll_loss(torch::log_softmax(handle->forward(images), 1), labels, {}, at::Reduction::Sum);
}

torch::Tensor loss_input_gradient(const CnnNet& net, const torch::Tensor& images, const torch::Tensor& labels) {
  auto x = images.detach().clone().set_requires_grad(true);
  auto loss = classification_loss(net, x, labels);
  return torch::autograd::grad({loss}, {x})[0].detach();
}

GradientGrid input_gradient(const ClassifierModel& model, const GlyphImage& image, Letter label) {
  auto g = loss_input_gradient(model.net, to_tensor(image), torch::tensor({std::int64_t{label.index()}}))
               .to(torch::kFloat32)
               .contiguous();
  GradientGrid out{};
  std::copy(g.data_ptr<float>(), g.data_ptr<float>() + kPixels, out.begin());
  return out;
}

std::vector<Letter> predict(const ClassifierModel& model, std::span<const GlyphImage* const> images) {
  torch::NoGradGuard no_grad;
  std::vector<Letter> out;
  out.reserve(images.size());
  constexpr size_t kChunk = 256;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    CnnNet net = model.net;
    auto pred = net->forward(to_tensor(chunk)).argmax(1).contiguous();
    for (std::int64_t i = 0; i < pred.size(0); ++i) out.emplace_back(static_cast<int>(pred[i].item<std::int64_t>()));
  }
  return out;
}

double evaluate(const ClassifierModel& model, const LabeledDataset& ds, Split split) {
  auto subset = ds.subset(split);
  if (subset.empty()) throw Error(ErrorCode::EmptySplit, to_string(split) + " split is empty");
  std::vector<const GlyphImage*> images;
  for (const auto* ex : subset) images.push_back(&ex->image);
  auto pred = predict(model, images);
  size_t correct = 0;
  for (size_t i = 0; i < subset.size(); ++i) correct += pred[i] == subset[i]->label;
  return static_cast<double>(correct) / static_cast<double>(subset.size());
}

std::array<std::optional<double>, kNumClasses> evaluate_per_class(const ClassifierModel& model,
                                                                   const LabeledDataset& ds, Split split) {
  auto subset = ds.subset(split);
  std::vector<const GlyphImage*> images;
  for (const auto* ex : subset) images.push_back(&ex->image);
  auto pred = predict(model, images);
  std::array<int, kNumClasses> total{}, correct{};
  for (size_t i = 0; i < subset.size(); ++i) {
    int c = subset[i]->label.index();
    ++total[static_cast<size_t>(c)];
    correct[static_cast<size_t>(c)] += pred[i] == subset[i]->label;
  }
  std::array<std::optional<double>, kNumClasses> out;
  for (size_t c = 0; c < kNumClasses; ++c)
    if (total[c] > 0) out[c] = static_cast<double>(correct[c]) / total[c];
  return out;
}

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path, const nlohmann::json& provenance) {
  Checkpoint ckpt;
  ckpt.header = {{"kind", kClassifierKind},
                 {"config", model.config.to_json()},
                 {"metrics", model.metrics.to_json()},
                 {"dataset_checksum", model.dataset_checksum},
                 {"parameter_checksum", model.parameter_checksum()},
                 {"provenance", provenance}};
  ckpt.tensors = export_state(*model.net);
  save_checkpoint(ckpt, path);
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.header.value("kind", "") != kClassifierKind)
    throw Error(ErrorCode::CorruptDataset, path.string() + " is not a classifier checkpoint");
  ClassifierModel model(ClassifierConfig::from_json(ckpt.header.at("config")));
  import_state(*model.net, ckpt.tensors);
  model.metrics = ClassifierMetrics::from_json(ckpt.header.at("metrics"));
  model.dataset_checksum = ckpt.header.at("dataset_checksum").get<std::string>();
  return model;
}

}  // namespace defletter

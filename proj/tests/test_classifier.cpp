#include <gtest/gtest.h>

#include <cmath>

#include "defletter/classifier.hpp"
#include "defletter/dataset.hpp"
#include "defletter/nn.hpp"
#include "support.hpp"

using namespace defletter;
using namespace testing_support;

namespace {

ClassifierConfig quick_config(int max_epochs = 25) {
  ClassifierConfig cfg;
  cfg.training.max_epochs = max_epochs;
  cfg.training.patience = 3;
  cfg.training.batch_size = 32;
  cfg.training.seed = 17;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

const ClassifierModel& trained_bar_classifier() {
  static const ClassifierModel model = [] {
    auto ds = bar_dataset(20, 3);
    return train_classifier(ds, quick_config());
  }();
  return model;
}

}  // namespace

TEST(AdaDelta, MatchesScalarRecurrence) {
  auto p = torch::tensor({1.5}, torch::kFloat64).set_requires_grad(true);
  AdaDelta opt({p}, 1.0, 0.9, 1e-6);
  long double x = 1.5L, eg = 0, edx = 0;
  for (int step = 0; step < 20; ++step) {
    opt.zero_grad();
    (0.5 * p * p).sum().backward();
    opt.step();
    const long double g = x;
    eg = 0.9L * eg + 0.1L * g * g;
    const long double dx = std::sqrt(edx + 1e-6L) / std::sqrt(eg + 1e-6L) * g;
    x -= dx;
    edx = 0.9L * edx + 0.1L * dx * dx;
    ASSERT_NEAR(p.item<double>(), static_cast<double>(x), 1e-12) << "step " << step;
  }
}

TEST(Architecture, FlatSideAndValidation) {
  CnnArchitecture arch;
  EXPECT_EQ(arch.flat_side(), 14);
  arch.kernel = 40;
  EXPECT_THROW(arch.validate(), Error);
  CnnArchitecture round = CnnArchitecture::from_json(CnnArchitecture{}.to_json());
  EXPECT_EQ(round, CnnArchitecture{});
  ClassifierConfig bad;
  bad.arch.fc_widths[1] = 10;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::InvalidArgument);
}

TEST(Tensors, ImageRoundTrip) {
  auto img = random_image(3);
  auto t = to_tensor(img);
  EXPECT_EQ(t.sizes(), (std::vector<std::int64_t>{1, 1, kCanvas, kCanvas}));
  EXPECT_EQ(from_tensor(t[0]), img);
  EXPECT_FLOAT_EQ(t[0][0][5][7].item<float>(), img.at(5, 7));
}

TEST(Checkpoint, StateRoundTripAndChecksum) {
  CnnNet a, b;
  EXPECT_NE(state_checksum(*a), state_checksum(*b));
  import_state(*b, export_state(*a));
  EXPECT_EQ(state_checksum(*a), state_checksum(*b));
  {
    torch::NoGradGuard no_grad;
    b->fc2->bias[3] += 1e-6f;
  }
  EXPECT_NE(state_checksum(*a), state_checksum(*b));
}

TEST(Checkpoint, EncodeDecodeAndCorruption) {
  CnnNet net;
  Checkpoint ckpt{{{"kind", "test"}, {"n", 3}}, export_state(*net)};
  auto bytes = encode_checkpoint(ckpt);
  auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.header, ckpt.header);
  EXPECT_EQ(back.tensors, ckpt.tensors);
  auto bad = bytes;
  bad[bad.size() / 2] ^= 1;
  EXPECT_EQ(code_of([&] { decode_checkpoint(bad); }), ErrorCode::CorruptDataset);
  EXPECT_EQ(code_of([] { load_checkpoint("/nonexistent/x.ckpt"); }), ErrorCode::MissingArtifact);
}

TEST(Loss, IsSummedNegativeLogSoftmax) {
  ClassifierModel model(ClassifierConfig{});
  std::vector<GlyphImage> imgs{random_image(1), random_image(2), random_image(3)};
  std::vector<const GlyphImage*> ptrs{&imgs[0], &imgs[1], &imgs[2]};
  auto x = to_tensor(ptrs);
  auto y = torch::tensor({std::int64_t{4}, std::int64_t{0}, std::int64_t{25}});
  const double loss = classification_loss(model.net, x, y).item<double>();
  torch::NoGradGuard no_grad;
  auto logits = model.net->forward(x).to(torch::kFloat64);
  long double expected = 0;
  for (int i = 0; i < 3; ++i) {
    long double mx = -1e300L, sum = 0;
    for (int c = 0; c < kNumClasses; ++c) mx = std::max<long double>(mx, logits[i][c].item<double>());
    for (int c = 0; c < kNumClasses; ++c) sum += std::exp(static_cast<long double>(logits[i][c].item<double>()) - mx);
    expected += -(logits[i][y[i].item<std::int64_t>()].item<double>() - mx - std::log(sum));
  }
  EXPECT_NEAR(loss, static_cast<double>(expected), 1e-4 * std::abs(static_cast<double>(expected)));
}

TEST(Gradient, PerImageGradientIsIndependentOfBatch) {
  ClassifierModel model(ClassifierConfig{});
  std::vector<GlyphImage> imgs{random_image(10), random_image(11), random_image(12), random_image(13)};
  std::vector<const GlyphImage*> ptrs;
  for (auto& i : imgs) ptrs.push_back(&i);
  auto labels = torch::tensor({std::int64_t{1}, std::int64_t{7}, std::int64_t{7}, std::int64_t{20}});
  auto batch = loss_input_gradient(model.net, to_tensor(ptrs), labels);
  for (int i = 0; i < 4; ++i) {
    auto solo = input_gradient(model, imgs[static_cast<size_t>(i)], Letter(static_cast<int>(labels[i].item<std::int64_t>())));
    auto row = batch[i].contiguous();
    const float* p = row.data_ptr<float>();
    double diff = 0, norm = 0;
    for (int k = 0; k < kPixels; ++k) {
      diff = std::max(diff, std::abs(static_cast<double>(p[k] - solo[static_cast<size_t>(k)])));
      norm = std::max(norm, std::abs(static_cast<double>(solo[static_cast<size_t>(k)])));
    }
    EXPECT_LE(diff, 1e-5 * norm + 1e-12);
  }
}

TEST(Gradient, MatchesCentralDifferencesOnRandomNetwork) {
  torch::manual_seed(3);
  ClassifierModel model(ClassifierConfig{});
  for (int t = 0; t < 10; ++t) {
    auto img = random_image(100 + t);
    auto check = check_input_gradient(model, img, Letter((t * 7) % kNumClasses), 128, 500 + t);
    EXPECT_LT(check.relative_error, 1e-3) << "pair " << t;
    EXPECT_GE(check.probes - check.kinked, 16u) << "pair " << t;
    EXPECT_GT(check.analytic_norm, 0);
    EXPECT_LT(check.splice_error, 1e-12);
  }
}

TEST(Training, LearnsBarsAndRestoresBestEpoch) {
  const auto& model = trained_bar_classifier();
  const auto& m = model.metrics;
  ASSERT_TRUE(m.test_acc.has_value());
  EXPECT_GE(*m.test_acc, 0.95);
  EXPECT_GE(m.train_acc, 0.95);
  const auto& h = m.history;
  ASSERT_EQ(static_cast<int>(h.val_loss.size()), h.epochs_run);
  auto best = std::min_element(h.val_loss.begin(), h.val_loss.end()) - h.val_loss.begin() + 1;
  EXPECT_EQ(h.best_epoch, best);
  EXPECT_TRUE(h.epochs_run == 25 || h.epochs_run == h.best_epoch + 3);
  for (const auto& acc : m.per_class_test_acc) EXPECT_TRUE(acc.has_value());
}

TEST(Training, IsDeterministicForAFixedSeed) {
  auto ds = bar_dataset(10, 5);
  auto a = train_classifier(ds, quick_config(3));
  auto b = train_classifier(ds, quick_config(3));
  EXPECT_EQ(a.parameter_checksum(), b.parameter_checksum());
  EXPECT_EQ(a.metrics.history.val_loss, b.metrics.history.val_loss);
  auto cfg = quick_config(3);
  cfg.training.seed = 18;
  auto c = train_classifier(ds, cfg);
  EXPECT_NE(a.parameter_checksum(), c.parameter_checksum());
}

TEST(Training, ErrorsOnEmptyValidationAndDivergence) {
  auto ds = bar_dataset(6, 2);
  ds.splits[Split::Train].insert(ds.splits[Split::Val].begin(), ds.splits[Split::Val].end());
  ds.splits[Split::Val].clear();
  EXPECT_EQ(code_of([&] { train_classifier(ds, quick_config(2)); }), ErrorCode::EmptySplit);

  auto cfg = quick_config(3);
  cfg.training.learning_rate = 1e30;
  EXPECT_EQ(code_of([&] { train_classifier(bar_dataset(6, 2), cfg); }), ErrorCode::DivergedTraining);
}

TEST(Classifier, CheckpointRoundTrip) {
  const auto& model = trained_bar_classifier();
  auto dir = fresh_dir("classifier_ckpt");
  save_classifier(model, dir / "c.ckpt", {{"note", "test"}});
  auto back = load_classifier(dir / "c.ckpt");
  EXPECT_EQ(back.parameter_checksum(), model.parameter_checksum());
  EXPECT_EQ(back.dataset_checksum, model.dataset_checksum);
  EXPECT_EQ(back.metrics.to_json(), model.metrics.to_json());
  auto img = random_image(9);
  EXPECT_EQ(classify(back, img).logits, classify(model, img).logits);
}

TEST(Classifier, PerClassAccuracyIsEmptyForAbsentClasses) {
  const auto& model = trained_bar_classifier();
  auto ds = bar_dataset(6, 2);
  std::erase_if(ds.examples, [](const LabeledExample& e) { return e.label.index() == 4; });
  auto acc = evaluate_per_class(model, ds, Split::Test);
  EXPECT_FALSE(acc[4].has_value());
  EXPECT_TRUE(acc[5].has_value());
  double total = 0;
  size_t n = 0;
  for (const auto* ex : ds.subset(Split::Test)) {
    total += classify(model, ex->image).predicted == ex->label;
    ++n;
  }
  EXPECT_NEAR(evaluate(model, ds, Split::Test), total / static_cast<double>(n), 1e-12);
}

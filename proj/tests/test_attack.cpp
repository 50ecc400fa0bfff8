#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "defletter/attack.hpp"
#include "defletter/classifier.hpp"
#include "defletter/dataset.hpp"
#include "support.hpp"

using namespace defletter;
using namespace testing_support;

namespace {

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
    ClassifierConfig cfg;
    cfg.training.max_epochs = 25;
    cfg.training.patience = 3;
    cfg.training.batch_size = 32;
    cfg.training.seed = 17;
    return train_classifier(bar_dataset(20, 3), cfg);
  }();
  return model;
}

}  // namespace

TEST(LinearProbe, LogitMarginMatchesDirectComputation) {
  auto lc = make_linear_case(1, 10, 0.02);
  auto model = linear_probe_model(lc.v, lc.bias, lc.a, lc.b);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto img = random_image(s, -0.5f, 0.5f);
    auto logits = classify(model, img).logits;
    EXPECT_NEAR(logits[static_cast<size_t>(lc.a.index())] - logits[static_cast<size_t>(lc.b.index())],
                linear_probe_margin(lc.v, lc.bias, img), 1e-4);
  }
}

TEST(LinearProbe, LossGradientHasInputIndependentDirection) {
  // J = -log softmax_a depends on x only through the margin, so
  // dJ/dx = -(1 - p_a) * d(margin)/dx: a fixed direction with an input-dependent scale.
  auto lc = make_linear_case(3, 8, 0.02);
  auto model = linear_probe_model(lc.v, lc.bias, lc.a, lc.b);
  std::array<double, kPixels> dm{};
  for (int e = 0; e < 14; ++e)
    for (int f = 0; f < 14; ++f)
      for (int r = 4 * e + 3; r < 4 * e + 7; ++r)
        for (int c = 4 * f + 3; c < 4 * f + 7; ++c) dm[static_cast<size_t>(r * kCanvas + c)] = lc.v[static_cast<size_t>(e * 14 + f)] / 16;
  std::vector<double> scales;
  for (const auto& x : {lc.x0, random_image(77, -0.3f, 0.3f)}) {
    auto g = input_gradient(model, x, lc.a);
    double scale = 0;
    for (size_t i = 0; i < dm.size(); ++i)
      if (dm[i] == 0) {
        EXPECT_EQ(g[i], 0.0f) << "unread pixel " << i;
      } else if (scale == 0) {
        scale = -g[i] / dm[i];
      } else {
        ASSERT_NEAR(-g[i] / dm[i], scale, 1e-3 * scale) << i;
      }
    EXPECT_GT(scale, 0);
    scales.push_back(scale);
  }
  EXPECT_GT(std::abs(scales[0] - scales[1]), 1e-3 * scales[0]);
}

TEST(Attack, MatchesClosedFormOnLinearModels) {
  AttackConfig cfg;
  for (std::uint64_t t = 0; t < 25; ++t) {
    const int target = 1 + static_cast<int>(t % 30);
    auto lc = make_linear_case(40 + t, target, cfg.epsilon);
    ASSERT_EQ(lc.expected_k, target);
    auto model = linear_probe_model(lc.v, lc.bias, lc.a, lc.b);
    auto rec = measure_defensibility(model, lc.x0, lc.a, cfg);
    EXPECT_EQ(rec.k, lc.expected_k) << "model " << t;
    EXPECT_FALSE(rec.censored);
    ASSERT_TRUE(rec.misrecognized_as.has_value());
    EXPECT_EQ(*rec.misrecognized_as, lc.b);
  }
}

TEST(Attack, CensorsAtKMax) {
  AttackConfig cfg;
  cfg.k_max = 5;
  auto lc = make_linear_case(7, 12, cfg.epsilon);
  auto model = linear_probe_model(lc.v, lc.bias, lc.a, lc.b);
  auto rec = measure_defensibility(model, lc.x0, lc.a, cfg, true);
  EXPECT_TRUE(rec.censored);
  EXPECT_EQ(rec.k, cfg.k_max);
  EXPECT_FALSE(rec.misrecognized_as.has_value());
  ASSERT_TRUE(rec.final_image.has_value());
  EXPECT_NEAR(linear_probe_margin(lc.v, lc.bias, *rec.final_image),
              linear_probe_margin(lc.v, lc.bias, lc.x0) - 5 * cfg.epsilon * 15.0, 1e-4);
}

TEST(Attack, MisclassifiedInputIsRejectedAndDiscarded) {
  auto lc = make_linear_case(9, 3, 0.02);
  auto model = linear_probe_model(lc.v, -lc.bias - 2 * linear_probe_margin(lc.v, 0.0, lc.x0), lc.a, lc.b);
  ASSERT_LT(linear_probe_margin(lc.v, -lc.bias - 2 * linear_probe_margin(lc.v, 0.0, lc.x0), lc.x0), 0);
  EXPECT_EQ(code_of([&] { measure_defensibility(model, lc.x0, lc.a, {}); }), ErrorCode::NotCorrectlyClassified);

  auto good = linear_probe_model(lc.v, lc.bias, lc.a, lc.b);
  std::vector<AttackTarget> targets{{"right", &lc.x0, lc.a}, {"wrong", &lc.x0, lc.b}};
  auto log = attack_targets(good, targets, {});
  EXPECT_EQ(log.presented_count, 2u);
  EXPECT_EQ(log.discarded_count, 1u);
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_EQ(log.records[0].font_id, "right");
}

TEST(Fgsm, StepGeometryOnRandomNetwork) {
  torch::manual_seed(5);
  ClassifierModel model(ClassifierConfig{});
  const float eps = 0.02f;
  int steps = 0;
  for (std::uint64_t s = 0; steps < 1000; ++s) {
    GlyphImage x = random_image(s, -1.0f, 1.0f);
    for (int t = 0; t < 20; ++t, ++steps) {
      auto delta = fgsm_perturbation(model, x, Letter(static_cast<int>(s % kNumClasses)), eps);
      auto next = fgsm_step(model, x, Letter(static_cast<int>(s % kNumClasses)), eps);
      for (int i = 0; i < kPixels; ++i) {
        const float d = delta[static_cast<size_t>(i)];
        ASSERT_TRUE(d == eps || d == -eps || d == 0.0f);
        const float expected = std::clamp(x.pixels()[static_cast<size_t>(i)] + d, -1.0f, 1.0f);
        ASSERT_EQ(next.pixels()[static_cast<size_t>(i)], expected);
      }
      ASSERT_TRUE(next.in_range());
      x = next;
    }
  }
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  ClassifierModel model(ClassifierConfig{});
  auto x = random_image(4);
  EXPECT_EQ(fgsm_step(model, x, Letter(3), 0.0), x);
}

TEST(Attack, TrajectoryReplaysExactly) {
  const auto& model = trained_bar_classifier();
  auto ds = bar_dataset(20, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  int replayed = 0;
  for (const auto* ex : ds.subset(Split::Test)) {
    if (classify(model, ex->image).predicted != ex->label) continue;
    auto rec = measure_defensibility(model, ex->image, ex->label, cfg, true);
    GlyphImage x = ex->image;
    for (int t = 0; t < rec.k; ++t) {
      ASSERT_EQ(classify(model, x).predicted, ex->label) << "step " << t;
      x = fgsm_step(model, x, ex->label, cfg.epsilon);
    }
    EXPECT_EQ(x, *rec.final_image);
    if (!rec.censored) {
      EXPECT_NE(classify(model, x).predicted, ex->label);
      EXPECT_EQ(classify(model, x).predicted, *rec.misrecognized_as);
    }
    ++replayed;
  }
  EXPECT_GE(replayed, 80);
}

TEST(Attack, DatasetLogAccountsForEveryImage) {
  const auto& model = trained_bar_classifier();
  auto ds = bar_dataset(20, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  auto log = attack_dataset(model, ds, Split::Test, cfg);
  EXPECT_EQ(log.presented_count, ds.subset(Split::Test).size());
  EXPECT_EQ(log.records.size() + log.discarded_count, log.presented_count);
  EXPECT_EQ(log.classifier_checksum, model.parameter_checksum());
  EXPECT_EQ(log.dataset_checksum, dataset_checksum(ds));
  EXPECT_EQ(log.split, "test");
  for (const auto& r : log.records) {
    EXPECT_GE(r.k, 1);
    EXPECT_LE(r.k, cfg.k_max);
    EXPECT_EQ(r.censored, !r.misrecognized_as.has_value());
    if (r.misrecognized_as) {
      EXPECT_NE(*r.misrecognized_as, r.true_label);
    }
  }
  ds.splits[Split::Test].clear();
  EXPECT_EQ(code_of([&] { attack_dataset(model, ds, Split::Test, cfg); }), ErrorCode::EmptySplit);
}

TEST(AttackLog, JsonlRoundTrip) {
  AttackLog log;
  log.config.epsilon = 0.013;
  log.config.k_max = 40;
  log.classifier_checksum = "abc";
  log.dataset_checksum = "def";
  log.split = "test";
  log.discarded_count = 3;
  log.presented_count = 6;
  log.records.push_back({"f1", Letter(4), 7, Letter(5), false, std::nullopt});
  log.records.push_back({"f2", Letter(0), 40, std::nullopt, true, std::nullopt});
  log.records.push_back({"f3", Letter(25), 1, Letter(0), false, std::nullopt});
  auto dir = fresh_dir("attack_log");
  save_attack_log(log, dir / "log.jsonl", {{"seed", 1}});
  auto back = load_attack_log(dir / "log.jsonl");
  EXPECT_EQ(back.records, log.records);
  EXPECT_EQ(back.config, log.config);
  EXPECT_EQ(back.classifier_checksum, "abc");
  EXPECT_EQ(back.dataset_checksum, "def");
  EXPECT_EQ(back.discarded_count, 3u);
  EXPECT_EQ(back.presented_count, 6u);
  EXPECT_EQ(back.censored_count(), 1u);
  EXPECT_EQ(attack_log_to_jsonl(back, {{"seed", 1}}), attack_log_to_jsonl(log, {{"seed", 1}}));

  EXPECT_EQ(code_of([] { attack_log_from_jsonl("{\"font_id\":\"x\"}\n"); }), ErrorCode::CorruptDataset);
  EXPECT_EQ(code_of([] { attack_log_from_jsonl("not json\n"); }), ErrorCode::CorruptDataset);
  EXPECT_EQ(code_of([] { attack_log_from_jsonl(""); }), ErrorCode::CorruptDataset);
  EXPECT_EQ(code_of([] { load_attack_log("/nonexistent/log.jsonl"); }), ErrorCode::MissingArtifact);
}

TEST(AttackConfig, ValidatesAndRoundTrips) {
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.k_max = 7;
  cfg.clamp_min = -0.5f;
  EXPECT_EQ(AttackConfig::from_json(cfg.to_json()), cfg);
  cfg.epsilon = 0;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::InvalidArgument);
  cfg.epsilon = 0.1;
  cfg.k_max = 0;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::InvalidArgument);
  cfg.k_max = 3;
  cfg.clamp_max = -0.5f;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::InvalidArgument);
}

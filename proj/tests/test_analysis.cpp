#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "defletter/analysis.hpp"
#include "defletter/util.hpp"
#include "support.hpp"

using namespace defletter;
using namespace testing_support;

namespace {

/// Random log with skewed pair frequencies so some pairs clear min_count.
AttackLog synthetic_log(std::uint64_t seed, size_t n) {
  std::mt19937_64 rng(seed);
  AttackLog log;
  log.config.k_max = 60;
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1), k(1, 59), near(1, 3);
  for (size_t i = 0; i < n; ++i) {
    AttackRecord r;
    r.font_id = "f" + std::to_string(i);
    r.true_label = Letter(cls(rng) % 6);
    if (rng() % 17 == 0) {
      r.k = log.config.k_max;
      r.censored = true;
    } else {
      r.k = k(rng);
      r.misrecognized_as = Letter((r.true_label.index() + near(rng)) % kNumClasses);
    }
    log.records.push_back(r);
  }
  log.discarded_count = n / 9;
  log.presented_count = n + log.discarded_count;
  return log;
}

}  // namespace

TEST(Analysis, ConservationOfPresentedImages) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto log = synthetic_log(s, 500 + 37 * s);
    auto report = analyze(log);
    std::int64_t total = 0;
    for (const auto& row : report.matrices.confusion) total = std::accumulate(row.begin(), row.end(), total);
    EXPECT_EQ(static_cast<size_t>(total) + report.censored + report.discarded, report.presented);
    for (int c = 0; c < kNumClasses; ++c) EXPECT_EQ(report.matrices.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)], 0);
  }
}

TEST(Analysis, AverageMatchesSecondPassRecomputation) {
  auto log = synthetic_log(11, 3000);
  auto avg = average_defensibility_matrix(log, 10);
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (const auto& r : log.records)
    if (!r.censored) groups[{r.true_label.index(), r.misrecognized_as->index()}].push_back(r.k);
  int masked = 0;
  for (size_t i = 0; i < kNumClasses; ++i)
    for (size_t j = 0; j < kNumClasses; ++j) {
      auto it = groups.find({static_cast<int>(i), static_cast<int>(j)});
      const size_t n = it == groups.end() ? 0 : it->second.size();
      EXPECT_EQ(avg.counts[i][j], static_cast<std::int64_t>(n));
      EXPECT_EQ(avg.mask[i][j], n > 10);
      if (n == 0) {
        EXPECT_TRUE(std::isnan(avg.values[i][j]));
        continue;
      }
      long double sum = 0;
      for (int k : it->second) sum += k;
      EXPECT_DOUBLE_EQ(avg.values[i][j], static_cast<double>(sum / static_cast<long double>(n)));
      masked += avg.mask[i][j];
    }
  EXPECT_GT(masked, 5);
}

TEST(Analysis, MaskThresholdIsStrict) {
  AttackLog log;
  for (int i = 0; i < 10; ++i) log.records.push_back({"f", Letter(0), 5, Letter(1), false, std::nullopt});
  for (int i = 0; i < 11; ++i) log.records.push_back({"f", Letter(2), 5, Letter(3), false, std::nullopt});
  auto avg = average_defensibility_matrix(log, 10);
  EXPECT_FALSE(avg.mask[0][1]);
  EXPECT_TRUE(avg.mask[2][3]);
  EXPECT_EQ(avg.values[0][1], 5.0);
}

TEST(Analysis, IndependentOfRecordOrder) {
  auto log = synthetic_log(4, 800);
  auto shuffled = log;
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  auto a = analyze(log), b = analyze(shuffled);
  EXPECT_EQ(a.matrices.confusion, b.matrices.confusion);
  EXPECT_EQ(a.matrices.average.counts, b.matrices.average.counts);
  EXPECT_EQ(a.matrices.average.mask, b.matrices.average.mask);
  for (size_t i = 0; i < kNumClasses; ++i)
    for (size_t j = 0; j < kNumClasses; ++j)
      if (a.matrices.average.counts[i][j] > 0) {
        EXPECT_EQ(a.matrices.average.values[i][j], b.matrices.average.values[i][j]);
      }
  for (size_t c = 0; c < kNumClasses; ++c) {
    EXPECT_EQ(a.classes[c].ks, b.classes[c].ks);
    EXPECT_EQ(a.classes[c].median, b.classes[c].median);
  }
}

TEST(Analysis, CensoredRecordsCountAtKMaxInDistributions) {
  AttackLog log;
  log.config.k_max = 50;
  log.records.push_back({"a", Letter(0), 3, Letter(1), false, std::nullopt});
  log.records.push_back({"b", Letter(0), 50, std::nullopt, true, std::nullopt});
  log.records.push_back({"c", Letter(0), 9, Letter(4), false, std::nullopt});
  log.records.push_back({"d", Letter(0), 12, Letter(4), false, std::nullopt});
  ClassAccuracies acc{};
  acc[0] = 0.75;
  auto d = class_distributions(log, acc);
  EXPECT_EQ(d[0].ks, (std::vector<int>{3, 9, 12, 50}));
  EXPECT_EQ(d[0].censored, 1u);
  EXPECT_EQ(d[0].median, 10.5);
  EXPECT_EQ(d[0].min, 3);
  EXPECT_EQ(d[0].max, 50);
  EXPECT_EQ(d[0].accuracy, 0.75);
  EXPECT_EQ(d[1].count(), 0u);
  EXPECT_EQ(d[7].label, Letter(7));
  auto conf = confusion_matrix(log);
  EXPECT_EQ(conf[0][4], 2);
  EXPECT_EQ(conf[0][1], 1);
}

TEST(Analysis, EmptyLogIsAnError) {
  AttackLog log;
  for (auto f : std::vector<std::function<void()>>{[&] { confusion_matrix(log); },
                                                   [&] { average_defensibility_matrix(log); },
                                                   [&] { class_distributions(log); }}) {
    try {
      f();
      ADD_FAILURE() << "expected EmptyLog";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::EmptyLog);
    }
  }
}

TEST(Report, CsvRoundTripsExactly) {
  auto log = synthetic_log(21, 2500);
  auto report = analyze(log, {}, 10);
  auto dir = fresh_dir("analysis_export");
  export_report(report, dir, "{\"seed\":1}");
  EXPECT_EQ(read_count_matrix_csv(dir / "confusion.csv"), report.matrices.confusion);
  EXPECT_EQ(read_count_matrix_csv(dir / "pair_counts.csv"), report.matrices.average.counts);
  auto values = read_value_matrix_csv(dir / "avg_defensibility.csv");
  auto mask = read_count_matrix_csv(dir / "avg_defensibility_mask.csv");
  for (size_t i = 0; i < kNumClasses; ++i)
    for (size_t j = 0; j < kNumClasses; ++j) {
      EXPECT_EQ(mask[i][j] == 1, report.matrices.average.mask[i][j]);
      if (report.matrices.average.mask[i][j])
        EXPECT_EQ(values[i][j], report.matrices.average.values[i][j]);
      else
        EXPECT_TRUE(std::isnan(values[i][j]));
    }
  for (const char* f : {"class_k.csv", "class_summary.csv", "totals.csv", "confusion.svg", "confusion.png",
                        "avg_defensibility.svg", "avg_defensibility.png", "class_distributions.svg",
                        "class_distributions.png"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_EQ(read_text(dir / "confusion.csv").rfind("# {\"seed\":1}\n", 0), 0u);

  std::map<char, std::vector<int>> ks;
  std::istringstream in(read_text(dir / "class_k.csv"));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("class", 0) == 0) continue;
    ks[line[0]].push_back(std::stoi(line.substr(2)));
  }
  for (const auto& d : report.classes)
    if (d.count() > 0) {
      EXPECT_EQ(ks[d.label.to_char()], d.ks);
    }
}

TEST(Report, BlankCellsForUnderpopulatedPairs) {
  AttackLog log;
  log.records.push_back({"a", Letter(0), 3, Letter(1), false, std::nullopt});
  auto dir = fresh_dir("analysis_blank");
  export_report(analyze(log), dir);
  auto text = read_text(dir / "avg_defensibility.csv");
  std::istringstream in(text);
  std::string header, row_a;
  std::getline(in, header);
  std::getline(in, row_a);
  EXPECT_EQ(row_a, "A" + std::string(kNumClasses, ','));
}

TEST(KernelDensity, IntegratesToOneAndPeaksAtData) {
  std::vector<double> grid;
  for (double g = -40; g <= 140; g += 0.05) grid.push_back(g);
  std::vector<int> ks{10, 12, 12, 13, 20, 21, 25, 40};
  auto dens = kernel_density(ks, grid);
  double area = 0;
  for (double d : dens) area += d * 0.05;
  EXPECT_NEAR(area, 1.0, 1e-6);

  auto single = kernel_density({30}, grid);
  auto peak = std::max_element(single.begin(), single.end()) - single.begin();
  EXPECT_NEAR(grid[static_cast<size_t>(peak)], 30.0, 1e-9);
  EXPECT_NEAR(single[static_cast<size_t>(peak)], 1 / std::sqrt(2 * M_PI), 1e-9);
  EXPECT_EQ(kernel_density({}, grid), std::vector<double>(grid.size(), 0.0));
}

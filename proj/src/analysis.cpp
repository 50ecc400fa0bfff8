#include "defletter/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "defletter/plot.hpp"
#include "defletter/util.hpp"

namespace defletter {
namespace {

void require_records(const AttackLog& log) {
  if (log.records.empty()) throw Error(ErrorCode::EmptyLog, "attack log has no records");
}

size_t idx(Letter l) { return static_cast<size_t>(l.index()); }

std::string exact(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string comment_block(const std::string& provenance) {
  if (provenance.empty()) return "";
  std::string out;
  std::istringstream in(provenance);
  for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
  return out;
}

template <typename F>
std::string matrix_csv(const std::string& provenance, F cell) {
  std::string out = comment_block(provenance) + "true\\misrecognized";
  for (int c = 0; c < kNumClasses; ++c) out += std::string(",") + Letter(c).to_char();
  out += '\n';
  for (int r = 0; r < kNumClasses; ++r) {
    out += Letter(r).to_char();
    for (int c = 0; c < kNumClasses; ++c) out += "," + cell(static_cast<size_t>(r), static_cast<size_t>(c));
    out += '\n';
  }
  return out;
}

std::vector<std::vector<std::string>> read_matrix_cells(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != kNumClasses + 1)
      throw Error(ErrorCode::CorruptDataset, path.string() + ": expected 27 cells per row");
    cells.erase(cells.begin());
    rows.push_back(std::move(cells));
  }
  if (rows.size() != kNumClasses) throw Error(ErrorCode::CorruptDataset, path.string() + ": expected 26 rows");
  return rows;
}

std::vector<std::string> letter_labels() {
  std::vector<std::string> out;
  for (int c = 0; c < kNumClasses; ++c) out.emplace_back(1, Letter(c).to_char());
  return out;
}

plot::Figure distribution_figure(const std::array<ClassDistribution, kNumClasses>& classes, int k_max) {
  using namespace plot;
  const double left = 44, top = 40, col = 30, plot_h = 300;
  const double plot_w = col * kNumClasses;
  Figure fig(static_cast<int>(left + plot_w + 60), static_cast<int>(top + plot_h + 50));
  fig.add(Text{left, 20, "defensibility k per class (violin) and test accuracy (red)", 13});
  fig.add(Line{left, top, left, top + plot_h, kBlack});
  fig.add(Line{left, top + plot_h, left + plot_w, top + plot_h, kBlack});
  fig.add(Line{left + plot_w, top, left + plot_w, top + plot_h, kRed});
  auto ky = [&](double k) { return top + plot_h * (1.0 - k / k_max); };
  for (int tick = 0; tick <= k_max; tick += std::max(1, k_max / 5)) {
    fig.add(Line{left - 3, ky(tick), left, ky(tick), kBlack});
    fig.add(Line{left, ky(tick), left + plot_w, ky(tick), kGrid, 0.5});
    fig.add(Text{left - 5, ky(tick) + 3, std::to_string(tick), 9, kBlack, Anchor::End});
  }
  for (double a : {0.0, 0.5, 1.0}) {
    const double y = top + plot_h * (1.0 - a);
    char buf[8];
    std::snprintf(buf, sizeof buf, "%.1f", a);
    fig.add(Text{left + plot_w + 5, y + 3, buf, 9, kRed});
  }
  fig.add(Text{14, top + plot_h / 2, "k", 11});

  std::vector<double> grid;
  for (double k = 0; k <= k_max; k += 0.5) grid.push_back(k);
  std::optional<std::pair<double, double>> prev_acc;
  for (size_t c = 0; c < kNumClasses; ++c) {
    const auto& d = classes[c];
    const double cx = left + col * (static_cast<double>(c) + 0.5);
    fig.add(Text{cx, top + plot_h + 14, std::string(1, d.label.to_char()), 10, kBlack, Anchor::Middle});
    if (d.count() > 0) {
      auto density = kernel_density(d.ks, grid);
      const double peak = *std::max_element(density.begin(), density.end());
      std::vector<std::pair<double, double>> right, outline;
      for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < d.min - 2 || grid[i] > d.max + 2) continue;
        const double half = peak > 0 ? 0.45 * col * density[i] / peak : 0;
        outline.emplace_back(cx + half, ky(grid[i]));
        right.emplace_back(cx - half, ky(grid[i]));
      }
      outline.insert(outline.end(), right.rbegin(), right.rend());
      fig.add(Polygon{outline, Rgb{174, 199, 232}, kBlue});
      fig.add(Line{cx, ky(d.min), cx, ky(d.max), kBlack, 0.8});
      fig.add(Line{cx - 6, ky(d.median), cx + 6, ky(d.median), kBlack, 2});
    }
    if (d.accuracy) {
      const double ay = top + plot_h * (1.0 - *d.accuracy);
      fig.add(Circle{cx, ay, 2.5, kRed});
      if (prev_acc) fig.add(Line{prev_acc->first, prev_acc->second, cx, ay, kRed, 1});
      prev_acc = {cx, ay};
    }
  }
  return fig;
}

}  // namespace

ClassMatrix<std::int64_t> confusion_matrix(const AttackLog& log) {
  require_records(log);
  ClassMatrix<std::int64_t> m{};
  for (const auto& r : log.records)
    if (!r.censored && r.misrecognized_as) ++m[idx(r.true_label)][idx(*r.misrecognized_as)];
  return m;
}

AverageDefensibility average_defensibility_matrix(const AttackLog& log, int min_count) {
  require_records(log);
  AverageDefensibility out;
  out.min_count = min_count;
  out.counts = {};
  ClassMatrix<std::int64_t> sums{};
  for (const auto& r : log.records) {
    if (r.censored || !r.misrecognized_as) continue;
    ++out.counts[idx(r.true_label)][idx(*r.misrecognized_as)];
    sums[idx(r.true_label)][idx(*r.misrecognized_as)] += r.k;
  }
  for (size_t i = 0; i < kNumClasses; ++i)
    for (size_t j = 0; j < kNumClasses; ++j) {
      const auto n = out.counts[i][j];
      out.values[i][j] = n > 0 ? static_cast<double>(sums[i][j]) / static_cast<double>(n)
                               : std::numeric_limits<double>::quiet_NaN();
      out.mask[i][j] = n > min_count;
    }
  return out;
}

std::array<ClassDistribution, kNumClasses> class_distributions(const AttackLog& log, const ClassAccuracies& accuracy) {
  require_records(log);
  std::array<ClassDistribution, kNumClasses> out;
  for (int c = 0; c < kNumClasses; ++c) {
    out[static_cast<size_t>(c)].label = Letter(c);
    out[static_cast<size_t>(c)].accuracy = accuracy[static_cast<size_t>(c)];
  }
  for (const auto& r : log.records) {
    auto& d = out[idx(r.true_label)];
    d.ks.push_back(r.k);
    d.censored += r.censored;
  }
  for (auto& d : out) {
    if (d.ks.empty()) continue;
    std::sort(d.ks.begin(), d.ks.end());
    const size_t n = d.ks.size();
    d.min = d.ks.front();
    d.max = d.ks.back();
    d.median = n % 2 ? d.ks[n / 2] : 0.5 * (d.ks[n / 2 - 1] + d.ks[n / 2]);
  }
  return out;
}

AnalysisReport analyze(const AttackLog& log, const ClassAccuracies& accuracy, int min_count) {
  AnalysisReport report;
  report.matrices.confusion = confusion_matrix(log);
  report.matrices.average = average_defensibility_matrix(log, min_count);
  report.classes = class_distributions(log, accuracy);
  report.censored = log.censored_count();
  report.discarded = log.discarded_count;
  report.presented = log.presented_count;
  report.k_max = log.config.k_max;
  return report;
}

std::vector<double> kernel_density(const std::vector<int>& ks, const std::vector<double>& grid) {
  std::vector<double> out(grid.size(), 0.0);
  if (ks.empty()) return out;
  const double n = static_cast<double>(ks.size());
  const double mean = std::accumulate(ks.begin(), ks.end(), 0.0) / n;
  double var = 0;
  for (int k : ks) var += (k - mean) * (k - mean);
  const double sd = ks.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  // Silverman's rule, floored at one step so single-valued classes still show.
  const double h = std::max(1.0, 1.06 * sd * std::pow(n, -0.2));
  const double norm = 1.0 / (n * h * std::sqrt(2 * M_PI));
  for (size_t i = 0; i < grid.size(); ++i) {
    double s = 0;
    for (int k : ks) {
      const double u = (grid[i] - k) / h;
      s += std::exp(-0.5 * u * u);
    }
    out[i] = s * norm;
  }
  return out;
}

void export_report(const AnalysisReport& report, const std::filesystem::path& out_dir, const std::string& provenance) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto& m = report.matrices;

  write_text(out_dir / "confusion.csv",
             matrix_csv(provenance, [&](size_t r, size_t c) { return std::to_string(m.confusion[r][c]); }));
  write_text(out_dir / "pair_counts.csv",
             matrix_csv(provenance, [&](size_t r, size_t c) { return std::to_string(m.average.counts[r][c]); }));
  write_text(out_dir / "avg_defensibility.csv", matrix_csv(provenance, [&](size_t r, size_t c) {
               return m.average.mask[r][c] ? exact(m.average.values[r][c]) : std::string();
             }));
  write_text(out_dir / "avg_defensibility_mask.csv", matrix_csv(provenance, [&](size_t r, size_t c) {
               return std::string(m.average.mask[r][c] ? "1" : "0");
             }));

  std::string ks = comment_block(provenance) + "class,k\n";
  std::string summary = comment_block(provenance) + "class,count,censored,median,min,max,accuracy\n";
  for (const auto& d : report.classes) {
    const char L = d.label.to_char();
    for (int k : d.ks) ks += std::string(1, L) + "," + std::to_string(k) + "\n";
    summary += std::string(1, L) + "," + std::to_string(d.count()) + "," + std::to_string(d.censored) + ",";
    if (d.count() > 0)
      summary += exact(d.median) + "," + std::to_string(d.min) + "," + std::to_string(d.max);
    else
      summary += ",,";
    summary += "," + (d.accuracy ? exact(*d.accuracy) : std::string()) + "\n";
  }
  write_text(out_dir / "class_k.csv", ks);
  write_text(out_dir / "class_summary.csv", summary);

  std::string totals = comment_block(provenance) + "presented,discarded,censored,misrecognized\n";
  std::int64_t misrecognized = 0;
  for (const auto& row : m.confusion) misrecognized = std::accumulate(row.begin(), row.end(), misrecognized);
  totals += std::to_string(report.presented) + "," + std::to_string(report.discarded) + "," +
            std::to_string(report.censored) + "," + std::to_string(misrecognized) + "\n";
  write_text(out_dir / "totals.csv", totals);

  plot::HeatmapData conf{"confusion under attack (row: true, column: misrecognized)", letter_labels(), letter_labels(),
                         {}, true, 0};
  plot::HeatmapData avg{"average defensibility per pair (blank: " + std::to_string(m.average.min_count) +
                            " or fewer images)",
                        letter_labels(), letter_labels(), {}, true, 1};
  for (size_t r = 0; r < kNumClasses; ++r) {
    std::vector<double> crow, arow;
    for (size_t c = 0; c < kNumClasses; ++c) {
      crow.push_back(r == c ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(m.confusion[r][c]));
      arow.push_back(m.average.mask[r][c] ? m.average.values[r][c] : std::numeric_limits<double>::quiet_NaN());
    }
    conf.values.push_back(std::move(crow));
    avg.values.push_back(std::move(arow));
  }
  heatmap(conf).save(out_dir / "confusion", provenance);
  heatmap(avg).save(out_dir / "avg_defensibility", provenance);

  distribution_figure(report.classes, std::max(1, report.k_max)).save(out_dir / "class_distributions", provenance);
}

ClassMatrix<std::int64_t> read_count_matrix_csv(const std::filesystem::path& path) {
  auto cells = read_matrix_cells(path);
  ClassMatrix<std::int64_t> out{};
  for (size_t r = 0; r < kNumClasses; ++r)
    for (size_t c = 0; c < kNumClasses; ++c) out[r][c] = std::stoll(cells[r][c]);
  return out;
}

ClassMatrix<double> read_value_matrix_csv(const std::filesystem::path& path) {
  auto cells = read_matrix_cells(path);
  ClassMatrix<double> out{};
  for (size_t r = 0; r < kNumClasses; ++r)
    for (size_t c = 0; c < kNumClasses; ++c)
      out[r][c] = cells[r][c].empty() ? std::numeric_limits<double>::quiet_NaN() : std::strtod(cells[r][c].c_str(), nullptr);
  return out;
}

}  // namespace defletter

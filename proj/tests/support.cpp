#include "support.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "defletter/dataset.hpp"
#include "defletter/nn.hpp"
#include "defletter/util.hpp"

namespace testing_support {
namespace fs = std::filesystem;

fs::path data_dir() { return DEFLETTER_TEST_DATA; }

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("defletter_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  put16(b, v >> 16);
  put16(b, v & 0xFFFF);
}

void pad4(std::vector<std::uint8_t>& b) {
  while (b.size() % 4) b.push_back(0);
}

std::vector<std::uint8_t> simple_glyph(const std::vector<TtfContour>& contours) {
  std::vector<std::uint8_t> g;
  int xmin = 1 << 30, ymin = 1 << 30, xmax = -(1 << 30), ymax = -(1 << 30);
  for (const auto& c : contours)
    for (const auto& p : c) {
      xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
    }
  put16(g, static_cast<std::uint16_t>(contours.size()));
  for (int v : {xmin, ymin, xmax, ymax}) put16(g, static_cast<std::uint16_t>(v));
  int end = -1;
  for (const auto& c : contours) {
    end += static_cast<int>(c.size());
    put16(g, static_cast<std::uint16_t>(end));
  }
  put16(g, 0);  // no instructions
  for (const auto& c : contours)
    for (const auto& p : c) g.push_back(p.on_curve ? 0x01 : 0x00);
  int prev = 0;
  for (const auto& c : contours)
    for (const auto& p : c) {
      put16(g, static_cast<std::uint16_t>(p.x - prev));
      prev = p.x;
    }
  prev = 0;
  for (const auto& c : contours)
    for (const auto& p : c) {
      put16(g, static_cast<std::uint16_t>(p.y - prev));
      prev = p.y;
    }
  return g;
}

}  // namespace

std::vector<std::uint8_t> build_ttf(const std::map<char, std::vector<TtfContour>>& glyphs,
                                    std::uint16_t units_per_em) {
  const std::uint16_t num_glyphs = static_cast<std::uint16_t>(glyphs.size() + 1);

  std::vector<std::uint8_t> glyf, loca;
  put32(loca, 0), put32(loca, 0);  // glyph 0 (.notdef) is empty
  for (const auto& [ch, contours] : glyphs) {
    auto g = simple_glyph(contours);
    glyf.insert(glyf.end(), g.begin(), g.end());
    pad4(glyf);
    put32(loca, static_cast<std::uint32_t>(glyf.size()));
  }

  std::vector<std::uint8_t> head(54, 0);
  head[18] = static_cast<std::uint8_t>(units_per_em >> 8);
  head[19] = static_cast<std::uint8_t>(units_per_em);
  head[51] = 1;  // long loca

  std::vector<std::uint8_t> maxp;
  put32(maxp, 0x00005000);
  put16(maxp, num_glyphs);

  // cmap: one format-4 segment per mapped letter plus the 0xFFFF terminator.
  std::vector<std::uint16_t> codes;
  for (const auto& [ch, contours] : glyphs) codes.push_back(static_cast<std::uint16_t>(ch));
  const std::uint16_t seg = static_cast<std::uint16_t>(codes.size() + 1);
  std::vector<std::uint8_t> sub;
  put16(sub, 4);
  put16(sub, 16 + 8u * seg);
  put16(sub, 0);
  put16(sub, 2u * seg);
  put16(sub, 0), put16(sub, 0), put16(sub, 0);
  for (auto c : codes) put16(sub, c);
  put16(sub, 0xFFFF);
  put16(sub, 0);
  for (auto c : codes) put16(sub, c);
  put16(sub, 0xFFFF);
  for (size_t i = 0; i < codes.size(); ++i) put16(sub, static_cast<std::uint16_t>(i + 1 - codes[i]));
  put16(sub, 1);
  for (std::uint16_t i = 0; i < seg; ++i) put16(sub, 0);
  std::vector<std::uint8_t> cmap;
  put16(cmap, 0);
  put16(cmap, 1);
  put16(cmap, 3), put16(cmap, 1), put32(cmap, 12);
  cmap.insert(cmap.end(), sub.begin(), sub.end());

  const std::vector<std::pair<const char*, std::vector<std::uint8_t>*>> tables{
      {"cmap", &cmap}, {"glyf", &glyf}, {"head", &head}, {"loca", &loca}, {"maxp", &maxp}};
  std::vector<std::uint8_t> out;
  put32(out, 0x00010000);
  put16(out, static_cast<std::uint16_t>(tables.size()));
  put16(out, 0), put16(out, 0), put16(out, 0);
  std::uint32_t offset = static_cast<std::uint32_t>(12 + 16 * tables.size());
  for (const auto& [tag, data] : tables) {
    out.insert(out.end(), tag, tag + 4);
    put32(out, 0);
    put32(out, offset);
    put32(out, static_cast<std::uint32_t>(data->size()));
    offset += static_cast<std::uint32_t>((data->size() + 3) / 4 * 4);
  }
  for (const auto& [tag, data] : tables) {
    out.insert(out.end(), data->begin(), data->end());
    pad4(out);
  }
  return out;
}

std::vector<std::uint8_t> rectangle_font(int width, int height) {
  std::map<char, std::vector<TtfContour>> glyphs;
  for (char c = 'A'; c <= 'Z'; ++c) glyphs[c] = {{{0, 0}, {0, height}, {width, height}, {width, 0}}};
  return build_ttf(glyphs);
}

double supersampled_coverage(const std::vector<std::vector<std::pair<double, double>>>& polygons, int row, int col,
                             int samples) {
  int inside = 0;
  for (int sy = 0; sy < samples; ++sy)
    for (int sx = 0; sx < samples; ++sx) {
      const double px = col + (sx + 0.5) / samples;
      const double py = row + (sy + 0.5) / samples;
      int winding = 0;
      for (const auto& poly : polygons)
        for (size_t i = 0; i < poly.size(); ++i) {
          auto [x0, y0] = poly[i];
          auto [x1, y1] = poly[(i + 1) % poly.size()];
          const double cross = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0);
          if (y0 <= py && y1 > py && cross > 0) ++winding;
          if (y0 > py && y1 <= py && cross < 0) --winding;
        }
      if (winding != 0) ++inside;
    }
  return static_cast<double>(inside) / (samples * samples);
}

ClassifierModel linear_probe_model(const std::vector<double>& v, double bias, Letter a, Letter b) {
  if (v.size() != static_cast<size_t>(kLinearFeatures)) throw std::invalid_argument("v must have 196 entries");
  ClassifierConfig cfg;
  cfg.arch.conv_channels = {1, 1};
  cfg.arch.kernel = 3;
  cfg.arch.pool = 2;
  cfg.arch.fc_widths = {kLinearFeatures, kNumClasses};
  cfg.arch.activation = Activation::Identity;
  cfg.arch.pooling = Pooling::Average;
  ClassifierModel model(cfg);
  torch::NoGradGuard no_grad;
  auto& net = *model.net;
  for (auto* conv : {&net.conv1, &net.conv2}) {
    (*conv)->weight.zero_();
    (*conv)->weight.index_put_({0, 0, 1, 1}, 1.0);
    (*conv)->bias.zero_();
  }
  net.fc1->weight.copy_(torch::eye(kLinearFeatures));
  net.fc1->bias.zero_();
  net.fc2->weight.zero_();
  net.fc2->weight[a.index()].copy_(torch::tensor(v, torch::kFloat64).to(torch::kFloat32));
  net.fc2->bias.fill_(-1e4);
  net.fc2->bias.index_put_({a.index()}, bias);
  net.fc2->bias.index_put_({b.index()}, 0.0);
  net.eval();
  return model;
}

double linear_probe_margin(const std::vector<double>& v, double bias, const GlyphImage& x) {
  double d = bias;
  for (int e = 0; e < 14; ++e)
    for (int f = 0; f < 14; ++f) {
      double block = 0;
      for (int r = 4 * e + 3; r < 4 * e + 7; ++r)
        for (int c = 4 * f + 3; c < 4 * f + 7; ++c) block += x.at(r, c);
      d += v[static_cast<size_t>(e * 14 + f)] * block / 16;
    }
  return d;
}

LabeledDataset bar_dataset(int fonts, std::uint64_t seed, const SplitRatios& ratios) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledExample> examples;
  for (int f = 0; f < fonts; ++f) {
    const int left = 4 + static_cast<int>(rng() % 12);
    const int right = 48 + static_cast<int>(rng() % 12);
    for (int c = 0; c < kNumClasses; ++c) {
      LabeledExample ex{{}, Letter(c), "f" + std::to_string(f)};
      for (int r = 4 + 2 * c; r < 6 + 2 * c; ++r)
        for (int col = left; col < right; ++col) ex.image.at(r, col) = kInk;
      examples.push_back(std::move(ex));
    }
  }
  return partition_examples(std::move(examples), ratios, seed);
}

GlyphImage random_image(std::uint64_t seed, float lo, float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  GlyphImage img;
  for (auto& p : img.pixels()) p = u(rng);
  return img;
}

std::vector<std::uint8_t> file_bytes(const fs::path& path) { return read_file(path); }

torch::Tensor activation_pattern(CnnNet net, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  const auto& arch = net->architecture();
  const bool relu = arch.activation == Activation::Relu;
  const bool max_pool = arch.pooling == Pooling::Max;
  const auto n = x.size(0);
  std::vector<torch::Tensor> parts{torch::zeros({n, 1}, torch::kLong)};
  auto act = [&](torch::Tensor t) {
    if (!relu) return t;
    parts.push_back((t > 0).to(torch::kLong).view({n, -1}));
    return torch::relu(t);
  };
  auto pool = [&](torch::Tensor t) {
    if (!max_pool) return torch::avg_pool2d(t, arch.pool);
    auto [values, indices] = torch::max_pool2d_with_indices(t, arch.pool);
    parts.push_back(indices.view({n, -1}));
    return values;
  };
  auto t = pool(act(net->conv1->forward(x)));
  t = pool(act(net->conv2->forward(t)));
  act(net->fc1->forward(t.flatten(1)));
  return torch::cat(parts, 1);
}

namespace {

/// Loss of a network under single-pixel perturbations, recomputing only the
/// convolution window the pixel reaches. Crops are aligned to the combined
/// pooling stride so every pooled cell inside them matches the full forward.
class LocalLoss {
 public:
  LocalLoss(CnnNet net, const torch::Tensor& x, std::int64_t label) : net_(std::move(net)), x_(x), label_(label) {
    const auto& arch = net_->architecture();
    p_ = arch.pool;
    k_ = arch.kernel;
    side_ = arch.flat_side();
    stride_ = p_ * p_;
    span_ = p_ * (p_ + k_ - 1) + k_ - 1;
    relu_ = arch.activation == Activation::Relu;
    max_pool_ = arch.pooling == Pooling::Max;
    torch::NoGradGuard no_grad;
    features_ = convolve(x_).pooled;
    z0_ = net_->fc1->forward(features_.flatten(1));
  }

  struct Probe {
    double plus = 0;
    double minus = 0;
    bool smooth = true;
  };

  /// Losses at x +- h e_pixel and whether both stay in the base image's
  /// activation pattern.
  Probe probe(std::int64_t pixel, double h) const {
    torch::NoGradGuard no_grad;
    const std::int64_t r = pixel / kCanvas, c = pixel % kCanvas;
    auto [r0, r1] = cells(r);
    auto [c0, c1] = cells(c);
    if (r0 > r1 || c0 > c1) {
      const double base = loss_of(z0_);
      return {base, base, true};
    }
    const std::int64_t top = stride_ * r0, left = stride_ * c0;
    const std::int64_t rows = stride_ * (r1 - r0) + span_, cols = stride_ * (c1 - c0) + span_;
    auto crop = x_.slice(2, top, top + rows).slice(3, left, left + cols).repeat({3, 1, 1, 1});
    crop.index_put_({1, 0, r - top, c - left}, crop.index({1, 0, r - top, c - left}) + h);
    crop.index_put_({2, 0, r - top, c - left}, crop.index({2, 0, r - top, c - left}) - h);
    auto out = convolve(crop);
    auto cells_out = out.pooled.slice(2, 0, r1 - r0 + 1).slice(3, 0, c1 - c0 + 1);
    auto delta = (cells_out.narrow(0, 1, 2) - cells_out.narrow(0, 0, 1)).flatten(1);

    const auto channels = features_.size(1);
    auto ch = torch::arange(channels, torch::kLong).view({-1, 1, 1});
    auto rr = torch::arange(r0, r1 + 1, torch::kLong).view({1, -1, 1});
    auto cc = torch::arange(c0, c1 + 1, torch::kLong).view({1, 1, -1});
    auto index = (ch * side_ * side_ + rr * side_ + cc).flatten();
    auto w = net_->fc1->weight.index_select(1, index);
    auto z = z0_ + torch::matmul(delta, w.t());

    bool smooth = true;
    for (const auto& pattern : out.pattern) smooth &= (pattern.narrow(0, 1, 2) == pattern.narrow(0, 0, 1)).all().item<bool>();
    if (relu_) smooth &= ((z > 0) == (z0_ > 0)).all().item<bool>();
    return {loss_of(z.narrow(0, 0, 1)), loss_of(z.narrow(0, 1, 1)), smooth};
  }

  /// Loss from a full forward pass, used to validate the splice.
  double full_loss(const torch::Tensor& x) const {
    torch::NoGradGuard no_grad;
    auto logits = net_->forward(x);
    return -torch::log_softmax(logits, 1)[0][label_].item<double>();
  }

 private:
  struct Convolved {
    torch::Tensor pooled;
    std::vector<torch::Tensor> pattern;
  };

  Convolved convolve(const torch::Tensor& x) const {
    Convolved out;
    auto act = [&](torch::Tensor t) {
      if (!relu_) return t;
      out.pattern.push_back(t > 0);
      return torch::relu(t);
    };
    auto pool = [&](torch::Tensor t) {
      if (!max_pool_) return torch::avg_pool2d(t, p_);
      auto [values, indices] = torch::max_pool2d_with_indices(t, p_);
      out.pattern.push_back(indices);
      return values;
    };
    auto t = pool(act(net_->conv1->forward(x)));
    out.pooled = pool(act(net_->conv2->forward(t)));
    return out;
  }

  /// Range of pooled cells along one axis whose receptive field holds `pos`.
  std::pair<std::int64_t, std::int64_t> cells(std::int64_t pos) const {
    const std::int64_t lo = std::max<std::int64_t>(0, (pos - span_ + stride_) / stride_);
    const std::int64_t hi = std::min<std::int64_t>(side_ - 1, pos / stride_);
    return {lo, hi};
  }

  double loss_of(const torch::Tensor& z1) const {
    auto hidden = relu_ ? torch::relu(z1) : z1;
    auto logits = net_->fc2->forward(hidden);
    return -torch::log_softmax(logits, 1)[0][label_].item<double>();
  }

  mutable CnnNet net_;
  torch::Tensor x_;
  std::int64_t label_;
  std::int64_t p_, k_, side_, stride_, span_;
  bool relu_, max_pool_;
  torch::Tensor features_, z0_;
};

}  // namespace

GradientCheck check_input_gradient(const ClassifierModel& model, const GlyphImage& image, Letter label, int pixels,
                                   std::uint64_t seed, double h) {
  auto m = model.clone(torch::kFloat64);
  auto x = to_tensor(image).to(torch::kFloat64);
  auto y = torch::tensor({std::int64_t{label.index()}});
  auto g = loss_input_gradient(m.net, x, y).view({-1});
  auto g_a = g.accessor<double, 1>();

  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> order(kPixels);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(g_a[a]) > std::abs(g_a[b]); });
  std::vector<std::int64_t> coords(order.begin(), order.begin() + pixels / 2);
  std::vector<std::int64_t> rest(order.begin() + pixels / 2, order.end());
  std::shuffle(rest.begin(), rest.end(), rng);
  coords.insert(coords.end(), rest.begin(), rest.begin() + (pixels - pixels / 2));

  LocalLoss local(m.net, x, label.index());
  std::vector<double> fd, analytic;
  std::vector<bool> smooth;
  GradientCheck out;
  for (auto i : coords) {
    auto probe = local.probe(i, h);
    fd.push_back((probe.plus - probe.minus) / (2 * h));
    analytic.push_back(g_a[i]);
    smooth.push_back(probe.smooth);
    if (i == coords.front()) {
      auto plus = x.clone();
      plus.view({-1})[i] += h;
      out.splice_error = std::abs(local.full_loss(plus) - probe.plus);
    }
  }

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto u = torch::randn({kPixels}, gen, torch::kFloat64);
  u /= u.norm();
  auto du = u.view_as(x);
  auto both = torch::cat({x + h * du, x - h * du});
  auto patterns = activation_pattern(m.net, both);
  auto reference = activation_pattern(m.net, x);
  fd.push_back((local.full_loss(both.narrow(0, 0, 1)) - local.full_loss(both.narrow(0, 1, 1))) / (2 * h));
  analytic.push_back((g * u).sum().item<double>());
  smooth.push_back((patterns == reference).all().item<bool>());

  double err_kept = 0, norm_kept = 0, err_all = 0, norm_all = 0;
  for (size_t j = 0; j < fd.size(); ++j) {
    const double e = (fd[j] - analytic[j]) * (fd[j] - analytic[j]), a = analytic[j] * analytic[j];
    err_all += e;
    norm_all += a;
    if (!smooth[j]) {
      ++out.kinked;
      continue;
    }
    err_kept += e;
    norm_kept += a;
  }
  out.probes = fd.size();
  out.analytic_norm = std::sqrt(norm_kept);
  out.relative_error = std::sqrt(err_kept) / std::max(out.analytic_norm, 1e-300);
  out.raw_relative_error = std::sqrt(err_all) / std::max(std::sqrt(norm_all), 1e-300);
  return out;
}

GlyphImage dithered(const GlyphImage& image, float amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-amplitude, amplitude);
  GlyphImage out = image;
  for (auto& p : out.pixels()) p = std::clamp(p + u(rng), -1.0f, 1.0f);
  return out;
}

LinearCase make_linear_case(std::uint64_t seed, int target_k, double epsilon) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> weight(-1, 1), frac(0.2, 0.8);
  LinearCase lc;
  lc.a = Letter(static_cast<int>(rng() % kNumClasses));
  lc.b = Letter((lc.a.index() + 1 + static_cast<int>(rng() % (kNumClasses - 1))) % kNumClasses);
  lc.v.resize(kLinearFeatures);
  double l1 = 0;
  for (auto& w : lc.v) {
    w = weight(rng);
    l1 += std::abs(w);
  }
  // sum|v| = 15 keeps the starting margin small enough that softmax never saturates
  for (auto& w : lc.v) w *= 15.0 / l1;
  lc.x0 = random_image(seed + 1000, -0.3f, 0.3f);
  const double per_step = epsilon * 15.0;
  const double d0 = (target_k - 1 + frac(rng)) * per_step;
  lc.bias = d0 - linear_probe_margin(lc.v, 0.0, lc.x0);
  // closed form: the margin after t steps is d0 - t * per_step
  lc.expected_k = static_cast<int>(std::floor(d0 / per_step)) + 1;
  return lc;
}

}  // namespace testing_support

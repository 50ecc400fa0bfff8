#include "defletter/gan.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "defletter/dataset.hpp"
#include "defletter/log.hpp"
#include "defletter/plot.hpp"
#include "defletter/stats.hpp"
#include "defletter/util.hpp"

namespace defletter {
namespace {

constexpr const char* kGeneratorKind = "generator";
constexpr const char* kDiscriminatorKind = "discriminator";
constexpr std::uint64_t kProbeSalt = 0x9e3779b97f4a7c15ULL;

at::Generator cpu_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor label_one_hot(const torch::Tensor& labels) {
  return torch::one_hot(labels, kNumClasses).to(torch::kFloat32);
}

void dcgan_init(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.named_parameters()) {
    const std::string& name = p.key();
    const bool is_bn = name.find("bn") != std::string::npos;
    if (name.ends_with("bias"))
      p.value().zero_();
    else if (is_bn)
      p.value().normal_(1.0, 0.02);
    else
      p.value().normal_(0.0, 0.02);
  }
}

void check_finite(double v, const std::string& what, int iteration) {
  if (!std::isfinite(v))
    throw Error(ErrorCode::DivergedTraining, what + " became non-finite at iteration " + std::to_string(iteration));
}

std::vector<GlyphImage> tensor_images(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  std::vector<GlyphImage> out(static_cast<size_t>(c.size(0)));
  const float* p = c.data_ptr<float>();
  for (size_t i = 0; i < out.size(); ++i) std::copy(p + i * kPixels, p + (i + 1) * kPixels, out[i].pixels().begin());
  return out;
}

std::uint64_t class_seed(std::uint64_t seed, int label) { return seed * 1000003ULL + static_cast<std::uint64_t>(label); }

std::string letter_string(Letter l) { return std::string(1, l.to_char()); }

std::string comment_block(const std::string& provenance) {
  std::string out;
  std::istringstream in(provenance);
  for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
  return out;
}

nlohmann::json adam_json(const AdamSettings& a) { return {{"lr", a.lr}, {"betas", {a.beta1, a.beta2}}}; }

AdamSettings adam_from(const nlohmann::json& j, AdamSettings a) {
  a.lr = j.value("lr", a.lr);
  if (j.contains("betas")) {
    auto b = j.at("betas").get<std::vector<double>>();
    a.beta1 = b.at(0);
    a.beta2 = b.at(1);
  }
  return a;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const AdamSettings& a) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(a.lr).betas({a.beta1, a.beta2}));
}

}  // namespace

void GanConfig::validate() const {
  auto positive = [](double v) { return v > 0 && std::isfinite(v); };
  if (latent_dim < 1) throw Error(ErrorCode::InvalidArgument, "latent_dim must be >= 1");
  if (generator_width < 1 || discriminator_width < 1) throw Error(ErrorCode::InvalidArgument, "widths must be >= 1");
  if (batch_size < 2) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 2");
  if (!positive(step1.adam.lr) || !positive(step2.adam.lr)) throw Error(ErrorCode::InvalidArgument, "rates must be > 0");
  for (double b : {step1.adam.beta1, step1.adam.beta2, step2.adam.beta1, step2.adam.beta2})
    if (!(b >= 0 && b < 1)) throw Error(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  if (step1.epochs < 1 || step2.iterations < 0) throw Error(ErrorCode::InvalidArgument, "bad training length");
  if (step1.checkpoint_every < 1 || step2.probe_every < 1 || step2.probe_size < 1)
    throw Error(ErrorCode::InvalidArgument, "checkpoint/probe intervals must be >= 1");
  if (step2.adversarial_weight < 0) throw Error(ErrorCode::InvalidArgument, "adversarial_weight must be >= 0");
}

nlohmann::json GanConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"label_conditioning", "one-hot"},
          {"generator_width", generator_width},
          {"discriminator_width", discriminator_width},
          {"batch_size", batch_size},
          {"seed", seed},
          {"step1", {{"adam", adam_json(step1.adam)}, {"epochs", step1.epochs}, {"checkpoint_every", step1.checkpoint_every}}},
          {"step2",
           {{"adam", adam_json(step2.adam)},
            {"iterations", step2.iterations},
            {"adversarial_weight", step2.adversarial_weight},
            {"probe_size", step2.probe_size},
            {"probe_every", step2.probe_every}}},
          {"mode_collapse_threshold", mode_collapse_threshold}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
  GanConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.generator_width = j.value("generator_width", c.generator_width);
  c.discriminator_width = j.value("discriminator_width", c.discriminator_width);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("step1")) {
    const auto& s = j.at("step1");
    if (s.contains("adam")) c.step1.adam = adam_from(s.at("adam"), c.step1.adam);
    c.step1.epochs = s.value("epochs", c.step1.epochs);
    c.step1.checkpoint_every = s.value("checkpoint_every", c.step1.checkpoint_every);
  }
  if (j.contains("step2")) {
    const auto& s = j.at("step2");
    if (s.contains("adam")) c.step2.adam = adam_from(s.at("adam"), c.step2.adam);
    c.step2.iterations = s.value("iterations", c.step2.iterations);
    c.step2.adversarial_weight = s.value("adversarial_weight", c.step2.adversarial_weight);
    c.step2.probe_size = s.value("probe_size", c.step2.probe_size);
    c.step2.probe_every = s.value("probe_every", c.step2.probe_every);
  }
  c.mode_collapse_threshold = j.value("mode_collapse_threshold", c.mode_collapse_threshold);
  c.validate();
  return c;
}

GeneratorImpl::GeneratorImpl(int latent_dim, int width) : latent_dim_(latent_dim), width_(width) { reset(); }

void GeneratorImpl::reset() {
  const int w = width_;
  project = register_module("project", torch::nn::Linear(latent_dim_ + kNumClasses, 4 * w * 8 * 8));
  bn0 = register_module("bn0", torch::nn::BatchNorm1d(4 * w * 8 * 8));
  up1 = register_module("up1", torch::nn::ConvTranspose2d(
                                   torch::nn::ConvTranspose2dOptions(4 * w, 2 * w, 4).stride(2).padding(1).bias(false)));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(2 * w));
  up2 = register_module(
      "up2", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(2 * w, w, 4).stride(2).padding(1).bias(false)));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(w));
  up3 = register_module("up3",
                        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(w, 1, 4).stride(2).padding(1)));
}

void GeneratorImpl::begin_batch_norm_recalibration() {
  bn0->reset_running_stats();
  bn1->reset_running_stats();
  bn2->reset_running_stats();
  bn0->options.momentum(std::nullopt);
  bn1->options.momentum(std::nullopt);
  bn2->options.momentum(std::nullopt);
}

void GeneratorImpl::end_batch_norm_recalibration() {
  bn0->options.momentum(0.1);
  bn1->options.momentum(0.1);
  bn2->options.momentum(0.1);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& labels) {
  auto h = torch::relu(bn0->forward(project->forward(torch::cat({z, label_one_hot(labels)}, 1))));
  h = h.view({-1, 4 * width_, 8, 8});
  h = torch::relu(bn1->forward(up1->forward(h)));
  h = torch::relu(bn2->forward(up2->forward(h)));
  return torch::tanh(up3->forward(h));
}

DiscriminatorImpl::DiscriminatorImpl(int width) : width_(width) { reset(); }

void DiscriminatorImpl::reset() {
  const int w = width_;
  down1 = register_module("down1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1 + kNumClasses, w, 4).stride(2).padding(1)));
  down2 = register_module("down2",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 2 * w, 4).stride(2).padding(1).bias(false)));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(2 * w));
  down3 = register_module("down3",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * w, 4 * w, 4).stride(2).padding(1).bias(false)));
  bn3 = register_module("bn3", torch::nn::BatchNorm2d(4 * w));
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * w, 1, 8)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& labels) {
  auto maps = label_one_hot(labels).view({-1, kNumClasses, 1, 1}).expand({x.size(0), kNumClasses, kCanvas, kCanvas});
  auto h = torch::leaky_relu(down1->forward(torch::cat({x, maps}, 1)), 0.2);
  h = torch::leaky_relu(bn2->forward(down2->forward(h)), 0.2);
  h = torch::leaky_relu(bn3->forward(down3->forward(h)), 0.2);
  return head->forward(h).view({-1});
}

GeneratorModel::GeneratorModel(GanConfig cfg) : net(cfg.latent_dim, cfg.generator_width), config(std::move(cfg)) {
  config.validate();
  net->eval();
}

DiscriminatorModel::DiscriminatorModel(GanConfig cfg) : net(cfg.discriminator_width), config(std::move(cfg)) {
  config.validate();
  net->eval();
}

double DiscriminatorModel::probability(const GlyphImage& image, Letter label) const {
  torch::NoGradGuard no_grad;
  Discriminator d = net;
  auto logit = d->forward(to_tensor(image), torch::tensor({std::int64_t{label.index()}}));
  return torch::sigmoid(logit).item<double>();
}

Step1Result train_cgan_step1(const LabeledDataset& ds, const GanConfig& cfg,
                             const std::optional<std::filesystem::path>& checkpoint_dir) {
  cfg.validate();
  auto train = ds.subset(Split::Train);
  if (train.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  use_deterministic_runtime();
  torch::manual_seed(cfg.seed);

  GeneratorModel g(cfg);
  DiscriminatorModel d(cfg);
  dcgan_init(*g.net);
  dcgan_init(*d.net);
  g.dataset_checksum = d.dataset_checksum = dataset_checksum(ds);

  std::vector<const GlyphImage*> images;
  std::vector<std::int64_t> labels;
  for (const auto* ex : train) {
    images.push_back(&ex->image);
    labels.push_back(ex->label.index());
  }
  auto X = to_tensor(images);
  auto Y = torch::tensor(labels, torch::kLong);
  const std::int64_t n = X.size(0);

  auto opt_g = make_adam(g.net->parameters(), cfg.step1.adam);
  auto opt_d = make_adam(d.net->parameters(), cfg.step1.adam);
  auto noise = cpu_generator(cfg.seed);
  Rng rng(cfg.seed);
  std::vector<std::int64_t> order(static_cast<size_t>(n));

  Step1Result result{g, d, {}, {}};
  int iteration = 0;
  for (int epoch = 1; epoch <= cfg.step1.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    auto perm = torch::tensor(order, torch::kLong);
    g.net->train();
    d.net->train();
    double sum_d = 0, sum_g = 0;
    int batches = 0;
    for (std::int64_t start = 0; start + 1 < n; start += cfg.batch_size) {
      const std::int64_t len = std::min<std::int64_t>(cfg.batch_size, n - start);
      if (len < 2) break;
      auto idx = perm.narrow(0, start, len);
      auto real = X.index_select(0, idx);
      auto y = Y.index_select(0, idx);
      auto z = torch::randn({len, cfg.latent_dim}, noise);

      opt_d.zero_grad();
      auto fake = g.net->forward(z, y);
      auto loss_d = torch::binary_cross_entropy_with_logits(d.net->forward(real, y), torch::ones({len})) +
                    torch::binary_cross_entropy_with_logits(d.net->forward(fake.detach(), y), torch::zeros({len}));
      loss_d.backward();
      opt_d.step();

      opt_g.zero_grad();
      auto loss_g = torch::binary_cross_entropy_with_logits(d.net->forward(fake, y), torch::ones({len}));
      loss_g.backward();
      opt_g.step();

      ++iteration;
      const double ld = loss_d.item<double>(), lg = loss_g.item<double>();
      check_finite(ld, "discriminator loss", iteration);
      check_finite(lg, "generator loss", iteration);
      result.curve.push_back({iteration, epoch, ld, lg});
      sum_d += ld;
      sum_g += lg;
      ++batches;
    }
    log::info("gan step1 epoch ", epoch, " loss_d=", sum_d / std::max(1, batches), " loss_g=", sum_g / std::max(1, batches));
    if (checkpoint_dir && epoch % cfg.step1.checkpoint_every == 0) {
      g.net->eval();
      d.net->eval();
      std::filesystem::create_directories(*checkpoint_dir);
      save_generator(g, *checkpoint_dir / ("generator_epoch" + std::to_string(epoch) + ".ckpt"));
      save_discriminator(d, *checkpoint_dir / ("discriminator_epoch" + std::to_string(epoch) + ".ckpt"));
    }
  }

  // Batch statistics gathered during training lag the final weights;
  // re-estimate them with a cumulative average over fresh samples.
  {
    torch::NoGradGuard no_grad;
    g.net->begin_batch_norm_recalibration();
    g.net->train();
    for (int b = 0; b < 20; ++b) {
      auto y = torch::arange(0, cfg.batch_size, torch::kLong).remainder(kNumClasses);
      g.net->forward(torch::randn({cfg.batch_size, cfg.latent_dim}, noise), y);
    }
    g.net->end_batch_norm_recalibration();
  }
  g.net->eval();
  d.net->eval();
  result.generator = g;
  result.discriminator = d;
  result.collapsed_classes = mode_collapse_check(g, 32, cfg.mode_collapse_threshold, cfg.seed);
  for (Letter l : result.collapsed_classes)
    log::warn("ModeCollapseWarning: class ", l.to_char(), " samples vary less than the threshold");
  return result;
}

double probe_loss(const GeneratorModel& g, const ClassifierModel& classifier) {
  torch::NoGradGuard no_grad;
  const int n = g.config.step2.probe_size;
  auto noise = cpu_generator(g.config.seed ^ kProbeSalt);
  auto z = torch::randn({n, g.config.latent_dim}, noise);
  auto y = torch::arange(0, n, torch::kLong).remainder(kNumClasses);
  Generator gen = g.net;
  double total = 0;
  for (std::int64_t start = 0; start < n; start += 250) {
    const std::int64_t len = std::min<std::int64_t>(250, n - start);
    auto imgs = gen->forward(z.narrow(0, start, len), y.narrow(0, start, len));
    total += classification_loss(classifier.net, imgs, y.narrow(0, start, len)).item<double>();
  }
  return total / n;
}

Step2Result finetune_generator_step2(const GeneratorModel& step1, const ClassifierModel& classifier,
                                     const DiscriminatorModel* discriminator) {
  const GanConfig& cfg = step1.config;
  cfg.validate();
  if (cfg.step2.adversarial_weight > 0 && !discriminator)
    throw Error(ErrorCode::InvalidArgument, "adversarial_weight > 0 needs the step-1 discriminator");
  use_deterministic_runtime();

  Step2Result result{step1, {}, {}, 0, 0, classifier.parameter_checksum(), {}};
  GeneratorModel& g = result.generator;
  g.net = std::dynamic_pointer_cast<GeneratorImpl>(step1.net->clone());
  g.step = 2;
  g.classifier_checksum = result.classifier_checksum_before;

  CnnNet c = classifier.net;
  c->eval();
  std::vector<bool> grad_flags;
  for (auto& p : c->parameters()) {
    grad_flags.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  std::optional<Discriminator> d;
  if (discriminator) {
    d = std::dynamic_pointer_cast<DiscriminatorImpl>(discriminator->net->clone());
    (*d)->eval();
    for (auto& p : (*d)->parameters()) p.set_requires_grad(false);
  }

  // Batch-norm statistics stay as estimated after step 1.
  g.net->eval();
  result.probe_before = probe_loss(g, classifier);
  result.probe.push_back({0, result.probe_before});
  auto opt = make_adam(g.net->parameters(), cfg.step2.adam);
  auto noise = cpu_generator(cfg.seed + 2);
  try {
    for (int it = 1; it <= cfg.step2.iterations; ++it) {
      auto y = torch::randint(0, kNumClasses, {cfg.batch_size}, noise, torch::kLong);
      auto z = torch::randn({cfg.batch_size, cfg.latent_dim}, noise);
      opt.zero_grad();
      auto imgs = g.net->forward(z, y);
      auto loss_c = torch::nll_loss(torch::log_softmax(c->forward(imgs), 1), y);
      auto loss = loss_c;
      if (d && cfg.step2.adversarial_weight > 0)
        loss = loss + cfg.step2.adversarial_weight *
                          torch::binary_cross_entropy_with_logits((*d)->forward(imgs, y), torch::ones({cfg.batch_size}));
      loss.backward();
      opt.step();
      const double lc = loss_c.item<double>();
      check_finite(lc, "classification loss", it);
      result.batch_loss.push_back(lc);
      if (it % cfg.step2.probe_every == 0 || it == cfg.step2.iterations) {
        result.probe.push_back({it, probe_loss(g, classifier)});
        log::info("gan step2 iteration ", it, " L_C=", lc, " probe L_C=", result.probe.back().probe_loss);
      }
    }
  } catch (...) {
    size_t i = 0;
    for (auto& p : c->parameters()) p.set_requires_grad(grad_flags[i++]);
    throw;
  }
  size_t i = 0;
  for (auto& p : c->parameters()) p.set_requires_grad(grad_flags[i++]);
  result.probe_after = result.probe.back().probe_loss;
  result.classifier_checksum_after = classifier.parameter_checksum();
  return result;
}

std::vector<GlyphImage> generate(const GeneratorModel& g, Letter label, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "generate needs n >= 1");
  torch::NoGradGuard no_grad;
  auto noise = cpu_generator(seed);
  auto z = torch::randn({n, g.config.latent_dim}, noise);
  Generator gen = g.net;
  std::vector<GlyphImage> out;
  out.reserve(static_cast<size_t>(n));
  for (std::int64_t start = 0; start < n; start += 256) {
    const std::int64_t len = std::min<std::int64_t>(256, n - start);
    auto y = torch::full({len}, std::int64_t{label.index()}, torch::kLong);
    auto imgs = tensor_images(gen->forward(z.narrow(0, start, len), y));
    out.insert(out.end(), imgs.begin(), imgs.end());
  }
  return out;
}

std::vector<Letter> mode_collapse_check(const GeneratorModel& g, int samples_per_class, double threshold,
                                        std::uint64_t seed) {
  std::vector<Letter> out;
  for (int c = 0; c < kNumClasses; ++c) {
    auto imgs = generate(g, Letter(c), std::max(2, samples_per_class), class_seed(seed, c));
    double var_sum = 0;
    const double n = static_cast<double>(imgs.size());
    for (size_t p = 0; p < kPixels; ++p) {
      double mean = 0, sq = 0;
      for (const auto& im : imgs) mean += im.pixels()[p];
      mean /= n;
      for (const auto& im : imgs) {
        const double d = im.pixels()[p] - mean;
        sq += d * d;
      }
      var_sum += sq / (n - 1);
    }
    if (var_sum / kPixels < threshold) out.push_back(Letter(c));
  }
  return out;
}

void save_generator(const GeneratorModel& g, const std::filesystem::path& path, const nlohmann::json& provenance) {
  Checkpoint ckpt;
  ckpt.header = {{"kind", kGeneratorKind},
                 {"config", g.config.to_json()},
                 {"step", g.step},
                 {"dataset_checksum", g.dataset_checksum},
                 {"classifier_checksum", g.classifier_checksum},
                 {"parameter_checksum", g.parameter_checksum()},
                 {"provenance", provenance}};
  ckpt.tensors = export_state(*g.net);
  save_checkpoint(ckpt, path);
}

GeneratorModel load_generator(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.header.value("kind", "") != kGeneratorKind)
    throw Error(ErrorCode::CorruptDataset, path.string() + " is not a generator checkpoint");
  GeneratorModel g(GanConfig::from_json(ckpt.header.at("config")));
  import_state(*g.net, ckpt.tensors);
  g.net->eval();
  g.step = ckpt.header.value("step", 1);
  g.dataset_checksum = ckpt.header.value("dataset_checksum", "");
  g.classifier_checksum = ckpt.header.value("classifier_checksum", "");
  return g;
}

void save_discriminator(const DiscriminatorModel& d, const std::filesystem::path& path,
                        const nlohmann::json& provenance) {
  Checkpoint ckpt;
  ckpt.header = {{"kind", kDiscriminatorKind},
                 {"config", d.config.to_json()},
                 {"dataset_checksum", d.dataset_checksum},
                 {"parameter_checksum", state_checksum(*d.net)},
                 {"provenance", provenance}};
  ckpt.tensors = export_state(*d.net);
  save_checkpoint(ckpt, path);
}

DiscriminatorModel load_discriminator(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.header.value("kind", "") != kDiscriminatorKind)
    throw Error(ErrorCode::CorruptDataset, path.string() + " is not a discriminator checkpoint");
  DiscriminatorModel d(GanConfig::from_json(ckpt.header.at("config")));
  import_state(*d.net, ckpt.tensors);
  d.net->eval();
  d.dataset_checksum = ckpt.header.value("dataset_checksum", "");
  return d;
}

std::vector<double> Population::ks(std::optional<Letter> label) const {
  std::vector<double> out;
  for (int c = 0; c < kNumClasses; ++c) {
    if (label && label->index() != c) continue;
    for (const auto& r : records[static_cast<size_t>(c)]) out.push_back(r.k);
  }
  return out;
}

double Population::mean_k(std::optional<Letter> label) const { return mean(ks(label)); }

size_t Population::censored() const {
  size_t n = 0;
  for (const auto& rs : records)
    for (const auto& r : rs) n += r.censored;
  return n;
}

Population attack_generated(const GeneratorModel& g, const ClassifierModel& classifier, const AttackConfig& cfg,
                            int n_per_class, std::uint64_t seed, const std::string& name) {
  Population pop;
  pop.name = name;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ci = static_cast<size_t>(c);
    auto imgs = generate(g, Letter(c), n_per_class, class_seed(seed, c));
    std::vector<AttackTarget> targets;
    for (size_t i = 0; i < imgs.size(); ++i)
      targets.push_back({name + "-" + letter_string(Letter(c)) + "-" + std::to_string(i), &imgs[i], Letter(c)});
    AttackLog log = attack_targets(classifier, targets, cfg);
    std::map<std::string, size_t> by_id;
    for (size_t i = 0; i < targets.size(); ++i) by_id[targets[i].id] = i;
    pop.presented[ci] = log.presented_count;
    pop.discarded[ci] = log.discarded_count;
    for (auto& r : log.records) {
      pop.images[ci].push_back(imgs[by_id.at(r.font_id)]);
      pop.records[ci].push_back(std::move(r));
    }
    log::info(name, " ", Letter(c).to_char(), ": attacked ", pop.records[ci].size(), ", discarded ",
              pop.discarded[ci], ", mean k ", pop.mean_k(Letter(c)));
  }
  return pop;
}

Population attack_originals(const LabeledDataset& ds, Split split, const ClassifierModel& classifier,
                            const AttackConfig& cfg, int n_per_class, std::uint64_t seed, const AttackLog* known) {
  Population pop;
  pop.name = "original";
  std::map<std::pair<std::string, int>, const AttackRecord*> reuse;
  if (known && known->classifier_checksum == classifier.parameter_checksum() && known->config == cfg)
    for (const auto& r : known->records) reuse[{r.font_id, r.true_label.index()}] = &r;

  auto subset = ds.subset(split);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ci = static_cast<size_t>(c);
    std::vector<const LabeledExample*> examples;
    for (const auto* ex : subset)
      if (ex->label.index() == c) examples.push_back(ex);
    std::sort(examples.begin(), examples.end(), [](auto* a, auto* b) { return a->font_id < b->font_id; });
    Rng rng(class_seed(seed, c));
    shuffle(examples, rng);
    if (examples.size() > static_cast<size_t>(n_per_class)) examples.resize(static_cast<size_t>(n_per_class));
    for (const auto* ex : examples) {
      ++pop.presented[ci];
      if (classify(classifier, ex->image).predicted != ex->label) {
        ++pop.discarded[ci];
        continue;
      }
      auto it = reuse.find({ex->font_id, c});
      AttackRecord rec = it != reuse.end() ? *it->second : measure_defensibility(classifier, ex->image, ex->label, cfg);
      rec.font_id = ex->font_id;
      pop.records[ci].push_back(std::move(rec));
      pop.images[ci].push_back(ex->image);
    }
  }
  return pop;
}

PopulationComparison compare_populations(const Population& a, const Population& b) {
  PopulationComparison out;
  out.a_name = a.name;
  out.b_name = b.name;
  auto ka = a.ks(), kb = b.ks();
  out.mean_a = mean(ka);
  out.mean_b = mean(kb);
  out.p_b_greater = welch_t_test_greater(kb, ka).p_value;
  for (int c = 0; c < kNumClasses; ++c) {
    out.class_mean_a[static_cast<size_t>(c)] = a.mean_k(Letter(c));
    out.class_mean_b[static_cast<size_t>(c)] = b.mean_k(Letter(c));
  }
  return out;
}

std::vector<std::pair<GlyphImage, int>> top_defensible(const Population& p, Letter label, size_t m) {
  const auto ci = static_cast<size_t>(label.index());
  std::vector<size_t> order(p.records[ci].size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return p.records[ci][x].k > p.records[ci][y].k; });
  std::vector<std::pair<GlyphImage, int>> out;
  for (size_t i = 0; i < order.size() && i < m; ++i) out.emplace_back(p.images[ci][order[i]], p.records[ci][order[i]].k);
  return out;
}

void export_generated_report(const std::vector<const Population*>& populations, int k_max,
                             const std::filesystem::path& out_dir, const std::string& provenance) {
  if (populations.empty()) throw Error(ErrorCode::InvalidArgument, "no populations to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  const std::string comments = comment_block(provenance);

  auto histogram_csv = [&](std::optional<Letter> label) {
    std::string out = comments + "k";
    for (const auto* p : populations) out += "," + p->name;
    out += "\n";
    std::vector<std::vector<size_t>> counts;
    for (const auto* p : populations) {
      std::vector<size_t> h(static_cast<size_t>(k_max) + 1, 0);
      for (double k : p->ks(label)) ++h[static_cast<size_t>(std::clamp(static_cast<int>(k), 0, k_max))];
      counts.push_back(std::move(h));
    }
    for (int k = 1; k <= k_max; ++k) {
      out += std::to_string(k);
      for (const auto& h : counts) out += "," + std::to_string(h[static_cast<size_t>(k)]);
      out += "\n";
    }
    return out;
  };
  for (int c = 0; c < kNumClasses; ++c)
    write_text(out_dir / ("hist_" + letter_string(Letter(c)) + ".csv"), histogram_csv(Letter(c)));
  write_text(out_dir / "hist_pooled.csv", histogram_csv(std::nullopt));

  std::string summary = comments + "class";
  for (const auto* p : populations)
    for (const char* col : {"presented", "discarded", "attacked", "censored", "mean_k"})
      summary += "," + p->name + "_" + col;
  summary += "\n";
  auto summary_row = [&](const std::string& name, std::optional<Letter> label) {
    std::string row = name;
    for (const auto* p : populations) {
      size_t presented = 0, discarded = 0, attacked = 0, censored = 0;
      for (int c = 0; c < kNumClasses; ++c) {
        if (label && label->index() != c) continue;
        const auto ci = static_cast<size_t>(c);
        presented += p->presented[ci];
        discarded += p->discarded[ci];
        attacked += p->records[ci].size();
        for (const auto& r : p->records[ci]) censored += r.censored;
      }
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", p->mean_k(label));
      row += "," + std::to_string(presented) + "," + std::to_string(discarded) + "," + std::to_string(attacked) + "," +
             std::to_string(censored) + "," + (attacked ? std::string(buf) : std::string());
    }
    return row + "\n";
  };
  for (int c = 0; c < kNumClasses; ++c) summary += summary_row(letter_string(Letter(c)), Letter(c));
  summary += summary_row("pooled", std::nullopt);
  write_text(out_dir / "summary.csv", summary);

  nlohmann::json comparisons = nlohmann::json::array();
  for (size_t i = 0; i < populations.size(); ++i)
    for (size_t j = i + 1; j < populations.size(); ++j) {
      auto cmp = compare_populations(*populations[i], *populations[j]);
      comparisons.push_back({{"a", cmp.a_name},
                             {"b", cmp.b_name},
                             {"mean_a", cmp.mean_a},
                             {"mean_b", cmp.mean_b},
                             {"p_b_greater", cmp.p_b_greater},
                             {"test", "one-sided Welch t-test on pooled k, censored counted as k_max"}});
    }
  write_text(out_dir / "comparison.json", nlohmann::json{{"comparisons", comparisons}}.dump(2) + "\n");

  const Population& first = *populations.front();
  const Population& last = *populations.back();
  auto int_ks = [](const std::vector<double>& v) {
    std::vector<int> out;
    for (double k : v) out.push_back(static_cast<int>(k));
    return out;
  };
  const double pw = 240, ph = 150;
  plot::Figure grid(static_cast<int>(pw * 6), static_cast<int>(ph * 5));
  for (int c = 0; c <= kNumClasses; ++c) {
    std::optional<Letter> label;
    std::string title = "pooled";
    if (c < kNumClasses) {
      label = Letter(c);
      title = letter_string(Letter(c));
    }
    plot::HistogramPair h{title, int_ks(first.ks(label)), int_ks(last.ks(label)), first.name, last.name, k_max};
    plot::draw_histogram_pair(grid, h, pw * (c % 6), ph * (c / 6), pw, ph);
    if (label) plot::histogram_pair(h).save(out_dir / ("hist_" + title), provenance);
  }
  grid.save(out_dir / "hist_grid", provenance);
  plot::histogram_pair({"pooled", int_ks(first.ks()), int_ks(last.ks()), first.name, last.name, k_max}, 480, 300)
      .save(out_dir / "hist_pooled", provenance);

  std::vector<std::pair<std::string, std::vector<GlyphImage>>> rows;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<GlyphImage> imgs;
    for (auto& [img, k] : top_defensible(last, Letter(c))) imgs.push_back(img);
    plot::gallery({{letter_string(Letter(c)), imgs}}).save(out_dir / ("top8_" + letter_string(Letter(c))), provenance);
    rows.emplace_back(letter_string(Letter(c)), std::move(imgs));
  }
  plot::gallery(rows).save(out_dir / "top8_all", provenance);
}

}  // namespace defletter

#include "defletter/nn.hpp"

#include <cstring>

#include "defletter/checksum.hpp"
#include "defletter/error.hpp"
#include "defletter/util.hpp"

namespace defletter {
namespace {

constexpr std::array<std::uint8_t, 4> kCheckpointMagic{'D', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }
std::string to_string(Pooling p) { return p == Pooling::Max ? "max" : "average"; }

}  // namespace

void use_deterministic_runtime() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, true);
}

void CnnArchitecture::validate() const {
  if (conv_channels[0] < 1 || conv_channels[1] < 1 || fc_widths[0] < 1 || fc_widths[1] < 1)
    throw Error(ErrorCode::InvalidArgument, "layer widths must be positive");
  if (kernel < 1 || pool < 1) throw Error(ErrorCode::InvalidArgument, "kernel and pool sizes must be positive");
  if (flat_side() < 1) throw Error(ErrorCode::InvalidArgument, "architecture shrinks the 64x64 input to nothing");
}

int CnnArchitecture::flat_side() const {
  int side = kCanvas;
  side = (side - kernel + 1) / pool;
  side = (side - kernel + 1) / pool;
  return side;
}

nlohmann::json CnnArchitecture::to_json() const {
  return {{"conv_channels", conv_channels}, {"kernel", kernel},  {"pool", pool},
          {"fc_widths", fc_widths},         {"activation", to_string(activation)},
          {"pooling", to_string(pooling)}};
}

CnnArchitecture CnnArchitecture::from_json(const nlohmann::json& j) {
  CnnArchitecture a;
  a.conv_channels = j.at("conv_channels").get<std::array<int, 2>>();
  a.kernel = j.at("kernel").get<int>();
  a.pool = j.at("pool").get<int>();
  a.fc_widths = j.at("fc_widths").get<std::array<int, 2>>();
  a.activation = j.value("activation", "relu") == "relu" ? Activation::Relu : Activation::Identity;
  a.pooling = j.value("pooling", "max") == "max" ? Pooling::Max : Pooling::Average;
  a.validate();
  return a;
}

CnnNetImpl::CnnNetImpl(CnnArchitecture arch) : arch_(arch) {
  arch_.validate();
  reset();
}

void CnnNetImpl::reset() {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, arch_.conv_channels[0], arch_.kernel)));
  conv2 = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(arch_.conv_channels[0], arch_.conv_channels[1], arch_.kernel)));
  int side = arch_.flat_side();
  fc1 = register_module("fc1", torch::nn::Linear(arch_.conv_channels[1] * side * side, arch_.fc_widths[0]));
  fc2 = register_module("fc2", torch::nn::Linear(arch_.fc_widths[0], arch_.fc_widths[1]));
}

torch::Tensor CnnNetImpl::act(torch::Tensor x) const {
  return arch_.activation == Activation::Relu ? torch::relu(x) : x;
}

torch::Tensor CnnNetImpl::pool(torch::Tensor x) const {
  return arch_.pooling == Pooling::Max ? torch::max_pool2d(x, arch_.pool) : torch::avg_pool2d(x, arch_.pool);
}

torch::Tensor CnnNetImpl::forward(torch::Tensor x) {
  x = pool(act(conv1->forward(x)));
  x = pool(act(conv2->forward(x)));
  x = act(fc1->forward(x.flatten(1)));
  return fc2->forward(x);
}

AdaDelta::AdaDelta(std::vector<torch::Tensor> params, double lr, double decay, double eps)
    : params_(std::move(params)), lr_(lr), decay_(decay), eps_(eps) {
  for (const auto& p : params_) {
    square_avg_.push_back(torch::zeros_like(p));
    delta_avg_.push_back(torch::zeros_like(p));
  }
}

void AdaDelta::zero_grad() {
  for (auto& p : params_)
    if (p.grad().defined()) p.mutable_grad().zero_();
}

void AdaDelta::step() {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    square_avg_[i].mul_(decay_).addcmul_(g, g, 1 - decay_);
    auto delta = (delta_avg_[i] + eps_).sqrt_().div_((square_avg_[i] + eps_).sqrt_()).mul_(g);
    p.add_(delta, -lr_);
    delta_avg_[i].mul_(decay_).addcmul_(delta, delta, 1 - decay_);
  }
}

void TrainingConfig::validate() const {
  if (patience < 1) throw Error(ErrorCode::InvalidArgument, "patience must be >= 1");
  if (max_epochs < 1) throw Error(ErrorCode::InvalidArgument, "max_epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(learning_rate > 0) || !(decay > 0 && decay < 1) || !(eps > 0))
    throw Error(ErrorCode::InvalidArgument, "invalid AdaDelta settings");
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"optimizer", "adadelta"}, {"learning_rate", learning_rate}, {"decay", decay},
          {"eps", eps},              {"patience", patience},           {"max_epochs", max_epochs},
          {"batch_size", batch_size}, {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay = j.value("decay", c.decay);
  c.eps = j.value("eps", c.eps);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

torch::Tensor to_tensor(std::span<const GlyphImage* const> images) {
  auto t = torch::empty({static_cast<std::int64_t>(images.size()), 1, kCanvas, kCanvas}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  for (const GlyphImage* img : images) {
    auto px = img->pixels();
    std::memcpy(dst, px.data(), px.size_bytes());
    dst += px.size();
  }
  return t;
}

torch::Tensor to_tensor(const GlyphImage& image) {
  const GlyphImage* one[] = {&image};
  return to_tensor(one);
}

GlyphImage from_tensor(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kFloat32).contiguous().reshape({-1});
  if (flat.numel() != kPixels) throw Error(ErrorCode::InvalidArgument, "tensor is not a single 64x64 image");
  return GlyphImage(std::span<const float>(flat.data_ptr<float>(), kPixels));
}

std::vector<NamedTensor> export_state(const torch::nn::Module& module) {
  std::vector<NamedTensor> out;
  auto add = [&](const std::string& name, const torch::Tensor& t) {
    NamedTensor nt;
    nt.name = name;
    nt.shape.assign(t.sizes().begin(), t.sizes().end());
    auto flat = t.detach().to(torch::kFloat32).contiguous().reshape({-1});
    nt.values.assign(flat.data_ptr<float>(), flat.data_ptr<float>() + flat.numel());
    out.push_back(std::move(nt));
  };
  for (const auto& item : module.named_parameters()) add(item.key(), item.value());
  for (const auto& item : module.named_buffers()) {
    if (item.value().scalar_type() == torch::kLong) {
      add(item.key(), item.value().to(torch::kFloat32));
    } else {
      add(item.key(), item.value());
    }
  }
  return out;
}

void import_state(torch::nn::Module& module, const std::vector<NamedTensor>& state) {
  torch::NoGradGuard no_grad;
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& nt : state) by_name[nt.name] = &nt;
  auto load = [&](const std::string& name, torch::Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::CorruptDataset, "checkpoint lacks tensor " + name);
    const NamedTensor& nt = *it->second;
    if (std::vector<std::int64_t>(dst.sizes().begin(), dst.sizes().end()) != nt.shape)
      throw Error(ErrorCode::CorruptDataset, "shape mismatch for tensor " + name);
    auto src = torch::from_blob(const_cast<float*>(nt.values.data()), dst.sizes(), torch::kFloat32);
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& item : module.named_parameters()) load(item.key(), item.value());
  for (auto& item : module.named_buffers()) load(item.key(), item.value());
}

namespace {

void write_tensors(ByteWriter& w, const std::vector<NamedTensor>& tensors) {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    w.u64(t.values.size());
    for (float v : t.values) w.f32(v);
  }
}

}  // namespace

std::string state_checksum(const torch::nn::Module& module) {
  ByteWriter w;
  write_tensors(w, export_state(module));
  return sha256_hex(w.buffer());
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  std::string header = ckpt.header.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.str(header);
  write_tensors(w, ckpt.tensors);
  Digest d = sha256(w.buffer());
  w.bytes(d);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 32) throw Error(ErrorCode::CorruptDataset, "checkpoint too short");
  auto body = bytes.first(bytes.size() - 32);
  Digest stored{};
  std::copy(bytes.end() - 32, bytes.end(), stored.begin());
  if (sha256(body) != stored) throw Error(ErrorCode::CorruptDataset, "checkpoint checksum mismatch");
  ByteReader r(body);
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin()))
    throw Error(ErrorCode::CorruptDataset, "not a checkpoint file");
  if (r.u32() != kCheckpointVersion) throw Error(ErrorCode::CorruptDataset, "unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(r.str(r.u32()));
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str(r.u16());
    std::uint8_t ndim = r.u8();
    for (int d = 0; d < ndim; ++d) t.shape.push_back(static_cast<std::int64_t>(r.u64()));
    std::uint64_t count = r.u64();
    if (count * 4 > r.remaining()) throw Error(ErrorCode::CorruptDataset, "tensor data truncated");
    t.values.resize(static_cast<size_t>(count));
    for (auto& v : t.values) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "no checkpoint at " + path.string());
  return decode_checkpoint(read_file(path));
}

}  // namespace defletter

#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "defletter/glyph.hpp"

namespace defletter {

/// Pins libtorch to one intra-op thread and deterministic kernels. Every
/// training entry point calls it; a training run is one logical stream.
void use_deterministic_runtime();

enum class Activation { Relu, Identity };
enum class Pooling { Max, Average };

/// Two conv layers (each followed by activation and pooling) and two
/// fully-connected layers. Valid (unpadded) convolutions.
struct CnnArchitecture {
  std::array<int, 2> conv_channels{32, 64};
  int kernel = 3;
  int pool = 2;
  std::array<int, 2> fc_widths{128, kNumClasses};
  Activation activation = Activation::Relu;
  Pooling pooling = Pooling::Max;

  void validate() const;
  /// Side length of the feature map entering the first FC layer.
  int flat_side() const;
  nlohmann::json to_json() const;
  static CnnArchitecture from_json(const nlohmann::json& j);
  friend bool operator==(const CnnArchitecture&, const CnnArchitecture&) = default;
};

class CnnNetImpl : public torch::nn::Cloneable<CnnNetImpl> {
 public:
  explicit CnnNetImpl(CnnArchitecture arch = {});

  void reset() override;
  /// x: [N, 1, 64, 64] -> [N, fc_widths[1]]
  torch::Tensor forward(torch::Tensor x);

  const CnnArchitecture& architecture() const { return arch_; }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  torch::Tensor act(torch::Tensor x) const;
  torch::Tensor pool(torch::Tensor x) const;
  CnnArchitecture arch_;
};
TORCH_MODULE(CnnNet);

/// AdaDelta (Zeiler 2012) with the decay and epsilon exposed.
class AdaDelta {
 public:
  explicit AdaDelta(std::vector<torch::Tensor> params, double lr = 1.0, double decay = 0.9, double eps = 1e-6);

  void zero_grad();
  void step();

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> square_avg_;
  std::vector<torch::Tensor> delta_avg_;
  double lr_, decay_, eps_;
};

/// Optimizer and stopping settings shared by the classifier and regressor.
struct TrainingConfig {
  double learning_rate = 1.0;
  double decay = 0.9;
  double eps = 1e-6;
  int patience = 10;
  int max_epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

/// Stacks images into a [N, 1, 64, 64] float tensor.
torch::Tensor to_tensor(std::span<const GlyphImage* const> images);
torch::Tensor to_tensor(const GlyphImage& image);
GlyphImage from_tensor(const torch::Tensor& t);  // [1,64,64] or [64,64]

/// Named parameters and buffers in registration order, flattened to float.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

std::vector<NamedTensor> export_state(const torch::nn::Module& module);
void import_state(torch::nn::Module& module, const std::vector<NamedTensor>& state);
/// Hex SHA-256 over names, shapes and raw float bytes of all parameters and buffers.
std::string state_checksum(const torch::nn::Module& module);

/// On-disk model container: JSON header + tensor blob + SHA-256 trailer.
struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace defletter

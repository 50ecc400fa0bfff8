#pragma once

#include <functional>

#include "defletter/classifier.hpp"

namespace defletter::detail {

/// Mean loss over a mini-batch.
using BatchLoss = std::function<torch::Tensor(CnnNet&, const torch::Tensor& x, const torch::Tensor& y)>;

/// AdaDelta mini-batch training with early stopping on validation loss:
/// stops once `patience` consecutive epochs fail to improve the best
/// validation loss, then restores the best parameters.
TrainingHistory train_early_stopping(CnnNet& net, const torch::Tensor& train_x, const torch::Tensor& train_y,
                                     const torch::Tensor& val_x, const torch::Tensor& val_y, const BatchLoss& loss,
                                     const TrainingConfig& cfg, const std::string& tag);

/// Mean loss over a whole set, evaluated in chunks without gradients.
double mean_loss(CnnNet& net, const torch::Tensor& x, const torch::Tensor& y, const BatchLoss& loss, int batch);

}  // namespace defletter::detail

#include "training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "defletter/log.hpp"
#include "defletter/util.hpp"

namespace defletter::detail {

double mean_loss(CnnNet& net, const torch::Tensor& x, const torch::Tensor& y, const BatchLoss& loss, int batch) {
  torch::NoGradGuard no_grad;
  const std::int64_t n = x.size(0);
  double total = 0;
  for (std::int64_t start = 0; start < n; start += batch) {
    std::int64_t len = std::min<std::int64_t>(batch, n - start);
    auto l = loss(net, x.narrow(0, start, len), y.narrow(0, start, len));
    total += l.item<double>() * static_cast<double>(len);
  }
  return total / static_cast<double>(n);
}

TrainingHistory train_early_stopping(CnnNet& net, const torch::Tensor& train_x, const torch::Tensor& train_y,
                                     const torch::Tensor& val_x, const torch::Tensor& val_y, const BatchLoss& loss,
                                     const TrainingConfig& cfg, const std::string& tag) {
  cfg.validate();
  AdaDelta opt(net->parameters(), cfg.learning_rate, cfg.decay, cfg.eps);
  Rng rng(cfg.seed);
  const std::int64_t n = train_x.size(0);
  std::vector<std::int64_t> order(static_cast<size_t>(n));

  TrainingHistory history;
  double best = std::numeric_limits<double>::infinity();
  std::vector<NamedTensor> best_state = export_state(*net);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    auto perm = torch::tensor(order, torch::kLong);
    net->train();
    double epoch_loss = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      std::int64_t len = std::min<std::int64_t>(cfg.batch_size, n - start);
      auto idx = perm.narrow(0, start, len);
      opt.zero_grad();
      auto l = loss(net, train_x.index_select(0, idx), train_y.index_select(0, idx));
      double lv = l.item<double>();
      if (!std::isfinite(lv))
        throw Error(ErrorCode::DivergedTraining, tag + ": non-finite training loss in epoch " + std::to_string(epoch));
      l.backward();
      opt.step();
      epoch_loss += lv * static_cast<double>(len);
    }
    net->eval();
    double val = mean_loss(net, val_x, val_y, loss, 512);
    if (!std::isfinite(val))
      throw Error(ErrorCode::DivergedTraining, tag + ": non-finite validation loss in epoch " + std::to_string(epoch));
    history.train_loss.push_back(epoch_loss / static_cast<double>(n));
    history.val_loss.push_back(val);
    history.epochs_run = epoch;
    log::info(tag, " epoch ", epoch, " train_loss=", history.train_loss.back(), " val_loss=", val);
    if (val < best) {
      best = val;
      history.best_epoch = epoch;
      best_state = export_state(*net);
    } else if (epoch - history.best_epoch >= cfg.patience) {
      break;
    }
  }
  import_state(*net, best_state);
  net->eval();
  return history;
}

}  // namespace defletter::detail

#pragma once

#include "mvood/checkpoint.hpp"
#include "mvood/datasets.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace mvood {

struct TrainConfig {
  int max_epochs = 250;
  int patience = 30;
  double lr = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;  // one entry per completed epoch
  std::vector<double> val_loss;
  int stopped_epoch = 0;  // 1-based
  int best_epoch = 0;     // 1-based
  bool early_stopped = false;
};

/// Patience counter over strictly improving validation losses.
class EarlyStopping {
 public:
  enum class Decision { Continue, Stop };

  explicit EarlyStopping(int patience) : patience_(patience) {}

  Decision update(double val_loss);

  int epoch() const { return epoch_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  bool improved_last() const { return stale_ == 0; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Stacks the `slot`-th view of `examples[idx]` into a [N,1,H,W] tensor.
Tensor<float> stack_view(const std::vector<ViewTriplet>& examples,
                         std::span<const std::size_t> idx, std::size_t slot);

/// Mean objective over `examples` with epsilon = 0.
double evaluate_loss(const ParamSet<float>& params, const VAEConfig& cfg,
                     const std::vector<ViewTriplet>& examples, int batch_size);

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Control-only training with Adam and early stopping on the tuning
/// controls. Returns the parameters of the best validation epoch. For the
/// sVAE only the axial slot of each triplet is used.
std::pair<ModelCheckpoint, TrainHistory> fit(const VAEConfig& model,
                                             const std::vector<ViewTriplet>& train,
                                             const std::vector<ViewTriplet>& tune_controls,
                                             const TrainConfig& cfg,
                                             const EpochCallback& on_epoch = {});

}  // namespace mvood

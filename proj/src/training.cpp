#include "mvood/training.hpp"

#include "mvood/random.hpp"

#include <numeric>
#include <stdexcept>

namespace mvood {

void TrainConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (patience < 1 || patience >= max_epochs)
    throw std::invalid_argument("train: patience must be in [1, max_epochs)");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
}

EarlyStopping::Decision EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_ ? Decision::Stop : Decision::Continue;
}

Tensor<float> stack_view(const std::vector<ViewTriplet>& examples, std::span<const std::size_t> idx,
                         std::size_t slot) {
  if (idx.empty()) throw std::invalid_argument("stack_view: empty batch");
  const Image& first = examples[idx[0]][slot].pixels;
  const Index h = first.rows(), w = first.cols();
  if (h == 0 || w == 0)
    throw std::invalid_argument("stack_view: missing " + to_string(kPlanarViews[slot]) + " slice");
  Vec<float> data(static_cast<Index>(idx.size()) * h * w);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const Image& img = examples[idx[n]][slot].pixels;
    if (img.rows() != h || img.cols() != w)
      throw ShapeError("stack_view: slices of differing size in one batch");
    std::copy(img.data(), img.data() + h * w, data.data() + static_cast<Index>(n) * h * w);
  }
  return Tensor<float>({static_cast<Index>(idx.size()), 1, h, w}, std::move(data));
}

namespace {

std::array<Tensor<float>, 3> batch_inputs(const VAEConfig& cfg,
                                          const std::vector<ViewTriplet>& examples,
                                          std::span<const std::size_t> idx) {
  std::array<Tensor<float>, 3> in;
  const std::size_t views = cfg.multi_view ? 3 : 1;
  for (std::size_t v = 0; v < views; ++v) in[v] = stack_view(examples, idx, v);
  return in;
}

void check_examples(const std::vector<ViewTriplet>& examples, bool multi_view, const char* what) {
  for (const auto& t : examples) {
    const std::size_t views = multi_view ? 3 : 1;
    for (std::size_t v = 0; v < views; ++v) {
      if (t[v].label != 0)
        throw std::invalid_argument(std::string("fit: ") + what + " contains a lesion slice (" +
                                    t[v].patient_id + " " + to_string(t[v].view) + " " +
                                    std::to_string(t[v].index) + ")");
      if (t[v].split == "eval")
        throw std::invalid_argument(std::string("fit: ") + what + " contains eval-split data (" +
                                    t[v].patient_id + ")");
    }
  }
}

}  // namespace

double evaluate_loss(const ParamSet<float>& params, const VAEConfig& cfg,
                     const std::vector<ViewTriplet>& examples, int batch_size) {
  if (examples.empty()) throw std::invalid_argument("evaluate_loss: no examples");
  const ParamSet<float> frozen = clone_params(params, false);
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i)
      idx.push_back(i);
    const auto loss = model_loss(frozen, cfg, batch_inputs(cfg, examples, idx));
    total += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(examples.size());
}

std::pair<ModelCheckpoint, TrainHistory> fit(const VAEConfig& model,
                                             const std::vector<ViewTriplet>& train,
                                             const std::vector<ViewTriplet>& tune_controls,
                                             const TrainConfig& cfg, const EpochCallback& on_epoch) {
  model.validate();
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  if (tune_controls.empty()) throw std::invalid_argument("fit: empty validation set");
  check_examples(train, model.multi_view, "training set");
  check_examples(tune_controls, model.multi_view, "validation set");

  ParamSet<float> params = init_vae_params<float>(model, derive_seed(cfg.seed, "init"));
  AdamState<float> adam;
  adam.lr = cfg.lr;
  Rng rng(derive_seed(cfg.seed, "batches"));

  ModelCheckpoint best{model, clone_params(params, false)};
  TrainHistory history;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const Index latent = model.latent_dim;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto n = static_cast<Index>(idx.size());
      Epsilon<float> eps;
      for (std::size_t v = 0; v < (model.multi_view ? 3u : 1u); ++v) {
        Vec<float> e(n * latent);
        for (Index i = 0; i < e.size(); ++i) e[i] = static_cast<float>(rng.normal());
        eps[v] = Tensor<float>({n, latent}, std::move(e));
      }
      zero_grads(params);
      const auto loss = model_loss(params, model, batch_inputs(model, train, idx), eps);
      backward(loss);
      adam_step(params, adam);
      epoch_loss += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }
    const double train_loss = epoch_loss / static_cast<double>(train.size());
    const double val_loss = evaluate_loss(params, model, tune_controls, cfg.batch_size);
    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val_loss);
    const auto decision = stopper.update(val_loss);
    if (stopper.improved_last()) best.params = clone_params(params, false);
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
    history.stopped_epoch = epoch;
    if (decision == EarlyStopping::Decision::Stop) {
      history.early_stopped = true;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  return {std::move(best), std::move(history)};
}

}  // namespace mvood

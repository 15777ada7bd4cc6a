#include "mvood/ood.hpp"

#include "mvood/random.hpp"
#include "mvood/stats.hpp"
#include "mvood/training.hpp"

#include <numeric>
#include <stdexcept>

namespace mvood {

std::string to_string(ViewPolicy p) { return p == ViewPolicy::AllViews ? "all" : "axial"; }

ViewPolicy parse_view_policy(const std::string& s) {
  if (s == "all") return ViewPolicy::AllViews;
  if (s == "axial") return ViewPolicy::AxialOnly;
  throw std::invalid_argument("unknown view policy '" + s + "' (expected all|axial)");
}

namespace {

void require_axial(const std::vector<ViewTriplet>& samples) {
  for (const auto& t : samples)
    if (t.axial.view != View::Axial)
      throw std::invalid_argument("detection scores axial slices only; got " +
                                  to_string(t.axial.view) + " slice of " + t.axial.patient_id);
}

std::vector<std::size_t> batch_range(std::size_t start, std::size_t end) {
  std::vector<std::size_t> idx(end - start);
  std::iota(idx.begin(), idx.end(), start);
  return idx;
}

std::array<Tensor<float>, 3> inputs_for(const VAEConfig& cfg, ViewPolicy views,
                                        const std::vector<ViewTriplet>& samples,
                                        std::span<const std::size_t> idx, bool zero_fill) {
  std::array<Tensor<float>, 3> in;
  in[0] = stack_view(samples, idx, 0);
  if (cfg.multi_view) {
    for (std::size_t v = 1; v < 3; ++v)
      in[v] = (views == ViewPolicy::AllViews) ? stack_view(samples, idx, v)
              : zero_fill                     ? Tensor<float>::zeros(in[0].shape())
                                              : Tensor<float>{};
  }
  return in;
}

}  // namespace

std::vector<OODScore> reconstruction_scores(const ModelCheckpoint& ckpt,
                                            const std::vector<ViewTriplet>& samples,
                                            ViewPolicy views, int batch_size) {
  check_params_match(ckpt.params, ckpt.config);
  require_axial(samples);
  const auto& cfg = ckpt.config;
  const ParamSet<float> frozen = clone_params(ckpt.params, false);
  std::vector<OODScore> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto idx = batch_range(start, std::min(samples.size(), start + batch_size));
    const auto in = inputs_for(cfg, views, samples, idx, true);
    const auto fwd = cfg.multi_view ? mvae_forward(frozen, cfg, in) : svae_forward(frozen, cfg, in[0]);
    const auto& recon = fwd.views[0].reconstruction.values();
    const Index per = in[0].numel() / static_cast<Index>(idx.size());
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto off = static_cast<Index>(n) * per;
      const double mse =
          static_cast<double>((recon.segment(off, per) - in[0].values().segment(off, per)).squaredNorm()) /
          static_cast<double>(per);
      const auto& s = samples[idx[n]].axial;
      out.push_back({s.patient_id, s.view, s.index, s.label, mse});
    }
  }
  return out;
}

ThresholdModel iqr_threshold(std::span<const double> scores) {
  if (scores.size() < 4) throw std::invalid_argument("iqr_threshold: need at least 4 scores");
  ThresholdModel t;
  t.q1 = quantile(scores, 0.25);
  t.q3 = quantile(scores, 0.75);
  t.iqr = t.q3 - t.q1;
  t.threshold = t.q3 + 1.5 * t.iqr;
  return t;
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("finetune: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("finetune: lr must be positive");
}

FinetunedClassifier make_classifier(const ModelCheckpoint& ckpt, ViewPolicy views,
                                    std::uint64_t seed) {
  check_params_match(ckpt.params, ckpt.config);
  FinetunedClassifier clf;
  clf.config = ckpt.config;
  clf.views = ckpt.config.multi_view ? views : ViewPolicy::AxialOnly;
  const std::size_t n_views = (ckpt.config.multi_view && clf.views == ViewPolicy::AllViews) ? 3 : 1;
  for (std::size_t v = 0; v < n_views; ++v) {
    const std::string prefix = encoder_prefix(kPlanarViews[v]) + ".";
    for (const auto& [name, t] : ckpt.params)
      if (name.rfind(prefix, 0) == 0) clf.params.emplace(name, t.detach(true));
  }
  Rng rng(derive_seed(seed, "head"));
  const Index in = Index{ckpt.config.latent_dim} * static_cast<Index>(n_views);
  detail::init_linear(clf.params, "head", in, 2, rng);
  return clf;
}

FinetuneResult finetune_classifier(const ModelCheckpoint& ckpt,
                                   const std::vector<ViewTriplet>& labelled,
                                   const FinetuneConfig& cfg) {
  cfg.validate();
  require_axial(labelled);
  std::size_t positives = 0;
  for (const auto& t : labelled) positives += t.axial.label == 1;
  if (positives == 0 || positives == labelled.size())
    throw std::invalid_argument("finetune: labelled split must contain both classes");

  FinetuneResult result{make_classifier(ckpt, cfg.views, cfg.seed), {}};
  auto& clf = result.classifier;

  // Parameters that reach the logits; the logvar heads stay as loaded.
  ParamSet<float> trainable;
  for (auto& [name, t] : clf.params)
    if (name.find(".logvar.") == std::string::npos) trainable.emplace(name, t);
    else t.set_requires_grad(false);

  AdamState<float> adam;
  adam.lr = cfg.lr;
  Rng rng(derive_seed(cfg.seed, "finetune_batches"));
  std::vector<std::size_t> order(labelled.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Vec<float> y(static_cast<Index>(idx.size()));
      for (std::size_t n = 0; n < idx.size(); ++n)
        y[static_cast<Index>(n)] = static_cast<float>(labelled[idx[n]].axial.label);
      const Tensor<float> labels({static_cast<Index>(idx.size())}, std::move(y));
      zero_grads(trainable);
      const auto logits =
          classifier_logits(clf.params, clf.config, clf.views,
                            inputs_for(clf.config, clf.views, labelled, idx, false));
      const auto loss = cross_entropy_loss(logits, labels);
      backward(loss);
      adam_step(trainable, adam);
      total += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }
    result.epoch_loss.push_back(total / static_cast<double>(labelled.size()));
  }
  for (auto& [name, t] : clf.params) t.set_requires_grad(false);
  return result;
}

namespace {

std::vector<double> run_classifier(const FinetunedClassifier& clf,
                                   const std::vector<ViewTriplet>& samples, int batch_size,
                                   std::vector<int>* predictions) {
  require_axial(samples);
  const ParamSet<float> frozen = clone_params(clf.params, false);
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto idx = batch_range(start, std::min(samples.size(), start + batch_size));
    const auto logits = classifier_logits(frozen, clf.config, clf.views,
                                          inputs_for(clf.config, clf.views, samples, idx, false));
    const auto z = detail::as_rows(logits.values(), static_cast<Index>(idx.size()), 2);
    for (Index n = 0; n < z.rows(); ++n) {
      const double a = z(n, 0), b = z(n, 1);
      out.push_back(1.0 / (1.0 + std::exp(a - b)));
      if (predictions) predictions->push_back(b > a ? 1 : 0);
    }
  }
  return out;
}

}  // namespace

std::vector<double> classifier_probabilities(const FinetunedClassifier& clf,
                                             const std::vector<ViewTriplet>& samples,
                                             int batch_size) {
  return run_classifier(clf, samples, batch_size, nullptr);
}

std::vector<Detection> detect(const DetectionArtifacts& artifacts,
                              const std::vector<ViewTriplet>& samples) {
  require_axial(samples);
  std::vector<Detection> out;
  out.reserve(samples.size());
  if (const auto* th = std::get_if<ThresholdArtifacts>(&artifacts)) {
    for (const auto& s : reconstruction_scores(th->checkpoint, samples, th->views))
      out.push_back({s.patient_id, s.view, s.slice, s.label, s.score,
                     s.score > th->threshold.threshold ? 1 : 0});
    return out;
  }
  const auto& clf = std::get<FinetunedClassifier>(artifacts);
  std::vector<int> pred;
  const auto probs = run_classifier(clf, samples, 32, &pred);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i].axial;
    out.push_back({s.patient_id, s.view, s.index, s.label, probs[i], pred[i]});
  }
  return out;
}

}  // namespace mvood

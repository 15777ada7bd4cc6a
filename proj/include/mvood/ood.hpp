#pragma once

#include "mvood/checkpoint.hpp"
#include "mvood/datasets.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace mvood {

/// Which views an mVAE consumes at detection time. For threshold scoring,
/// AllViews feeds the co-acquired coronal and sagittal slices and AxialOnly
/// zero-fills them. For fine-tuning, AxialOnly keeps just the axial encoder
/// and AllViews keeps all three encoders feeding one head. The sVAE always
/// behaves as AxialOnly.
enum class ViewPolicy { AllViews, AxialOnly };

std::string to_string(ViewPolicy p);
ViewPolicy parse_view_policy(const std::string& s);

struct OODScore {
  std::string patient_id;
  View view = View::Axial;
  int slice = 0;
  int label = 0;
  double score = 0.0;  // axial reconstruction MSE
};

/// Per-sample axial reconstruction loss with epsilon = 0.
std::vector<OODScore> reconstruction_scores(const ModelCheckpoint& ckpt,
                                            const std::vector<ViewTriplet>& samples,
                                            ViewPolicy views = ViewPolicy::AllViews,
                                            int batch_size = 32);

struct ThresholdModel {
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double threshold = 0.0;  // Tukey upper fence q3 + 1.5 * iqr
};

ThresholdModel iqr_threshold(std::span<const double> tuning_scores);

struct FinetuneConfig {
  int epochs = 30;
  double lr = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  ViewPolicy views = ViewPolicy::AxialOnly;

  void validate() const;
};

/// Pretrained encoder(s) plus a fully connected head "head.{weight,bias}"
/// mapping the posterior mean to two logits.
struct FinetunedClassifier {
  VAEConfig config;
  ViewPolicy views = ViewPolicy::AxialOnly;
  ParamSet<float> params;
};

/// Classifier built from a VAE checkpoint before any training step.
FinetunedClassifier make_classifier(const ModelCheckpoint& ckpt, ViewPolicy views,
                                    std::uint64_t seed);

template <typename Scalar>
Tensor<Scalar> classifier_logits(const ParamSet<Scalar>& params, const VAEConfig& cfg,
                                 ViewPolicy views, const std::array<Tensor<Scalar>, 3>& inputs) {
  std::vector<Tensor<Scalar>> feats;
  const std::size_t n_views = (cfg.multi_view && views == ViewPolicy::AllViews) ? 3 : 1;
  for (std::size_t v = 0; v < n_views; ++v) {
    if (!inputs[v].defined())
      throw std::invalid_argument("classifier: missing " + to_string(kPlanarViews[v]) + " input");
    feats.push_back(encode(params, cfg, encoder_prefix(kPlanarViews[v]), inputs[v]).first);
  }
  const auto h = n_views == 1 ? feats[0] : concat_features(feats);
  return linear(h, detail::param(params, std::string("head.weight")),
                detail::param(params, std::string("head.bias")));
}

struct FinetuneResult {
  FinetunedClassifier classifier;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

/// Trains the encoder(s) and the new head with cross-entropy on a labelled
/// split containing both classes. The decoder is discarded.
FinetuneResult finetune_classifier(const ModelCheckpoint& ckpt,
                                   const std::vector<ViewTriplet>& labelled,
                                   const FinetuneConfig& cfg);

/// Softmax class-1 probability per triplet (axial label context).
std::vector<double> classifier_probabilities(const FinetunedClassifier& clf,
                                             const std::vector<ViewTriplet>& samples,
                                             int batch_size = 32);

struct Detection {
  std::string patient_id;
  View view = View::Axial;
  int slice = 0;
  int label = 0;
  double score = 0.0;  // reconstruction loss or class-1 probability
  int prediction = 0;
};

struct ThresholdArtifacts {
  ModelCheckpoint checkpoint;
  ThresholdModel threshold;
  ViewPolicy views = ViewPolicy::AllViews;
};

using DetectionArtifacts = std::variant<ThresholdArtifacts, FinetunedClassifier>;

/// Scores axial slices only. Threshold mode predicts 1 iff score > threshold;
/// fine-tune mode predicts the argmax logit, ties going to class 0.
std::vector<Detection> detect(const DetectionArtifacts& artifacts,
                              const std::vector<ViewTriplet>& samples);

}  // namespace mvood

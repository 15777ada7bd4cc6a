#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mvood {

struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;  // sensitivity
  double f1 = 0.0;
  double specificity = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  bool undefined_precision = false;  // no positive predictions
  bool undefined_recall = false;     // no positive labels
  bool undefined_specificity = false;
};

/// Confusion-matrix metrics with lesion (1) as the positive class.
/// Zero denominators yield 0 with the matching flag set.
BinaryMetrics binary_metrics(std::span<const int> predictions, std::span<const int> labels);

enum class ScoreKind { Probability, Raw };

/// Mean over both classes of the one-vs-rest AUC (ties count 0.5); class 0
/// is scored by 1 - s for probabilities and -s for raw scores. For binary
/// labels this equals the ordinary AUC.
double macro_auc(std::span<const double> scores, std::span<const int> labels,
                 ScoreKind kind = ScoreKind::Probability);

/// Ordinary Mann-Whitney AUC of positives over negatives.
double binary_auc(std::span<const double> scores, std::span<const int> labels);

struct EvalSet {
  std::vector<int> predictions;
  std::vector<double> scores;
  std::vector<int> labels;
  ScoreKind kind = ScoreKind::Probability;

  EvalSet subset(std::span<const std::size_t> idx) const;
};

struct BootstrapConfig {
  int n_replicates = 100;
  double ci_level = 0.95;
  double alpha = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BootstrapResult {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> replicates;
};

/// Resample indices of replicate `r`: with replacement within each class, so
/// class counts are preserved. Depends only on (seed, r, labels).
std::vector<std::size_t> bootstrap_indices(std::span<const int> labels, std::uint64_t seed,
                                           int replicate);

using MetricFn = std::function<double(const EvalSet&)>;

/// Stratified percentile bootstrap of `metric` on `data`.
BootstrapResult bootstrap_ci(const MetricFn& metric, const EvalSet& data,
                             const BootstrapConfig& cfg);

struct WilcoxonResult {
  double w = 0.0;        // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;  // two-sided
  int n = 0;             // pairs after dropping zero differences
  bool exact = false;
};

/// Paired Wilcoxon signed-rank test on a - b. Zero differences are dropped,
/// ties get mid-ranks. Exact p (all 2^n sign assignments, counted via the
/// rank-sum distribution) for n <= 25, otherwise the normal approximation
/// with continuity and tie correction.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Normal-approximation p for the same statistic, exposed for comparison.
double wilcoxon_normal_p(std::span<const double> a, std::span<const double> b);

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy", "precision", "recall", "f1",
                                              "specificity", "macro_auc"};
  return names;
}

struct EvalReport {
  std::string name;
  int n_samples = 0;
  int n_positive = 0;
  std::map<std::string, BootstrapResult> metrics;
  BinaryMetrics confusion;
};

EvalReport evaluate_model(const std::string& name, const EvalSet& data, const BootstrapConfig& cfg);

struct Comparison {
  std::string a, b;
  std::string metric = "macro_auc";
  WilcoxonResult test;
  bool significant = false;
};

/// Wilcoxon on paired per-replicate macro-AUC values; significant iff p < alpha.
Comparison compare_models(const EvalReport& a, const EvalReport& b, const BootstrapConfig& cfg);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const Comparison& c);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Box plot of bootstrapped macro-AUC replicates with CI whiskers, one box
/// per model.
std::string bootstrap_svg(const std::vector<EvalReport>& reports);

}  // namespace mvood

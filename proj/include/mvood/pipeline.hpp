#pragma once

#include "mvood/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mvood {

namespace fs = std::filesystem;

/// Generates the phantom cohort and writes one volume + mask per patient and
/// view under `out_dir`, plus `out_dir/manifest.csv`.
Manifest write_phantom_dataset(const PhantomSpec& spec, const fs::path& out_dir);

/// Preprocesses every manifest record into `out_dir` and writes
/// `out_dir/manifest.csv` pointing at the processed files.
Manifest preprocess_dataset(const fs::path& manifest_path, const PreprocessConfig& cfg,
                            const fs::path& out_dir);

/// Slices of every record, labelled from its mask and tagged with the
/// record's split. Volumes are assumed to be preprocessed already.
std::vector<SliceSample> load_slices(const fs::path& manifest_path, const PreprocessConfig& cfg);

/// Same slices computed in memory straight from a phantom spec.
std::vector<SliceSample> phantom_slices(const PhantomSpec& spec, const PreprocessConfig& cfg);

/// Patient-level split of a preprocessed manifest. Writes the tagged
/// manifest and `split_report.json` to `out_dir`; returns the report.
nlohmann::json split_dataset(const fs::path& manifest_path, const SplitConfig& split,
                             const PreprocessConfig& cfg, const fs::path& out_dir);

nlohmann::json split_report(const SplitResult& result);

/// View triplets grouped by role.
struct PipelineData {
  std::vector<ViewTriplet> train;          // control patients of the train split
  std::vector<ViewTriplet> tune_controls;  // control patients of the tune split
  std::vector<ViewTriplet> tune;           // whole tune split
  std::vector<ViewTriplet> eval;           // whole eval split
};

/// Groups split-tagged slices. Throws if any slice lacks a split tag.
PipelineData group_by_split(const std::vector<SliceSample>& samples);

/// Fine-tuning or thresholding fitted on the tune split, then applied to
/// the eval split.
std::vector<Detection> threshold_detection(const ModelCheckpoint& ckpt, const PipelineData& data,
                                           ViewPolicy views, ThresholdModel* fitted = nullptr);
std::vector<Detection> finetune_detection(const ModelCheckpoint& ckpt, const PipelineData& data,
                                          const FinetuneConfig& cfg,
                                          FinetuneResult* fitted = nullptr);

void write_scores_csv(const std::vector<Detection>& rows, const fs::path& path);
std::vector<Detection> read_scores_csv(const fs::path& path);

EvalSet to_eval_set(const std::vector<Detection>& rows, ScoreKind kind = ScoreKind::Raw);

void write_history_csv(const TrainHistory& h, const fs::path& path);

/// Evaluates named score sets on a shared bootstrap stream and compares
/// every pair. All sets must carry identical label vectors.
nlohmann::json evaluate_scores(const std::vector<std::pair<std::string, EvalSet>>& sets,
                               const BootstrapConfig& cfg, std::vector<EvalReport>* reports = nullptr);

/// Table of point [low, high] values (percent) per model plus p-values.
struct ResultTable {
  std::string csv;
  std::string markdown;
};

ResultTable summary_table(const std::vector<nlohmann::json>& evaluation_reports);

}  // namespace mvood

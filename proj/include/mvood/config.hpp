#pragma once

#include "mvood/metrics.hpp"
#include "mvood/ood.hpp"
#include "mvood/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>

namespace mvood {

/// Everything one pipeline run needs. Sections without an explicit `seed`
/// take derive_seed(seed, "<section name>").
struct RunConfig {
  std::uint64_t seed = 0;
  PhantomSpec phantom;
  PreprocessConfig preprocess;
  SplitConfig split;
  VAEConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  ViewPolicy threshold_views = ViewPolicy::AllViews;
  BootstrapConfig bootstrap;

  void validate() const;
};

/// Strict parse: unknown keys anywhere are errors. A missing section keeps
/// its defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace mvood

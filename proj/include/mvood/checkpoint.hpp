#pragma once

#include "mvood/models.hpp"
#include "mvood/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace mvood {

/// ParamSet on disk: `<dir>/params.bin` holds little-endian float32 values of
/// every tensor back to back (lexicographic name order); `<dir>/params.json`
/// maps name -> {shape, offset} (offset in bytes) and carries `extra`.
void save_params(const ParamSet<float>& params, const std::filesystem::path& dir,
                 const nlohmann::json& extra = nlohmann::json::object());

struct LoadedParams {
  ParamSet<float> params;
  nlohmann::json extra;
};

LoadedParams load_params(const std::filesystem::path& dir, bool requires_grad = false);

nlohmann::json to_json(const VAEConfig& cfg);
/// Strict: unknown keys are errors.
VAEConfig vae_config_from_json(const nlohmann::json& j);

struct ModelCheckpoint {
  VAEConfig config;
  ParamSet<float> params;
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& dir);
ModelCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Throws unless `params` has exactly the names and shapes `cfg` implies.
void check_params_match(const ParamSet<float>& params, const VAEConfig& cfg);

}  // namespace mvood

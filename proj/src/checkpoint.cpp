#include "mvood/checkpoint.hpp"

#include "mvood/json_util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace mvood {

namespace fs = std::filesystem;
using nlohmann::json;

void VAEConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("model: latent_dim must be >= 1");
  if (beta < 0.0) throw std::invalid_argument("model: beta must be >= 0");
  if (channels.empty()) throw std::invalid_argument("model: need at least one encoder block");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("model: channel widths must be positive");
  const int div = 1 << channels.size();
  if (height < div || width < div || height % div || width % div)
    throw std::invalid_argument("model: input size must be divisible by " + std::to_string(div));
  const auto& w = loss_weights;
  if (w.axial < 0 || w.coronal < 0 || w.sagittal < 0)
    throw std::invalid_argument("model: loss weights must be non-negative");
  if (multi_view && w.axial == 0 && w.coronal == 0 && w.sagittal == 0)
    throw std::invalid_argument("model: multi-view loss weights cannot all be zero");
}

json to_json(const VAEConfig& cfg) {
  return json{{"height", cfg.height},
              {"width", cfg.width},
              {"channels", cfg.channels},
              {"latent_dim", cfg.latent_dim},
              {"beta", cfg.beta},
              {"multi_view", cfg.multi_view},
              {"loss_weights",
               {{"axial", cfg.loss_weights.axial},
                {"coronal", cfg.loss_weights.coronal},
                {"sagittal", cfg.loss_weights.sagittal}}}};
}

VAEConfig vae_config_from_json(const json& j) {
  JsonReader r(j, "model");
  VAEConfig cfg;
  r.get("height", cfg.height);
  r.get("width", cfg.width);
  r.get("channels", cfg.channels);
  r.get("latent_dim", cfg.latent_dim);
  r.get("beta", cfg.beta);
  r.get("multi_view", cfg.multi_view);
  if (r.has("loss_weights")) {
    JsonReader w(r.child("loss_weights"), "model.loss_weights");
    w.get("axial", cfg.loss_weights.axial);
    w.get("coronal", cfg.loss_weights.coronal);
    w.get("sagittal", cfg.loss_weights.sagittal);
    w.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

void save_params(const ParamSet<float>& params, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  json index = json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    index[name] = {{"shape", t.shape()}, {"offset", offset}};
    for (Index i = 0; i < t.numel(); ++i) {
      std::uint32_t w = std::bit_cast<std::uint32_t>(t.values()[i]);
      if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
      blob.write(reinterpret_cast<const char*>(&w), 4);
    }
    offset += static_cast<std::size_t>(t.numel()) * 4;
  }
  json doc = extra;
  doc["tensors"] = index;
  doc["total_bytes"] = offset;
  std::ofstream out(dir / "params.json", std::ios::trunc);
  out << doc.dump(2) << '\n';
}

LoadedParams load_params(const fs::path& dir, bool requires_grad) {
  std::ifstream in(dir / "params.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "params.json").string());
  json doc;
  in >> doc;
  std::ifstream blob_in(dir / "params.bin", std::ios::binary);
  if (!blob_in) throw std::runtime_error("cannot open " + (dir / "params.bin").string());
  const std::string blob((std::istreambuf_iterator<char>(blob_in)),
                         std::istreambuf_iterator<char>());
  if (doc.contains("total_bytes") && blob.size() != doc["total_bytes"].get<std::size_t>())
    throw std::runtime_error("checkpoint byte count mismatch in " + dir.string());
  LoadedParams out;
  for (const auto& [name, entry] : doc.at("tensors").items()) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const Index n = shape_numel(shape);
    if (offset + static_cast<std::size_t>(n) * 4 > blob.size())
      throw std::runtime_error("checkpoint tensor '" + name + "' runs past end of params.bin");
    Vec<float> v(n);
    for (Index i = 0; i < n; ++i) {
      std::uint32_t w;
      std::memcpy(&w, blob.data() + offset + static_cast<std::size_t>(i) * 4, 4);
      if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
      v[i] = std::bit_cast<float>(w);
    }
    out.params.emplace(name, Tensor<float>(shape, std::move(v), requires_grad));
  }
  doc.erase("tensors");
  doc.erase("total_bytes");
  out.extra = std::move(doc);
  return out;
}

void check_params_match(const ParamSet<float>& params, const VAEConfig& cfg) {
  const auto expect = init_vae_params<float>(cfg, 0);
  std::set<std::string> missing, unexpected;
  for (const auto& [name, t] : expect) {
    auto it = params.find(name);
    if (it == params.end()) {
      missing.insert(name);
    } else if (it->second.shape() != t.shape()) {
      throw std::invalid_argument("checkpoint/config mismatch: '" + name + "' has shape " +
                                  shape_str(it->second.shape()) + ", config implies " +
                                  shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : params)
    if (!expect.count(name)) unexpected.insert(name);
  if (!missing.empty() || !unexpected.empty())
    throw std::invalid_argument("checkpoint/config mismatch: " + std::to_string(missing.size()) +
                                " missing and " + std::to_string(unexpected.size()) +
                                " unexpected parameters");
}

void save_checkpoint(const ModelCheckpoint& ckpt, const fs::path& dir) {
  check_params_match(ckpt.params, ckpt.config);
  save_params(ckpt.params, dir, json{{"config", to_json(ckpt.config)}});
}

ModelCheckpoint load_checkpoint(const fs::path& dir) {
  auto loaded = load_params(dir, false);
  if (!loaded.extra.contains("config"))
    throw std::runtime_error("checkpoint " + dir.string() + " has no embedded config");
  ModelCheckpoint ckpt{vae_config_from_json(loaded.extra.at("config")), std::move(loaded.params)};
  check_params_match(ckpt.params, ckpt.config);
  return ckpt;
}

}  // namespace mvood

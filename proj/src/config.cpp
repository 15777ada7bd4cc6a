#include "mvood/config.hpp"

#include "mvood/json_util.hpp"
#include "mvood/random.hpp"

#include <fstream>

namespace mvood {

using nlohmann::json;

namespace {

std::uint64_t section_seed(JsonReader& r, std::uint64_t global, const char* name) {
  std::uint64_t seed = derive_seed(global, name);
  r.get("seed", seed);
  return seed;
}

void read_phantom(const json& j, std::uint64_t global, PhantomSpec& p) {
  JsonReader r(j, "phantom");
  r.get("n_patients", p.n_patients);
  r.get("grid", p.grid);
  r.get("spacing", p.spacing);
  r.get("lesion_fraction", p.lesion_fraction);
  r.get("lesion_radius_mm", p.lesion_radius_mm);
  r.get("lesion_contrast", p.lesion_contrast);
  r.get("noise_sigma", p.noise_sigma);
  p.seed = section_seed(r, global, "phantom");
  r.finish();
}

void read_preprocess(const json& j, PreprocessConfig& p) {
  JsonReader r(j, "preprocess");
  r.get("target_spacing", p.target_spacing);
  std::array<double, 2> clip{p.clip_low, p.clip_high};
  r.get("clip_percentiles", clip);
  p.clip_low = clip[0];
  p.clip_high = clip[1];
  std::array<int, 2> size{p.slice_height, p.slice_width};
  r.get("slice_size", size);
  p.slice_height = size[0];
  p.slice_width = size[1];
  r.finish();
}

void read_split(const json& j, std::uint64_t global, SplitConfig& s) {
  JsonReader r(j, "split");
  r.get("control_fractions", s.control_fractions);
  r.get("case_fractions", s.case_fractions);
  s.seed = section_seed(r, global, "split");
  r.finish();
}

void read_train(const json& j, std::uint64_t global, TrainConfig& t) {
  JsonReader r(j, "train");
  r.get("max_epochs", t.max_epochs);
  r.get("patience", t.patience);
  r.get("lr", t.lr);
  r.get("batch_size", t.batch_size);
  t.seed = section_seed(r, global, "train");
  r.finish();
}

void read_finetune(const json& j, std::uint64_t global, FinetuneConfig& f) {
  JsonReader r(j, "finetune");
  r.get("epochs", f.epochs);
  r.get("lr", f.lr);
  r.get("batch_size", f.batch_size);
  std::string views = to_string(f.views);
  r.get("views", views);
  f.views = parse_view_policy(views);
  f.seed = section_seed(r, global, "finetune");
  r.finish();
}

void read_threshold(const json& j, ViewPolicy& views) {
  JsonReader r(j, "threshold");
  std::string v = to_string(views);
  r.get("views", v);
  views = parse_view_policy(v);
  r.finish();
}

void read_bootstrap(const json& j, std::uint64_t global, BootstrapConfig& b) {
  JsonReader r(j, "bootstrap");
  r.get("n_replicates", b.n_replicates);
  r.get("ci_level", b.ci_level);
  r.get("alpha", b.alpha);
  b.seed = section_seed(r, global, "bootstrap");
  r.finish();
}

const json kEmpty = json::object();

}  // namespace

void RunConfig::validate() const {
  phantom.validate();
  preprocess.validate();
  split.validate();
  model.validate();
  train.validate();
  finetune.validate();
  bootstrap.validate();
  if (model.height != preprocess.slice_height || model.width != preprocess.slice_width)
    throw ConfigError("model: height/width must equal preprocess.slice_size");
}

RunConfig run_config_from_json(const json& j) {
  JsonReader r(j, "config");
  RunConfig cfg;
  r.get("seed", cfg.seed);
  auto section = [&](const char* name) -> const json& {
    return r.has(name) ? r.child(name) : kEmpty;
  };
  read_phantom(section("phantom"), cfg.seed, cfg.phantom);
  read_preprocess(section("preprocess"), cfg.preprocess);
  read_split(section("split"), cfg.seed, cfg.split);
  if (r.has("model")) cfg.model = vae_config_from_json(r.child("model"));
  read_train(section("train"), cfg.seed, cfg.train);
  read_finetune(section("finetune"), cfg.seed, cfg.finetune);
  read_threshold(section("threshold"), cfg.threshold_views);
  read_bootstrap(section("bootstrap"), cfg.seed, cfg.bootstrap);
  r.finish();
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"phantom",
       {{"n_patients", c.phantom.n_patients},
        {"grid", c.phantom.grid},
        {"spacing", c.phantom.spacing},
        {"lesion_fraction", c.phantom.lesion_fraction},
        {"lesion_radius_mm", c.phantom.lesion_radius_mm},
        {"lesion_contrast", c.phantom.lesion_contrast},
        {"noise_sigma", c.phantom.noise_sigma},
        {"seed", c.phantom.seed}}},
      {"preprocess",
       {{"target_spacing", c.preprocess.target_spacing},
        {"clip_percentiles", {c.preprocess.clip_low, c.preprocess.clip_high}},
        {"slice_size", {c.preprocess.slice_height, c.preprocess.slice_width}}}},
      {"split",
       {{"control_fractions", c.split.control_fractions},
        {"case_fractions", c.split.case_fractions},
        {"seed", c.split.seed}}},
      {"model", to_json(c.model)},
      {"train",
       {{"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"lr", c.train.lr},
        {"batch_size", c.train.batch_size},
        {"seed", c.train.seed}}},
      {"finetune",
       {{"epochs", c.finetune.epochs},
        {"lr", c.finetune.lr},
        {"batch_size", c.finetune.batch_size},
        {"views", to_string(c.finetune.views)},
        {"seed", c.finetune.seed}}},
      {"threshold", {{"views", to_string(c.threshold_views)}}},
      {"bootstrap",
       {{"n_replicates", c.bootstrap.n_replicates},
        {"ci_level", c.bootstrap.ci_level},
        {"alpha", c.bootstrap.alpha},
        {"seed", c.bootstrap.seed}}}};
}

}  // namespace mvood

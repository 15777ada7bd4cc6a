#include "mvood/cli.hpp"

#include "mvood/json_util.hpp"
#include "mvood/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace mvood {

using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string out;
  std::string arch = "svae";
  std::string mode = "threshold";
  std::string checkpoint;
  std::string views;
  std::vector<std::string> scores;
  std::vector<std::string> reports;
  bool verbose = false;
};

RunConfig resolve_config(const Options& o) {
  json j = json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot open config " + o.config);
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + o.config + ": " + e.what());
    }
  }
  if (o.seed) j["seed"] = *o.seed;
  return run_config_from_json(j);
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int run_phantom(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Manifest m = write_phantom_dataset(cfg.phantom, o.out);
  std::cout << "phantom: " << cfg.phantom.n_patients << " patients, " << m.size() << " records -> "
            << (fs::path(o.out) / "manifest.csv").string() << '\n';
  return 0;
}

int run_preprocess(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Manifest m = preprocess_dataset(o.manifest, cfg.preprocess, o.out);
  std::cout << "preprocess: " << m.size() << " records -> " << (fs::path(o.out) / "manifest.csv").string()
            << '\n';
  return 0;
}

int run_split(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const json report = split_dataset(o.manifest, cfg.split, cfg.preprocess, o.out);
  const auto& s = report.at("splits");
  std::cout << "split: train " << s.at("train").at("slices") << ", tune " << s.at("tune").at("slices")
            << ", eval " << s.at("eval").at("slices") << " slices; leakage "
            << (report.at("leakage").at("ok").get<bool>() ? "ok" : "FOUND") << '\n';
  return 0;
}

int run_train(const Options& o) {
  RunConfig cfg = resolve_config(o);
  if (o.arch != "svae" && o.arch != "mvae") throw ConfigError("--arch must be svae or mvae");
  cfg.model.multi_view = o.arch == "mvae";
  cfg.model.validate();
  const PipelineData data = group_by_split(load_slices(o.manifest, cfg.preprocess));
  EpochCallback log;
  if (o.verbose)
    log = [](int epoch, double train, double val) {
      std::cerr << "epoch " << epoch << " train " << train << " val " << val << '\n';
    };
  const auto [ckpt, history] = fit(cfg.model, data.train, data.tune_controls, cfg.train, log);
  save_checkpoint(ckpt, o.out);
  write_history_csv(history, fs::path(o.out) / "history.csv");
  write_json({{"arch", o.arch},
              {"epochs_run", history.stopped_epoch},
              {"best_epoch", history.best_epoch},
              {"early_stopped", history.early_stopped},
              {"train_examples", data.train.size()},
              {"tune_control_examples", data.tune_controls.size()}},
             fs::path(o.out) / "train_summary.json");
  std::cout << "train: " << o.arch << " stopped at epoch " << history.stopped_epoch << " (best "
            << history.best_epoch << ", val " << history.val_loss[history.best_epoch - 1] << ")\n";
  return 0;
}

int run_detect(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  const PipelineData data = group_by_split(load_slices(o.manifest, cfg.preprocess));
  if (data.eval.empty()) throw std::invalid_argument("detect: manifest has no eval split");
  std::vector<Detection> rows;
  json meta{{"mode", o.mode}, {"arch", ckpt.config.multi_view ? "mvae" : "svae"}};
  if (o.mode == "threshold") {
    const ViewPolicy views = o.views.empty() ? cfg.threshold_views : parse_view_policy(o.views);
    ThresholdModel t;
    rows = threshold_detection(ckpt, data, views, &t);
    meta["views"] = to_string(views);
    meta["threshold"] = {{"q1", t.q1}, {"q3", t.q3}, {"iqr", t.iqr}, {"threshold", t.threshold}};
  } else if (o.mode == "finetune") {
    if (!o.views.empty()) cfg.finetune.views = parse_view_policy(o.views);
    FinetuneResult fitted;
    rows = finetune_detection(ckpt, data, cfg.finetune, &fitted);
    meta["views"] = to_string(fitted.classifier.views);
    meta["epoch_loss"] = fitted.epoch_loss;
  } else {
    throw ConfigError("--mode must be threshold or finetune");
  }
  write_scores_csv(rows, o.out);
  write_json(meta, fs::path(o.out).replace_extension(".json"));
  std::cout << "detect: " << o.mode << ", " << rows.size() << " eval slices -> " << o.out << '\n';
  return 0;
}

int run_evaluate(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  std::vector<std::pair<std::string, EvalSet>> sets;
  for (const auto& spec : o.scores) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    sets.emplace_back(name, to_eval_set(read_scores_csv(path)));
  }
  std::vector<EvalReport> reports;
  const json doc = evaluate_scores(sets, cfg.bootstrap, &reports);
  write_json(doc, fs::path(o.out) / "report.json");
  write_text(bootstrap_svg(reports), fs::path(o.out) / "macro_auc_bootstrap.svg");
  for (const auto& r : reports) {
    const auto& m = r.metrics.at("macro_auc");
    std::cout << "evaluate: " << r.name << " macro-AUC " << m.point << " [" << m.ci_low << ", "
              << m.ci_high << "]\n";
  }
  return 0;
}

int run_report(const Options& o) {
  std::vector<json> docs;
  for (const auto& path : o.reports) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report " + path);
    json j;
    in >> j;
    docs.push_back(std::move(j));
  }
  const ResultTable table = summary_table(docs);
  fs::create_directories(o.out);
  write_text(table.csv, fs::path(o.out) / "table.csv");
  write_text(table.markdown, fs::path(o.out) / "table.md");
  std::cout << table.markdown;
  return 0;
}

}  // namespace

int execute(int argc, const char* const* argv) {
  CLI::App app{"Multi-view VAE out-of-distribution lesion detection pipeline", "mvood"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the global seed");
  };

  auto* phantom = app.add_subcommand("phantom", "generate the synthetic multi-view cohort");
  add_config(phantom);
  phantom->add_option("--out", o.out, "output directory")->required();

  auto* preprocess = app.add_subcommand("preprocess", "resample, clip and normalise volumes");
  add_config(preprocess);
  preprocess->add_option("--manifest", o.manifest, "input manifest.csv")->required()->check(CLI::ExistingFile);
  preprocess->add_option("--out", o.out, "output directory")->required();

  auto* split = app.add_subcommand("split", "patient-level train/tune/eval split");
  add_config(split);
  split->add_option("--manifest", o.manifest, "preprocessed manifest.csv")->required()->check(CLI::ExistingFile);
  split->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a VAE on control slices");
  add_config(train);
  train->add_option("--arch", o.arch, "svae or mvae")->required()->check(CLI::IsMember({"svae", "mvae"}));
  train->add_option("--manifest", o.manifest, "split manifest.csv")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "checkpoint directory")->required();
  train->add_flag("--verbose", o.verbose, "log every epoch");

  auto* detect_cmd = app.add_subcommand("detect", "score eval axial slices");
  add_config(detect_cmd);
  detect_cmd->add_option("--mode", o.mode, "threshold or finetune")
      ->required()
      ->check(CLI::IsMember({"threshold", "finetune"}));
  detect_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  detect_cmd->add_option("--manifest", o.manifest, "split manifest.csv")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--out", o.out, "scores.csv path")->required();
  detect_cmd->add_option("--views", o.views, "view policy override: all or axial")
      ->check(CLI::IsMember({"all", "axial"}));

  auto* evaluate = app.add_subcommand("evaluate", "bootstrap metrics and pairwise Wilcoxon tests");
  add_config(evaluate);
  evaluate->add_option("--scores", o.scores, "NAME=scores.csv (repeatable)")->required();
  evaluate->add_option("--out", o.out, "output directory")->required();

  auto* report = app.add_subcommand("report", "aggregate report.json files into a table");
  report->add_option("--reports", o.reports, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*phantom) return run_phantom(o);
    if (*preprocess) return run_preprocess(o);
    if (*split) return run_split(o);
    if (*train) return run_train(o);
    if (*detect_cmd) return run_detect(o);
    if (*evaluate) return run_evaluate(o);
    if (*report) return run_report(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mvood

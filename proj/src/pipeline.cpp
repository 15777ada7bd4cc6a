#include "mvood/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mvood {

using nlohmann::json;

namespace {

std::string stem_for(const std::string& patient, View view) { return patient + "_" + to_string(view); }

std::string relative_to(const fs::path& target, const fs::path& base_dir) {
  return fs::relative(fs::absolute(target), fs::absolute(base_dir)).generic_string();
}

std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Manifest write_phantom_dataset(const PhantomSpec& spec, const fs::path& out_dir) {
  const auto cases = generate_phantom(spec);
  fs::create_directories(out_dir / "volumes");
  fs::create_directories(out_dir / "masks");
  Manifest manifest;
  for (const auto& c : cases) {
    const ViewStack views = reslice_views(c.volume);
    const auto masks = reslice_masks(c.mask);
    const std::array<const Volume*, 3> vols{&views.axial, &views.coronal, &views.sagittal};
    for (std::size_t v = 0; v < 3; ++v) {
      const View view = kPlanarViews[v];
      const std::string stem = stem_for(c.volume.patient_id, view);
      save_volume(*vols[v], out_dir / "volumes" / (stem + ".json"));
      save_mask(masks[v], c.volume.patient_id, view, out_dir / "masks" / (stem + ".json"));
      manifest.push_back({c.volume.patient_id, view, "volumes/" + stem + ".json",
                          "masks/" + stem + ".json", ""});
    }
  }
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

Manifest preprocess_dataset(const fs::path& manifest_path, const PreprocessConfig& cfg,
                            const fs::path& out_dir) {
  cfg.validate();
  const Manifest in = read_manifest(manifest_path);
  fs::create_directories(out_dir / "volumes");
  fs::create_directories(out_dir / "masks");
  Manifest out;
  for (const auto& r : in) {
    Volume v = load_volume(resolve_path(manifest_path, r.volume_path));
    if (v.view != r.view)
      throw std::invalid_argument("manifest view " + to_string(r.view) + " differs from volume header (" +
                                  to_string(v.view) + ") for " + r.volume_path);
    const std::string stem = stem_for(r.patient_id, r.view);
    ManifestRecord rec = r;
    rec.volume_path = "volumes/" + stem + ".json";
    save_volume(preprocess_volume(v, cfg), out_dir / rec.volume_path);
    if (!r.mask_path.empty()) {
      const LesionMask m = load_mask(resolve_path(manifest_path, r.mask_path));
      rec.mask_path = "masks/" + stem + ".json";
      save_mask(preprocess_mask(m, v, cfg), r.patient_id, r.view, out_dir / rec.mask_path);
    }
    out.push_back(std::move(rec));
  }
  write_manifest(out, out_dir / "manifest.csv");
  return out;
}

std::vector<SliceSample> load_slices(const fs::path& manifest_path, const PreprocessConfig& cfg) {
  const Manifest manifest = read_manifest(manifest_path);
  std::vector<SliceSample> out;
  for (const auto& r : manifest) {
    Volume v = load_volume(resolve_path(manifest_path, r.volume_path));
    v.patient_id = r.patient_id;
    v.view = r.view;
    const LesionMask m =
        r.mask_path.empty() ? LesionMask(v.extents) : load_mask(resolve_path(manifest_path, r.mask_path));
    for (auto& s : extract_labeled_slices(v, m, 2, cfg.slice_height, cfg.slice_width)) {
      s.split = r.split;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SliceSample> phantom_slices(const PhantomSpec& spec, const PreprocessConfig& cfg) {
  std::vector<SliceSample> out;
  for (const auto& c : generate_phantom(spec)) {
    const ViewStack views = reslice_views(c.volume);
    const auto masks = reslice_masks(c.mask);
    const std::array<const Volume*, 3> vols{&views.axial, &views.coronal, &views.sagittal};
    for (std::size_t v = 0; v < 3; ++v) {
      const Volume pv = preprocess_volume(*vols[v], cfg);
      const LesionMask pm = preprocess_mask(masks[v], *vols[v], cfg);
      for (auto& s : extract_labeled_slices(pv, pm, 2, cfg.slice_height, cfg.slice_width))
        out.push_back(std::move(s));
    }
  }
  return out;
}

json split_report(const SplitResult& result) {
  json splits = json::object();
  for (SplitName s : {SplitName::Train, SplitName::Tune, SplitName::Eval}) {
    const auto i = static_cast<std::size_t>(s);
    auto count_label = [](const DatasetSplit& d, int label) {
      return std::count_if(d.samples.begin(), d.samples.end(),
                           [&](const SliceSample& x) { return x.label == label; });
    };
    splits[to_string(s)] = {
        {"control_patients", result.controls[i].patient_ids.size()},
        {"case_patients", result.cases[i].patient_ids.size()},
        {"slices", result.controls[i].samples.size() + result.cases[i].samples.size()},
        {"lesion_slices", count_label(result.controls[i], 1) + count_label(result.cases[i], 1)}};
  }
  const auto leak = leakage_check(result);
  return json{{"splits", splits},
              {"leakage", {{"ok", leak.ok}, {"violations", leak.violations}}}};
}

json split_dataset(const fs::path& manifest_path, const SplitConfig& split,
                   const PreprocessConfig& cfg, const fs::path& out_dir) {
  split.validate();
  const auto samples = load_slices(manifest_path, cfg);
  const SplitResult result = stratified_patient_split(samples, split);
  Manifest manifest = read_manifest(manifest_path);
  fs::create_directories(out_dir);
  for (auto& r : manifest) {
    r.split = to_string(result.assignment.at(r.patient_id));
    r.volume_path = relative_to(resolve_path(manifest_path, r.volume_path), out_dir);
    if (!r.mask_path.empty())
      r.mask_path = relative_to(resolve_path(manifest_path, r.mask_path), out_dir);
  }
  write_manifest(manifest, out_dir / "manifest.csv");
  json report = split_report(result);
  report["seed"] = split.seed;
  std::ofstream(out_dir / "split_report.json") << report.dump(2) << '\n';
  return report;
}

PipelineData group_by_split(const std::vector<SliceSample>& samples) {
  std::set<std::string> case_patients;
  std::map<std::string, std::vector<SliceSample>> by_split;
  for (const auto& s : samples) {
    if (s.split.empty())
      throw std::invalid_argument("slice of " + s.patient_id + " has no split tag; run split first");
    parse_split(s.split);
    if (s.label == 1) case_patients.insert(s.patient_id);
    by_split[s.split].push_back(s);
  }
  auto triplets = [&](const std::string& name) {
    const auto it = by_split.find(name);
    return it == by_split.end() ? std::vector<ViewTriplet>{} : make_view_triplets(it->second);
  };
  auto controls_only = [&](std::vector<ViewTriplet> t) {
    std::erase_if(t, [&](const ViewTriplet& x) { return case_patients.count(x.patient_id()) > 0; });
    return t;
  };
  PipelineData d;
  d.train = controls_only(triplets("train"));
  d.tune = triplets("tune");
  d.tune_controls = controls_only(d.tune);
  d.eval = triplets("eval");
  return d;
}

std::vector<Detection> threshold_detection(const ModelCheckpoint& ckpt, const PipelineData& data,
                                           ViewPolicy views, ThresholdModel* fitted) {
  std::vector<double> tune_scores;
  for (const auto& s : reconstruction_scores(ckpt, data.tune_controls, views))
    tune_scores.push_back(s.score);
  ThresholdArtifacts art{ckpt, iqr_threshold(tune_scores), views};
  if (fitted) *fitted = art.threshold;
  return detect(art, data.eval);
}

std::vector<Detection> finetune_detection(const ModelCheckpoint& ckpt, const PipelineData& data,
                                          const FinetuneConfig& cfg, FinetuneResult* fitted) {
  FinetuneResult result = finetune_classifier(ckpt, data.tune, cfg);
  auto out = detect(result.classifier, data.eval);
  if (fitted) *fitted = std::move(result);
  return out;
}

void write_scores_csv(const std::vector<Detection>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "patient_id,view,slice,label,score,prediction\n";
  for (const auto& r : rows)
    out << r.patient_id << ',' << to_string(r.view) << ',' << r.slice << ',' << r.label << ','
        << format_double(r.score) << ',' << r.prediction << '\n';
}

std::vector<Detection> read_scores_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scores file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "patient_id,view,slice,label,score,prediction")
    throw std::invalid_argument(path.string() + ": unexpected header");
  std::vector<Detection> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6)
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    try {
      rows.push_back({f[0], parse_view(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4]),
                      std::stoi(f[5])});
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

EvalSet to_eval_set(const std::vector<Detection>& rows, ScoreKind kind) {
  EvalSet e;
  e.kind = kind;
  for (const auto& r : rows) {
    e.predictions.push_back(r.prediction);
    e.scores.push_back(r.score);
    e.labels.push_back(r.label);
  }
  return e;
}

void write_history_csv(const TrainHistory& h, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < h.train_loss.size(); ++i)
    out << i + 1 << ',' << format_double(h.train_loss[i]) << ',' << format_double(h.val_loss[i]) << '\n';
}

json evaluate_scores(const std::vector<std::pair<std::string, EvalSet>>& sets,
                     const BootstrapConfig& cfg, std::vector<EvalReport>* reports_out) {
  cfg.validate();
  if (sets.empty()) throw std::invalid_argument("evaluate: no score sets given");
  std::vector<EvalReport> reports;
  for (const auto& [name, set] : sets) {
    if (set.labels != sets.front().second.labels)
      throw std::invalid_argument("evaluate: '" + name + "' is not paired with '" + sets.front().first +
                                  "' (label vectors differ)");
    reports.push_back(evaluate_model(name, set, cfg));
  }
  json comparisons = json::array();
  for (std::size_t a = 0; a < reports.size(); ++a)
    for (std::size_t b = a + 1; b < reports.size(); ++b)
      comparisons.push_back(to_json(compare_models(reports[a], reports[b], cfg)));
  json models = json::array();
  for (const auto& r : reports) models.push_back(to_json(r));
  json doc{{"bootstrap",
            {{"n_replicates", cfg.n_replicates},
             {"ci_level", cfg.ci_level},
             {"alpha", cfg.alpha},
             {"seed", cfg.seed},
             {"ci_method", "percentile"},
             {"stratified", true}}},
           {"models", models},
           {"comparisons", comparisons}};
  if (reports_out) *reports_out = std::move(reports);
  return doc;
}

ResultTable summary_table(const std::vector<json>& docs) {
  const std::vector<std::pair<std::string, std::string>> columns{
      {"accuracy", "Accuracy"}, {"precision", "Precision"}, {"recall", "Recall"},
      {"f1", "F1"},             {"specificity", "Specificity"}, {"macro_auc", "macro-AUC"}};
  auto cell = [](const json& m) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * m.at("point").get<double>() << " ["
       << 100.0 * m.at("ci_low").get<double>() << ", " << 100.0 * m.at("ci_high").get<double>() << "]";
    return os.str();
  };
  auto p_text = [](double p) {
    if (p < 0.001) return std::string("<0.001");
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << p;
    return os.str();
  };

  std::ostringstream csv, md;
  csv << "model";
  md << "| Model |";
  for (const auto& [key, title] : columns) {
    csv << ',' << key << ',' << key << "_ci_low," << key << "_ci_high";
    md << ' ' << title << " |";
  }
  csv << '\n';
  md << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) md << "---|";
  md << '\n';

  std::vector<json> comparisons;
  for (const auto& doc : docs) {
    for (const auto& model : doc.at("models")) {
      const auto& metrics = model.at("metrics");
      csv << model.at("name").get<std::string>();
      md << "| " << model.at("name").get<std::string>() << " |";
      for (const auto& [key, title] : columns) {
        const auto& m = metrics.at(key);
        csv << ',' << format_double(m.at("point").get<double>()) << ','
            << format_double(m.at("ci_low").get<double>()) << ','
            << format_double(m.at("ci_high").get<double>());
        md << ' ' << cell(m) << " |";
      }
      csv << '\n';
      md << '\n';
    }
    for (const auto& c : doc.at("comparisons")) comparisons.push_back(c);
  }
  if (!comparisons.empty()) {
    md << "\n| Comparison (macro-AUC) | W | p | Significant |\n|---|---|---|---|\n";
    for (const auto& c : comparisons) {
      md << "| " << c.at("a").get<std::string>() << " vs " << c.at("b").get<std::string>() << " | "
         << c.at("w").get<double>() << " | " << p_text(c.at("p_value").get<double>()) << " | "
         << (c.at("significant").get<bool>() ? "yes" : "no") << " |\n";
    }
  }
  return {csv.str(), md.str()};
}

}  // namespace mvood

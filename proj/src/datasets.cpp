#include "mvood/datasets.hpp"

#include "mvood/random.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace mvood {

std::string to_string(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Tune: return "tune";
    case SplitName::Eval: return "eval";
  }
  return "?";
}

SplitName parse_split(const std::string& s) {
  if (s == "train") return SplitName::Train;
  if (s == "tune") return SplitName::Tune;
  if (s == "eval") return SplitName::Eval;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void SplitConfig::validate() const {
  for (const auto* f : {&control_fractions, &case_fractions}) {
    double total = 0.0;
    for (double x : *f) {
      if (x < 0.0) throw std::invalid_argument("split: fractions must be non-negative");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  }
  if (case_fractions[0] != 0.0)
    throw std::invalid_argument("split: case patients cannot be assigned to the train split");
}

std::vector<SliceSample> SplitResult::merged(SplitName s) const {
  const auto i = static_cast<std::size_t>(s);
  std::vector<SliceSample> out = controls[i].samples;
  out.insert(out.end(), cases[i].samples.begin(), cases[i].samples.end());
  return out;
}

std::vector<int> largest_remainder(int n, std::span<const double> fractions) {
  const std::size_t k = fractions.size();
  std::vector<int> counts(k, 0);
  std::vector<double> rem(k, 0.0);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = n * fractions[i];
    counts[i] = static_cast<int>(std::floor(exact + 1e-9));
    rem[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[order[r % k]];
  return counts;
}

namespace {

void assign_group(const std::vector<std::string>& patients, const std::array<double, 3>& fractions,
                  Rng& rng, const char* group, std::map<std::string, SplitName>& out) {
  const auto buckets = static_cast<std::size_t>(
      std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));
  if (patients.size() < buckets)
    throw std::invalid_argument(std::string("split: ") + std::to_string(patients.size()) + " " +
                                group + " patients cannot fill " + std::to_string(buckets) +
                                " nonzero split buckets");
  std::vector<std::string> order = patients;
  rng.shuffle(order);
  const auto counts = largest_remainder(static_cast<int>(order.size()), fractions);
  std::size_t next = 0;
  for (std::size_t b = 0; b < 3; ++b)
    for (int c = 0; c < counts[b]; ++c) out[order[next++]] = static_cast<SplitName>(b);
}

}  // namespace

SplitResult stratified_patient_split(const std::vector<SliceSample>& samples,
                                     const SplitConfig& cfg) {
  cfg.validate();
  std::map<std::string, bool> is_case;
  for (const auto& s : samples) {
    if (s.patient_id.empty()) throw std::invalid_argument("split: sample without patient_id");
    is_case[s.patient_id] = is_case[s.patient_id] || s.label == 1;
  }
  std::vector<std::string> controls, cases;
  for (const auto& [pid, c] : is_case) (c ? cases : controls).push_back(pid);

  SplitResult result;
  Rng control_rng(derive_seed(cfg.seed, "controls"));
  Rng case_rng(derive_seed(cfg.seed, "cases"));
  assign_group(controls, cfg.control_fractions, control_rng, "control", result.assignment);
  assign_group(cases, cfg.case_fractions, case_rng, "case", result.assignment);

  for (std::size_t i = 0; i < 3; ++i) {
    result.controls[i].name = static_cast<SplitName>(i);
    result.cases[i].name = static_cast<SplitName>(i);
  }
  for (const auto& s : samples) {
    const SplitName name = result.assignment.at(s.patient_id);
    auto& bucket = (is_case.at(s.patient_id) ? result.cases : result.controls)
        [static_cast<std::size_t>(name)];
    SliceSample copy = s;
    copy.split = to_string(name);
    bucket.samples.push_back(std::move(copy));
    bucket.patient_ids.insert(s.patient_id);
  }

  const auto report = leakage_check(result);
  if (!report.ok) throw std::logic_error("split produced patient leakage");
  for (const auto& s : result.controls[0].samples)
    if (s.label != 0) throw std::logic_error("split placed a lesion slice in train");
  return result;
}

LeakageReport leakage_check(const std::vector<DatasetSplit>& splits) {
  std::map<std::string, std::set<SplitName>> seen;
  for (const auto& split : splits) {
    for (const auto& pid : split.patient_ids) seen[pid].insert(split.name);
    for (const auto& s : split.samples) seen[s.patient_id].insert(split.name);
  }
  LeakageReport r;
  for (const auto& [pid, names] : seen)
    if (names.size() > 1) r.violations.push_back(pid);
  r.ok = r.violations.empty();
  return r;
}

LeakageReport leakage_check(const SplitResult& result) {
  std::vector<DatasetSplit> all(result.controls.begin(), result.controls.end());
  all.insert(all.end(), result.cases.begin(), result.cases.end());
  return leakage_check(all);
}

std::vector<ViewTriplet> make_view_triplets(const std::vector<SliceSample>& samples) {
  std::map<std::string, std::array<std::vector<const SliceSample*>, 3>> by_patient;
  for (const auto& s : samples) {
    if (s.view == View::Volume3d) continue;
    by_patient[s.patient_id][static_cast<std::size_t>(s.view)].push_back(&s);
  }
  std::vector<ViewTriplet> out;
  for (auto& [pid, views] : by_patient) {
    if (std::any_of(views.begin(), views.end(), [](const auto& v) { return v.empty(); })) {
      std::cerr << "warning: patient " << pid << " lacks a view; skipped for triplets\n";
      continue;
    }
    std::size_t count = views[0].size();
    for (auto& v : views) {
      std::sort(v.begin(), v.end(),
                [](const SliceSample* a, const SliceSample* b) { return a->index < b->index; });
      count = std::min(count, v.size());
    }
    for (std::size_t i = 0; i < count; ++i)
      out.push_back({*views[0][i], *views[1][i], *views[2][i]});
  }
  return out;
}

std::vector<ViewTriplet> axial_only(const std::vector<SliceSample>& samples) {
  std::vector<ViewTriplet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ViewTriplet t;
    t.axial = s;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace mvood

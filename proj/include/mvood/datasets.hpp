#pragma once

#include "mvood/preprocess.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <set>
#include <string>
#include <vector>

namespace mvood {

enum class SplitName { Train, Tune, Eval };

std::string to_string(SplitName s);
SplitName parse_split(const std::string& s);

struct SplitConfig {
  std::array<double, 3> control_fractions{0.70, 0.20, 0.10};  // train, tune, eval
  std::array<double, 3> case_fractions{0.0, 0.20, 0.80};      // cases never train
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplit {
  SplitName name = SplitName::Train;
  std::vector<SliceSample> samples;
  std::set<std::string> patient_ids;
};

struct SplitResult {
  std::map<std::string, SplitName> assignment;  // patient -> split
  std::array<DatasetSplit, 3> controls;         // indexed by SplitName
  std::array<DatasetSplit, 3> cases;

  /// Controls then cases of one split.
  std::vector<SliceSample> merged(SplitName s) const;
};

/// Largest-remainder (Hamilton) apportionment of `n` items to `fractions`;
/// remainder ties go to the earlier bucket.
std::vector<int> largest_remainder(int n, std::span<const double> fractions);

/// Patient-level split. Patients with any label-1 slice are cases and follow
/// the case fractions; all others follow the control fractions. Every
/// sample's `split` field is set in the returned copies.
SplitResult stratified_patient_split(const std::vector<SliceSample>& samples,
                                     const SplitConfig& cfg);

struct LeakageReport {
  bool ok = true;
  std::vector<std::string> violations;  // patients present in more than one split
};

LeakageReport leakage_check(const std::vector<DatasetSplit>& splits);
LeakageReport leakage_check(const SplitResult& result);

struct ViewTriplet {
  SliceSample axial;
  SliceSample coronal;
  SliceSample sagittal;

  const std::string& patient_id() const { return axial.patient_id; }
  /// A control triplet has no lesion in any view.
  bool is_control() const { return axial.label == 0 && coronal.label == 0 && sagittal.label == 0; }
  const SliceSample& operator[](std::size_t i) const {
    return i == 0 ? axial : i == 1 ? coronal : sagittal;
  }
};

/// Pairs the i-th (index-sorted) slice of each view per patient; the triplet
/// count is the minimum view count. Patients missing a view are skipped with
/// a warning.
std::vector<ViewTriplet> make_view_triplets(const std::vector<SliceSample>& samples);

/// Single-view examples wrapped as triplets holding only the axial slot.
std::vector<ViewTriplet> axial_only(const std::vector<SliceSample>& samples);

}  // namespace mvood

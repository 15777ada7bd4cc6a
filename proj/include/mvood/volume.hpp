#pragma once

#include "mvood/view.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mvood {

using Extents = std::array<int, 3>;
using Spacing = std::array<double, 3>;

/// Scalar field on a regular grid. Voxel (i, j, k) sits at physical position
/// (i*sx, j*sy, k*sz) mm and is stored at i + nx*(j + ny*k). Axis 2 is the
/// slice axis of the view the volume represents.
struct Volume {
  Extents extents{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  Eigen::VectorXf voxels;
  std::string patient_id;
  View view = View::Volume3d;

  Volume() = default;
  Volume(Extents e, Spacing s, std::string patient, View v);

  std::size_t size() const { return static_cast<std::size_t>(voxels.size()); }
  Eigen::Index offset(int i, int j, int k) const {
    return i + Eigen::Index{extents[0]} * (j + Eigen::Index{extents[1]} * k);
  }
  float& at(int i, int j, int k) { return voxels[offset(i, j, k)]; }
  float at(int i, int j, int k) const { return voxels[offset(i, j, k)]; }

  /// Throws if the voxel count or spacing is inconsistent.
  void validate() const;
};

struct LesionMask {
  Extents extents{0, 0, 0};
  std::vector<std::uint8_t> voxels;

  LesionMask() = default;
  explicit LesionMask(Extents e);

  Eigen::Index offset(int i, int j, int k) const {
    return i + Eigen::Index{extents[0]} * (j + Eigen::Index{extents[1]} * k);
  }
  std::uint8_t& at(int i, int j, int k) { return voxels[static_cast<std::size_t>(offset(i, j, k))]; }
  std::uint8_t at(int i, int j, int k) const {
    return voxels[static_cast<std::size_t>(offset(i, j, k))];
  }
  bool empty() const;
};

// ---------------------------------------------------------------------------
// On-disk format: <stem>.json header + <stem>.raw little-endian float32 blob.

void save_volume(const Volume& v, const std::filesystem::path& header_path);
Volume load_volume(const std::filesystem::path& header_path);

/// Masks are stored as volumes holding 0/1 voxels.
void save_mask(const LesionMask& m, const std::string& patient_id, View view,
               const std::filesystem::path& header_path);
LesionMask load_mask(const std::filesystem::path& header_path);

// ---------------------------------------------------------------------------
// Synthetic cohort

struct PhantomSpec {
  int n_patients = 60;
  Extents grid{32, 32, 16};
  Spacing spacing{0.5, 0.5, 3.6};
  double lesion_fraction = 0.5;
  double lesion_radius_mm = 3.0;
  double lesion_contrast = 0.35;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhantomCase {
  Volume volume;  // view == Volume3d
  LesionMask mask;
  std::array<double, 3> organ_center_mm{};
  std::array<double, 3> organ_semi_axes_mm{};
  std::optional<std::array<double, 3>> lesion_center_mm;
};

/// Deterministic cohort: per patient a smooth ellipsoidal organ with
/// low-frequency cosine texture and Gaussian noise, clipped to [0, 1];
/// lesion patients get one spherical blob of raised intensity lying fully
/// inside the organ. Lesion centres are placed on voxel centres in-plane and
/// continuously along the slice axis.
std::vector<PhantomCase> generate_phantom(const PhantomSpec& spec);

/// Whether voxel (i, j, k) lies inside the case's organ ellipsoid.
bool phantom_inside_organ(const PhantomCase& c, int i, int j, int k);

// ---------------------------------------------------------------------------
// Reslicing

struct ViewStack {
  Volume axial;
  Volume coronal;
  Volume sagittal;
};

/// Axial keeps (x, y, z). Coronal is restacked as (x, z, y) and sagittal as
/// (y, z, x) so that axis 2 is always the slice axis. No interpolation.
ViewStack reslice_views(const Volume& v);
std::array<LesionMask, 3> reslice_masks(const LesionMask& m);

/// Spacing of a view's frame given spacing in the common (x, y, z) frame.
Spacing view_spacing(View view, const Spacing& common);

// ---------------------------------------------------------------------------
// Manifest CSV: patient_id,view,volume_path,mask_path,split

struct ManifestRecord {
  std::string patient_id;
  View view = View::Axial;
  std::string volume_path;
  std::string mask_path;  // empty if none
  std::string split;      // empty, "train", "tune" or "eval"

  bool operator==(const ManifestRecord&) const = default;
};

using Manifest = std::vector<ManifestRecord>;

/// Paths in the manifest are resolved relative to the manifest's directory
/// when they are not absolute.
Manifest read_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
std::filesystem::path resolve_path(const std::filesystem::path& manifest_path,
                                   const std::string& entry);

}  // namespace mvood

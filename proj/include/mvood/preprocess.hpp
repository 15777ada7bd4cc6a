#pragma once

#include "mvood/volume.hpp"

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace mvood {

using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PreprocessConfig {
  Spacing target_spacing{0.5, 0.5, 3.6};  // common (x, y, z) frame, mm
  double clip_low = 1.0;
  double clip_high = 99.0;
  int slice_height = 32;
  int slice_width = 32;

  void validate() const;
};

/// One 2D slice with its slice-level lesion label.
struct SliceSample {
  std::string patient_id;
  View view = View::Axial;
  int index = 0;
  int label = 0;
  std::string split;
  Image pixels;
};

/// Trilinear resampling of `v` onto a grid with `target_spacing` (in v's own
/// frame). Output extent per axis is round(n * s_in / s_out), at least 1.
/// Output voxel o samples input position o * s_out / s_in (voxel-index
/// units), clamped to the input grid.
Volume resample_trilinear(const Volume& v, const Spacing& target_spacing);

/// Nearest-neighbour counterpart used for masks, thresholded at 0.5.
LesionMask resample_nearest(const LesionMask& m, const Spacing& source_spacing,
                            const Spacing& target_spacing);

/// Clamps voxels to the [low, high] percentile values (type-7 quantiles).
Volume clip_percentiles(const Volume& v, double low = 1.0, double high = 99.0);

/// (x - min) / (max - min); a constant volume maps to zeros.
Volume normalize_unit(const Volume& v);

/// resample (to the view-permuted target spacing), clip, normalise.
Volume preprocess_volume(const Volume& v, const PreprocessConfig& cfg);
LesionMask preprocess_mask(const LesionMask& m, const Volume& source, const PreprocessConfig& cfg);

/// Centre crop or zero pad to height x width.
Image crop_or_pad(const Image& img, int height, int width);

/// One sample per index along `axis`; label is 1 iff the mask has any
/// positive voxel in that slice.
std::vector<SliceSample> extract_labeled_slices(const Volume& v, const LesionMask& mask, int axis,
                                                int height, int width);

}  // namespace mvood

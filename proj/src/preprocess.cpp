#include "mvood/preprocess.hpp"

#include "mvood/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <stdexcept>

namespace mvood {

void PreprocessConfig::validate() const {
  for (double s : target_spacing)
    if (!(s > 0.0)) throw std::invalid_argument("preprocess: target_spacing must be positive");
  if (!(clip_low >= 0.0 && clip_low < clip_high && clip_high <= 100.0))
    throw std::invalid_argument("preprocess: need 0 <= clip_low < clip_high <= 100");
  if (slice_height < 1 || slice_width < 1)
    throw std::invalid_argument("preprocess: slice size must be positive");
}

namespace {

Extents resampled_extents(const Extents& e, const Spacing& in, const Spacing& out) {
  Extents r{};
  for (int a = 0; a < 3; ++a)
    r[a] = std::max(1, static_cast<int>(std::lround(e[a] * in[a] / out[a])));
  return r;
}

struct Lerp {
  int lo, hi;
  float t;
};

Lerp lerp_at(int o, double s_in, double s_out, int n) {
  const double pos = std::clamp(o * s_out / s_in, 0.0, static_cast<double>(n - 1));
  const int lo = static_cast<int>(std::floor(pos));
  const int hi = std::min(lo + 1, n - 1);
  return {lo, hi, static_cast<float>(pos - lo)};
}

}  // namespace

Volume resample_trilinear(const Volume& v, const Spacing& target) {
  v.validate();
  for (double s : target)
    if (!(s > 0.0)) throw std::invalid_argument("resample: target spacing must be positive");
  Volume out(resampled_extents(v.extents, v.spacing, target), target, v.patient_id, v.view);
  std::array<std::vector<Lerp>, 3> w;
  for (int a = 0; a < 3; ++a)
    for (int o = 0; o < out.extents[a]; ++o)
      w[a].push_back(lerp_at(o, v.spacing[a], target[a], v.extents[a]));
  for (int k = 0; k < out.extents[2]; ++k)
    for (int j = 0; j < out.extents[1]; ++j)
      for (int i = 0; i < out.extents[0]; ++i) {
        const Lerp& x = w[0][i];
        const Lerp& y = w[1][j];
        const Lerp& z = w[2][k];
        auto plane = [&](int kk) {
          const float a = v.at(x.lo, y.lo, kk) + x.t * (v.at(x.hi, y.lo, kk) - v.at(x.lo, y.lo, kk));
          const float b = v.at(x.lo, y.hi, kk) + x.t * (v.at(x.hi, y.hi, kk) - v.at(x.lo, y.hi, kk));
          return a + y.t * (b - a);
        };
        const float p0 = plane(z.lo);
        const float p1 = plane(z.hi);
        out.at(i, j, k) = p0 + z.t * (p1 - p0);
      }
  return out;
}

LesionMask resample_nearest(const LesionMask& m, const Spacing& in, const Spacing& target) {
  LesionMask out(resampled_extents(m.extents, in, target));
  std::array<std::vector<int>, 3> src;
  for (int a = 0; a < 3; ++a)
    for (int o = 0; o < out.extents[a]; ++o) {
      const Lerp l = lerp_at(o, in[a], target[a], m.extents[a]);
      src[a].push_back(l.t >= 0.5f ? l.hi : l.lo);
    }
  for (int k = 0; k < out.extents[2]; ++k)
    for (int j = 0; j < out.extents[1]; ++j)
      for (int i = 0; i < out.extents[0]; ++i)
        out.at(i, j, k) = m.at(src[0][i], src[1][j], src[2][k]) ? 1 : 0;
  return out;
}

Volume clip_percentiles(const Volume& v, double low, double high) {
  if (!(low >= 0.0 && low < high && high <= 100.0))
    throw std::invalid_argument("clip_percentiles: need 0 <= low < high <= 100");
  std::vector<float> sorted(v.voxels.data(), v.voxels.data() + v.voxels.size());
  std::sort(sorted.begin(), sorted.end());
  const auto lo = static_cast<float>(quantile_sorted(std::span<const float>(sorted), low / 100.0));
  const auto hi = static_cast<float>(quantile_sorted(std::span<const float>(sorted), high / 100.0));
  Volume out = v;
  out.voxels = v.voxels.cwiseMax(lo).cwiseMin(hi);
  return out;
}

Volume normalize_unit(const Volume& v) {
  Volume out = v;
  const float lo = v.voxels.minCoeff();
  const float hi = v.voxels.maxCoeff();
  if (!(hi > lo)) {
    std::cerr << "warning: constant volume for patient " << v.patient_id << " ("
              << to_string(v.view) << ") normalised to zeros\n";
    out.voxels.setZero();
    return out;
  }
  out.voxels = ((v.voxels.array() - lo) / (hi - lo)).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
  return out;
}

Volume preprocess_volume(const Volume& v, const PreprocessConfig& cfg) {
  cfg.validate();
  const Spacing target = view_spacing(v.view, cfg.target_spacing);
  return normalize_unit(clip_percentiles(resample_trilinear(v, target), cfg.clip_low, cfg.clip_high));
}

LesionMask preprocess_mask(const LesionMask& m, const Volume& source, const PreprocessConfig& cfg) {
  if (m.extents != source.extents)
    throw std::invalid_argument("preprocess_mask: mask extents differ from volume extents");
  return resample_nearest(m, source.spacing, view_spacing(source.view, cfg.target_spacing));
}

Image crop_or_pad(const Image& img, int height, int width) {
  Image out = Image::Zero(height, width);
  const int rows = std::min<int>(height, static_cast<int>(img.rows()));
  const int cols = std::min<int>(width, static_cast<int>(img.cols()));
  const int src_r = (static_cast<int>(img.rows()) - rows) / 2;
  const int src_c = (static_cast<int>(img.cols()) - cols) / 2;
  const int dst_r = (height - rows) / 2;
  const int dst_c = (width - cols) / 2;
  out.block(dst_r, dst_c, rows, cols) = img.block(src_r, src_c, rows, cols);
  return out;
}

std::vector<SliceSample> extract_labeled_slices(const Volume& v, const LesionMask& mask, int axis,
                                                int height, int width) {
  if (mask.extents != v.extents)
    throw std::invalid_argument("extract_labeled_slices: mask extents do not match volume for " +
                                v.patient_id);
  if (axis < 0 || axis > 2) throw std::invalid_argument("extract_labeled_slices: axis must be 0..2");
  // Image rows/cols are the remaining axes, higher axis first.
  const int col_axis = axis == 0 ? 1 : 0;
  const int row_axis = axis == 2 ? 1 : 2;
  const auto& e = v.extents;
  std::vector<SliceSample> out;
  out.reserve(static_cast<std::size_t>(e[axis]));
  for (int s = 0; s < e[axis]; ++s) {
    Image img(e[row_axis], e[col_axis]);
    bool lesion = false;
    for (int r = 0; r < e[row_axis]; ++r)
      for (int c = 0; c < e[col_axis]; ++c) {
        std::array<int, 3> idx{};
        idx[axis] = s;
        idx[row_axis] = r;
        idx[col_axis] = c;
        img(r, c) = v.at(idx[0], idx[1], idx[2]);
        lesion = lesion || mask.at(idx[0], idx[1], idx[2]) != 0;
      }
    SliceSample sample;
    sample.patient_id = v.patient_id;
    sample.view = v.view;
    sample.index = s;
    sample.label = lesion ? 1 : 0;
    sample.pixels = crop_or_pad(img, height, width);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace mvood

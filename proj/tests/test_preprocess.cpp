#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvood/preprocess.hpp"
#include "mvood/random.hpp"

#include <algorithm>
#include <cmath>

using namespace mvood;

namespace {

Volume random_volume(Extents e, Spacing s, std::uint64_t seed, View view = View::Axial) {
  Volume v(e, s, "P0000", view);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < v.voxels.size(); ++i)
    v.voxels[i] = static_cast<float>(rng.uniform(-50.0, 400.0));
  return v;
}

// Sort-and-interpolate percentile, written independently of mvood::quantile.
double percentile_oracle(std::vector<double> xs, double pct) {
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * pct / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace

TEST_CASE("resample with identical spacing is the identity") {
  const Volume v = random_volume({6, 5, 4}, {0.5, 0.5, 3.6}, 1);
  const Volume r = resample_trilinear(v, v.spacing);
  CHECK(r.extents == v.extents);
  CHECK(r.voxels == v.voxels);
}

TEST_CASE("resampling a ramp produces the midpoints") {
  Volume v({3, 1, 1}, {1.0, 1.0, 1.0}, "P", View::Axial);
  v.voxels << 0.0f, 1.0f, 2.0f;
  const Volume r = resample_trilinear(v, {0.5, 1.0, 1.0});
  REQUIRE(r.extents == Extents{6, 1, 1});
  const std::vector<float> expected{0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 2.0f};
  for (int i = 0; i < 6; ++i) CHECK(r.voxels[i] == doctest::Approx(expected[i]));
}

TEST_CASE("resampling a constant volume stays constant") {
  Volume v({4, 4, 3}, {0.7, 0.7, 2.0}, "P", View::Axial);
  v.voxels.setConstant(3.25f);
  const Volume r = resample_trilinear(v, {0.5, 0.5, 3.6});
  CHECK(r.extents == Extents{6, 6, 2});
  CHECK((r.voxels.array() - 3.25f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("nearest-neighbour mask resampling stays binary") {
  LesionMask m({4, 4, 2});
  m.at(1, 1, 0) = 1;
  m.at(2, 1, 0) = 1;
  const LesionMask r = resample_nearest(m, {1, 1, 1}, {0.5, 0.5, 1});
  CHECK(r.extents == Extents{8, 8, 2});
  for (auto x : r.voxels) CHECK((x == 0 || x == 1));
  CHECK(std::count(r.voxels.begin(), r.voxels.end(), 1) == 8);
}

TEST_CASE("clip bounds equal type-7 percentiles of 1..100") {
  Volume v({100, 1, 1}, {1, 1, 1}, "P", View::Axial);
  std::vector<double> xs;
  for (int i = 0; i < 100; ++i) {
    v.voxels[i] = static_cast<float>(i + 1);
    xs.push_back(i + 1);
  }
  const Volume c = clip_percentiles(v, 1, 99);
  CHECK(c.voxels.minCoeff() == doctest::Approx(percentile_oracle(xs, 1)));
  CHECK(c.voxels.maxCoeff() == doctest::Approx(percentile_oracle(xs, 99)));
  CHECK(c.voxels.minCoeff() == doctest::Approx(1.99));
  CHECK(c.voxels.maxCoeff() == doctest::Approx(99.01));
}

TEST_CASE("clip percentiles against the oracle on random volumes") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Extents e{1 + static_cast<int>(rng.index(6)), 1 + static_cast<int>(rng.index(5)),
                    1 + static_cast<int>(rng.index(4))};
    const Volume v = random_volume(e, {1, 1, 1}, seed + 1000);
    const double lo = rng.uniform(0, 20), hi = rng.uniform(80, 100);
    std::vector<double> xs(v.voxels.data(), v.voxels.data() + v.voxels.size());
    const Volume c = clip_percentiles(v, lo, hi);
    const auto lo_v = static_cast<float>(percentile_oracle(xs, lo));
    const auto hi_v = static_cast<float>(percentile_oracle(xs, hi));
    for (Eigen::Index i = 0; i < v.voxels.size(); ++i)
      CHECK(c.voxels[i] == std::clamp(v.voxels[i], lo_v, hi_v));
  }
}

TEST_CASE("clip is idempotent when the percentiles fall on order statistics") {
  // 101 values: type-7 positions for 1 and 99 are exactly ranks 1 and 99
  Volume v({101, 1, 1}, {1, 1, 1}, "P", View::Axial);
  Rng rng(11);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<float>(rng.uniform(0, 1000));
  const Volume once = clip_percentiles(v);
  CHECK(clip_percentiles(once).voxels == once.voxels);
}

TEST_CASE("a second clip never widens the range") {
  // with interpolated bounds, a second pass can move the bounds inward, e.g. 1.99 -> 1.9999 on 1..100
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Volume v = random_volume({7, 6, 5}, {1, 1, 1}, seed);
    const Volume once = clip_percentiles(v);
    const Volume twice = clip_percentiles(once);
    CHECK(twice.voxels.minCoeff() >= once.voxels.minCoeff());
    CHECK(twice.voxels.maxCoeff() <= once.voxels.maxCoeff());
  }
}

TEST_CASE("clip preserves rank order of surviving values") {
  const Volume v = random_volume({7, 6, 5}, {1, 1, 1}, 3);
  const Volume once = clip_percentiles(v);
  const float lo = once.voxels.minCoeff(), hi = once.voxels.maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    for (Eigen::Index j = 0; j < v.size(); j += 17)
      if (v.voxels[i] < v.voxels[j] && v.voxels[i] > lo && v.voxels[j] < hi)
        CHECK(once.voxels[i] < once.voxels[j]);
  Volume flat = v;
  flat.voxels.setConstant(2.0f);
  CHECK(clip_percentiles(flat).voxels == flat.voxels);
}

TEST_CASE("normalize_unit") {
  const Volume v = random_volume({5, 5, 2}, {1, 1, 1}, 4);
  const Volume n = normalize_unit(v);
  CHECK(n.voxels.minCoeff() == 0.0f);
  CHECK(n.voxels.maxCoeff() == 1.0f);
  Volume affine = v;
  affine.voxels = 3.0f * v.voxels.array() + 7.0f;
  CHECK((normalize_unit(affine).voxels - n.voxels).cwiseAbs().maxCoeff() < 1e-5f);
  Volume flat = v;
  flat.voxels.setConstant(5.0f);
  CHECK(normalize_unit(flat).voxels.isZero());
}

TEST_CASE("the full chain lands in [0, 1]") {
  PreprocessConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (View view : kPlanarViews) {
      const Volume v = random_volume({9, 7, 5}, {0.8, 0.6, 3.0}, seed, view);
      const Volume p = preprocess_volume(v, cfg);
      CHECK(p.voxels.minCoeff() >= 0.0f);
      CHECK(p.voxels.maxCoeff() <= 1.0f);
      CHECK(p.spacing == view_spacing(view, cfg.target_spacing));
    }
  }
}

TEST_CASE("slice extraction labels") {
  Volume v({4, 3, 5}, {1, 1, 1}, "P0007", View::Sagittal);
  v.voxels.setLinSpaced(0.0f, 1.0f);
  LesionMask m({4, 3, 5});
  SUBCASE("empty mask") {
    for (const auto& s : extract_labeled_slices(v, m, 2, 6, 6)) CHECK(s.label == 0);
  }
  SUBCASE("single positive slice") {
    m.at(2, 1, 3) = 1;
    const auto slices = extract_labeled_slices(v, m, 2, 6, 6);
    REQUIRE(slices.size() == 5);
    for (const auto& s : slices) {
      CHECK(s.label == (s.index == 3 ? 1 : 0));
      CHECK(s.patient_id == "P0007");
      CHECK(s.view == View::Sagittal);
      CHECK(s.pixels.rows() == 6);
      CHECK(s.pixels.cols() == 6);
    }
    // rows are j, columns are i, centred in the padded frame
    CHECK(slices[3].pixels(1 + 1, 1 + 2) == v.at(2, 1, 3));
  }
  SUBCASE("label sum equals occupied slice count") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      LesionMask r({4, 3, 5});
      for (auto& x : r.voxels) x = rng.uniform() < 0.05 ? 1 : 0;
      int occupied = 0;
      for (int k = 0; k < 5; ++k) {
        bool any = false;
        for (int j = 0; j < 3; ++j)
          for (int i = 0; i < 4; ++i) any = any || r.at(i, j, k);
        occupied += any;
      }
      int labels = 0;
      for (const auto& s : extract_labeled_slices(v, r, 2, 4, 4)) labels += s.label;
      CHECK(labels == occupied);
    }
  }
  SUBCASE("extent mismatch") {
    CHECK_THROWS(extract_labeled_slices(v, LesionMask({4, 3, 4}), 2, 4, 4));
  }
}

TEST_CASE("labels do not depend on intensity processing") {
  Volume v = random_volume({6, 6, 4}, {1, 1, 1}, 9);
  LesionMask m({6, 6, 4});
  m.at(3, 3, 1) = 1;
  const auto a = extract_labeled_slices(v, m, 2, 6, 6);
  const auto b = extract_labeled_slices(normalize_unit(clip_percentiles(v)), m, 2, 6, 6);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label == b[i].label);
}

TEST_CASE("crop_or_pad centres the image") {
  Image img(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) img(r, c) = static_cast<float>(r * 4 + c);
  const Image crop = crop_or_pad(img, 2, 2);
  CHECK(crop(0, 0) == img(1, 1));
  CHECK(crop(1, 1) == img(2, 2));
  const Image pad = crop_or_pad(img, 6, 8);
  CHECK(pad(1, 2) == img(0, 0));
  CHECK(pad(0, 0) == 0.0f);
}

TEST_CASE("config validation") {
  PreprocessConfig cfg;
  cfg.clip_low = 99;
  cfg.clip_high = 1;
  CHECK_THROWS(cfg.validate());
  cfg = PreprocessConfig{};
  cfg.target_spacing[1] = 0.0;
  CHECK_THROWS(cfg.validate());
}

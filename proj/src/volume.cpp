#include "mvood/volume.hpp"

#include "mvood/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mvood {

namespace fs = std::filesystem;
using nlohmann::json;

Volume::Volume(Extents e, Spacing s, std::string patient, View v)
    : extents(e), spacing(s), patient_id(std::move(patient)), view(v) {
  for (int n : e)
    if (n <= 0) throw std::invalid_argument("volume extents must be positive");
  voxels = Eigen::VectorXf::Zero(Eigen::Index{e[0]} * e[1] * e[2]);
}

void Volume::validate() const {
  const Eigen::Index expect = Eigen::Index{extents[0]} * extents[1] * extents[2];
  if (voxels.size() != expect)
    throw std::invalid_argument("volume voxel count " + std::to_string(voxels.size()) +
                                " != extents product " + std::to_string(expect));
  for (double s : spacing)
    if (!(s > 0.0)) throw std::invalid_argument("volume spacing must be strictly positive");
}

LesionMask::LesionMask(Extents e)
    : extents(e), voxels(static_cast<std::size_t>(e[0]) * e[1] * e[2], 0) {}

bool LesionMask::empty() const {
  return std::none_of(voxels.begin(), voxels.end(), [](std::uint8_t v) { return v != 0; });
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

constexpr const char* kFormat = "mvood-volume-1";

std::uint32_t to_little(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big)
    return ((x & 0xFFu) << 24) | ((x & 0xFF00u) << 8) | ((x >> 8) & 0xFF00u) | (x >> 24);
  return x;
}

void write_blob(const Eigen::VectorXf& values, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const std::uint32_t w = to_little(std::bit_cast<std::uint32_t>(values[i]));
    out.write(reinterpret_cast<const char*>(&w), sizeof w);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Eigen::VectorXf read_blob(const fs::path& path, Eigen::Index count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open volume data " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto expect = static_cast<std::size_t>(count) * sizeof(float);
  if (bytes.size() != expect)
    throw std::runtime_error("byte count mismatch in " + path.string() + ": expected " +
                             std::to_string(expect) + " bytes, found " +
                             std::to_string(bytes.size()));
  Eigen::VectorXf v(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    std::uint32_t w;
    std::memcpy(&w, bytes.data() + i * 4, 4);
    v[i] = std::bit_cast<float>(to_little(w));
  }
  return v;
}

template <typename T>
T header_field(const json& h, const char* name, const fs::path& path) {
  if (!h.contains(name))
    throw std::runtime_error("malformed volume header " + path.string() + ": missing field '" +
                             name + "'");
  try {
    return h.at(name).get<T>();
  } catch (const json::exception&) {
    throw std::runtime_error("malformed volume header " + path.string() + ": bad field '" +
                             name + "'");
  }
}

fs::path blob_path_for(const fs::path& header_path) {
  fs::path p = header_path;
  p.replace_extension(".raw");
  return p;
}

}  // namespace

void save_volume(const Volume& v, const fs::path& header_path) {
  v.validate();
  const fs::path blob = blob_path_for(header_path);
  json h;
  h["format"] = kFormat;
  h["extents"] = v.extents;
  h["spacing"] = v.spacing;
  h["patient_id"] = v.patient_id;
  h["view"] = to_string(v.view);
  h["dtype"] = "float32";
  h["byte_order"] = "little";
  h["data_file"] = blob.filename().string();
  if (header_path.has_parent_path()) fs::create_directories(header_path.parent_path());
  std::ofstream out(header_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + header_path.string());
  out << h.dump(2) << '\n';
  write_blob(v.voxels, blob);
}

Volume load_volume(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw std::runtime_error("cannot open volume header " + header_path.string());
  json h;
  try {
    in >> h;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed volume header " + header_path.string() + ": " + e.what());
  }
  if (header_field<std::string>(h, "format", header_path) != kFormat)
    throw std::runtime_error("malformed volume header " + header_path.string() +
                             ": unsupported field 'format'");
  if (header_field<std::string>(h, "dtype", header_path) != "float32")
    throw std::runtime_error("malformed volume header " + header_path.string() +
                             ": unsupported field 'dtype'");
  if (header_field<std::string>(h, "byte_order", header_path) != "little")
    throw std::runtime_error("malformed volume header " + header_path.string() +
                             ": unsupported field 'byte_order'");
  const auto extents = header_field<Extents>(h, "extents", header_path);
  const auto spacing = header_field<Spacing>(h, "spacing", header_path);
  for (int e : extents)
    if (e <= 0)
      throw std::runtime_error("malformed volume header " + header_path.string() +
                               ": non-positive field 'extents'");
  for (double s : spacing)
    if (!(s > 0.0))
      throw std::runtime_error("malformed volume header " + header_path.string() +
                               ": non-positive field 'spacing'");
  Volume v;
  v.extents = extents;
  v.spacing = spacing;
  v.patient_id = header_field<std::string>(h, "patient_id", header_path);
  v.view = parse_view(header_field<std::string>(h, "view", header_path));
  const auto data = header_field<std::string>(h, "data_file", header_path);
  v.voxels = read_blob(header_path.parent_path() / data,
                       Eigen::Index{extents[0]} * extents[1] * extents[2]);
  return v;
}

void save_mask(const LesionMask& m, const std::string& patient_id, View view,
               const fs::path& header_path) {
  Volume v(m.extents, {1.0, 1.0, 1.0}, patient_id, view);
  for (std::size_t i = 0; i < m.voxels.size(); ++i)
    v.voxels[static_cast<Eigen::Index>(i)] = m.voxels[i] ? 1.0f : 0.0f;
  save_volume(v, header_path);
}

LesionMask load_mask(const fs::path& header_path) {
  const Volume v = load_volume(header_path);
  LesionMask m(v.extents);
  for (Eigen::Index i = 0; i < v.voxels.size(); ++i)
    m.voxels[static_cast<std::size_t>(i)] = v.voxels[i] >= 0.5f ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Phantom

void PhantomSpec::validate() const {
  if (n_patients < 1) throw std::invalid_argument("phantom: n_patients must be >= 1");
  for (int n : grid)
    if (n < 1) throw std::invalid_argument("phantom: grid extents must be positive");
  for (double s : spacing)
    if (!(s > 0.0)) throw std::invalid_argument("phantom: spacing must be positive");
  if (!(lesion_fraction >= 0.0 && lesion_fraction <= 1.0))
    throw std::invalid_argument("phantom: lesion_fraction must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("phantom: noise_sigma must be >= 0");
  double min_extent = grid[0] * spacing[0];
  for (int a = 1; a < 3; ++a) min_extent = std::min(min_extent, grid[a] * spacing[a]);
  if (!(lesion_radius_mm > 0.0) || lesion_radius_mm >= 0.5 * min_extent)
    throw std::invalid_argument("phantom: infeasible lesion radius " +
                                std::to_string(lesion_radius_mm) + " mm (must be in (0, " +
                                std::to_string(0.5 * min_extent) + "))");
}

namespace {

struct CosineMode {
  double amplitude;
  std::array<double, 3> frequency;  // cycles per physical extent
  std::array<double, 3> phase;
};

double ellipsoid_radius(const std::array<double, 3>& p, const std::array<double, 3>& c,
                        const std::array<double, 3>& a) {
  double r2 = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double t = (p[d] - c[d]) / a[d];
    r2 += t * t;
  }
  return std::sqrt(r2);
}

std::array<double, 3> voxel_position(const Spacing& s, int i, int j, int k) {
  return {i * s[0], j * s[1], k * s[2]};
}

// Voxels of the sphere; empty result if any of them (or the sphere surface
// sampled along 26 directions) falls outside the organ.
std::optional<std::vector<std::array<int, 3>>> sphere_inside_organ(
    const PhantomSpec& spec, const std::array<double, 3>& centre, const std::array<double, 3>& oc,
    const std::array<double, 3>& oa) {
  const double r = spec.lesion_radius_mm;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        if (!dx && !dy && !dz) continue;
        const double norm = std::sqrt(double(dx * dx + dy * dy + dz * dz));
        const std::array<double, 3> p{centre[0] + r * dx / norm, centre[1] + r * dy / norm,
                                      centre[2] + r * dz / norm};
        if (ellipsoid_radius(p, oc, oa) > 1.0) return std::nullopt;
      }
  std::vector<std::array<int, 3>> voxels;
  const auto& s = spec.spacing;
  for (int k = 0; k < spec.grid[2]; ++k)
    for (int j = 0; j < spec.grid[1]; ++j)
      for (int i = 0; i < spec.grid[0]; ++i) {
        const auto p = voxel_position(s, i, j, k);
        const double d2 = (p[0] - centre[0]) * (p[0] - centre[0]) +
                          (p[1] - centre[1]) * (p[1] - centre[1]) +
                          (p[2] - centre[2]) * (p[2] - centre[2]);
        if (d2 > r * r) continue;
        if (ellipsoid_radius(p, oc, oa) > 1.0) return std::nullopt;
        voxels.push_back({i, j, k});
      }
  return voxels;
}

std::string patient_name(int p) {
  std::ostringstream os;
  os << 'P';
  os.width(4);
  os.fill('0');
  os << p;
  return os.str();
}

}  // namespace

bool phantom_inside_organ(const PhantomCase& c, int i, int j, int k) {
  return ellipsoid_radius(voxel_position(c.volume.spacing, i, j, k), c.organ_center_mm,
                          c.organ_semi_axes_mm) <= 1.0;
}

std::vector<PhantomCase> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int n_lesion =
      static_cast<int>(std::lround(spec.lesion_fraction * static_cast<double>(spec.n_patients)));
  std::vector<int> order(static_cast<std::size_t>(spec.n_patients));
  for (int p = 0; p < spec.n_patients; ++p) order[static_cast<std::size_t>(p)] = p;
  Rng pick(derive_seed(spec.seed, "lesion_patients"));
  pick.shuffle(order);
  std::vector<bool> has_lesion(order.size(), false);
  for (int i = 0; i < n_lesion; ++i) has_lesion[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  const auto& g = spec.grid;
  const auto& s = spec.spacing;
  const std::array<double, 3> length{g[0] * s[0], g[1] * s[1], g[2] * s[2]};

  std::vector<PhantomCase> cases;
  cases.reserve(order.size());
  for (int p = 0; p < spec.n_patients; ++p) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(p)));
    PhantomCase c;
    c.volume = Volume(g, s, patient_name(p), View::Volume3d);
    c.mask = LesionMask(g);
    for (int d = 0; d < 3; ++d) {
      c.organ_center_mm[d] = 0.5 * (g[d] - 1) * s[d] + rng.uniform(-0.05, 0.05) * length[d];
      c.organ_semi_axes_mm[d] = 0.36 * length[d] * rng.uniform(0.9, 1.1);
    }
    std::array<CosineMode, 3> modes;
    for (auto& m : modes) {
      m.amplitude = rng.uniform(0.04, 0.08);
      for (int d = 0; d < 3; ++d) {
        m.frequency[d] = rng.uniform(0.5, 2.0);
        m.phase[d] = rng.uniform(0.0, 2.0 * M_PI);
      }
    }

    for (int k = 0; k < g[2]; ++k)
      for (int j = 0; j < g[1]; ++j)
        for (int i = 0; i < g[0]; ++i) {
          const auto pos = voxel_position(s, i, j, k);
          double texture = 0.0;
          for (const auto& m : modes) {
            double t = m.amplitude;
            for (int d = 0; d < 3; ++d)
              t *= std::cos(2.0 * M_PI * m.frequency[d] * pos[d] / length[d] + m.phase[d]);
            texture += t;
          }
          const double r = ellipsoid_radius(pos, c.organ_center_mm, c.organ_semi_axes_mm);
          const double organ = 1.0 / (1.0 + std::exp(12.0 * (r - 1.0)));
          c.volume.at(i, j, k) = static_cast<float>(0.1 + 0.15 * texture + organ * (0.35 + texture));
        }

    if (has_lesion[static_cast<std::size_t>(p)]) {
      std::optional<std::vector<std::array<int, 3>>> voxels;
      std::array<double, 3> centre{};
      for (int attempt = 0; attempt < 10000 && !voxels; ++attempt) {
        const auto i0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(g[0])));
        const auto j0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(g[1])));
        const double z0 = rng.uniform(0.0, (g[2] - 1) * s[2]);
        centre = {i0 * s[0], j0 * s[1], z0};
        voxels = sphere_inside_organ(spec, centre, c.organ_center_mm, c.organ_semi_axes_mm);
      }
      if (!voxels)
        throw std::invalid_argument("phantom: infeasible lesion radius " +
                                    std::to_string(spec.lesion_radius_mm) +
                                    " mm, no placement fits inside the organ");
      c.lesion_center_mm = centre;
      for (const auto& [i, j, k] : *voxels) {
        c.mask.at(i, j, k) = 1;
        c.volume.at(i, j, k) += static_cast<float>(spec.lesion_contrast);
      }
    }

    for (Eigen::Index v = 0; v < c.volume.voxels.size(); ++v) {
      const double noisy = c.volume.voxels[v] + spec.noise_sigma * rng.normal();
      c.volume.voxels[v] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Reslicing

Spacing view_spacing(View view, const Spacing& c) {
  switch (view) {
    case View::Coronal: return {c[0], c[2], c[1]};
    case View::Sagittal: return {c[1], c[2], c[0]};
    default: return c;
  }
}

namespace {

// Frame axis -> source axis for each view.
std::array<int, 3> view_axes(View view) {
  switch (view) {
    case View::Coronal: return {0, 2, 1};
    case View::Sagittal: return {1, 2, 0};
    default: return {0, 1, 2};
  }
}

template <typename Get, typename Set>
void restack(const Extents& src, View view, Get get, Set set) {
  const auto ax = view_axes(view);
  std::array<int, 3> idx{};
  for (idx[2] = 0; idx[2] < src[2]; ++idx[2])
    for (idx[1] = 0; idx[1] < src[1]; ++idx[1])
      for (idx[0] = 0; idx[0] < src[0]; ++idx[0])
        set(idx[ax[0]], idx[ax[1]], idx[ax[2]], get(idx[0], idx[1], idx[2]));
}

Extents view_extents(View view, const Extents& e) {
  const auto ax = view_axes(view);
  return {e[ax[0]], e[ax[1]], e[ax[2]]};
}

}  // namespace

ViewStack reslice_views(const Volume& v) {
  v.validate();
  auto make = [&](View view) {
    Volume out(view_extents(view, v.extents), view_spacing(view, v.spacing), v.patient_id, view);
    restack(
        v.extents, view, [&](int i, int j, int k) { return v.at(i, j, k); },
        [&](int a, int b, int c, float x) { out.at(a, b, c) = x; });
    return out;
  };
  return {make(View::Axial), make(View::Coronal), make(View::Sagittal)};
}

std::array<LesionMask, 3> reslice_masks(const LesionMask& m) {
  std::array<LesionMask, 3> out;
  for (std::size_t n = 0; n < 3; ++n) {
    const View view = kPlanarViews[n];
    out[n] = LesionMask(view_extents(view, m.extents));
    restack(
        m.extents, view, [&](int i, int j, int k) { return m.at(i, j, k); },
        [&](int a, int b, int c, std::uint8_t x) { out[n].at(a, b, c) = x; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

constexpr const char* kManifestHeader = "patient_id,view,volume_path,mask_path,split";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

fs::path resolve_path(const fs::path& manifest_path, const std::string& entry) {
  const fs::path p(entry);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

Manifest read_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw std::runtime_error("manifest " + path.string() + ": expected header '" +
                             kManifestHeader + "'");
  Manifest m;
  std::map<std::pair<std::string, View>, int> seen;
  std::vector<std::string> duplicates, missing;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5)
      throw std::runtime_error("manifest " + path.string() + " line " + std::to_string(line_no) +
                               ": expected 5 fields");
    ManifestRecord r{f[0], parse_view(f[1]), f[2], f[3], f[4]};
    if (!r.split.empty() && r.split != "train" && r.split != "tune" && r.split != "eval")
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unknown split '" +
                               r.split + "'");
    if (seen[{r.patient_id, r.view}]++ == 1)
      duplicates.push_back(r.patient_id + "/" + to_string(r.view));
    if (check_files) {
      if (!fs::exists(resolve_path(path, r.volume_path))) missing.push_back(r.volume_path);
      if (!r.mask_path.empty() && !fs::exists(resolve_path(path, r.mask_path)))
        missing.push_back(r.mask_path);
    }
    m.push_back(std::move(r));
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!duplicates.empty())
    throw std::runtime_error("manifest " + path.string() +
                             ": duplicate (patient_id, view) rows: " + join(duplicates));
  if (!missing.empty())
    throw std::runtime_error("manifest " + path.string() + ": missing files: " + join(missing));
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  std::map<std::pair<std::string, View>, int> seen;
  for (const auto& r : m) {
    if (seen[{r.patient_id, r.view}]++)
      throw std::invalid_argument("manifest: duplicate (patient_id, view) row " + r.patient_id +
                                  "/" + to_string(r.view));
    for (const auto* s : {&r.patient_id, &r.volume_path, &r.mask_path, &r.split})
      if (s->find_first_of(",\n") != std::string::npos)
        throw std::invalid_argument("manifest: field contains a comma or newline: " + *s);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : m)
    out << r.patient_id << ',' << to_string(r.view) << ',' << r.volume_path << ',' << r.mask_path
        << ',' << r.split << '\n';
}

}  // namespace mvood

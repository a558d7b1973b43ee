#ifndef SLABFILL_SYNTH_HPP
#define SLABFILL_SYNTH_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/parallel.hpp"
#include "slabfill/rng.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

struct GeneratorConfig {
  double rotation_max_deg = 15.0;
  std::array<double, 2> scale_range{0.9, 1.1};
  double shear_max = 0.1;
  double translation_max_mm = 10.0;
  double nonlin_cp_spacing_inplane_mm = 20.0;
  double nonlin_cp_spacing_ap_mm = 10.0;  // AP varies faster than in-plane
  double nonlin_std_mm = 3.0;
  std::array<double, 2> gmm_mean_range{0.1, 0.9};
  std::array<double, 2> gmm_std_range{0.02, 0.12};
  std::array<double, 2> gamma_log_range{-0.3, 0.3};
  double bias_log_amplitude = 0.3;
  double bias_cp_spacing_inplane_mm = 40.0;
  double bias_cp_spacing_ap_mm = 12.0;
  int thickness_min_mm = 2;
  int thickness_max_mm = 12;
  int batch_size = 32;
  int slice_size = 128;
  uint64_t seed = 0;

  void validate() const {
    if (thickness_min_mm < 2) throw ConfigError("thickness_min_mm must be >= 2");
    if (thickness_max_mm < thickness_min_mm)
      throw ConfigError("thickness range is empty");
    if (scale_range[0] > scale_range[1]) throw ConfigError("scale_range not ordered");
    if (gmm_mean_range[0] > gmm_mean_range[1]) throw ConfigError("gmm_mean_range not ordered");
    if (gmm_std_range[0] > gmm_std_range[1]) throw ConfigError("gmm_std_range not ordered");
    if (gamma_log_range[0] > gamma_log_range[1]) throw ConfigError("gamma_log_range not ordered");
    if (!(nonlin_cp_spacing_ap_mm < nonlin_cp_spacing_inplane_mm))
      throw ConfigError("nonlinear AP control spacing must be finer than in-plane");
    if (!(bias_cp_spacing_ap_mm < bias_cp_spacing_inplane_mm))
      throw ConfigError("bias AP control spacing must be finer than in-plane");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (slice_size < 16 || slice_size % 16 != 0)
      throw ConfigError("slice_size must be a positive multiple of 16");
    if (nonlin_std_mm < 0 || bias_log_amplitude < 0)
      throw ConfigError("field amplitudes must be non-negative");
    if (rotation_max_deg < 0 || shear_max < 0 || translation_max_mm < 0)
      throw ConfigError("affine ranges must be non-negative");
    if (gmm_std_range[0] < 0) throw ConfigError("gmm std must be non-negative");
  }
};

struct Mat4 {
  double m[4][4]{};

  static Mat4 identity() {
    Mat4 a;
    for (int i = 0; i < 4; ++i) a.m[i][i] = 1.0;
    return a;
  }
  static Mat4 translation(double tx, double ty, double tz) {
    Mat4 a = identity();
    a.m[0][3] = tx;
    a.m[1][3] = ty;
    a.m[2][3] = tz;
    return a;
  }
  Mat4 operator*(const Mat4& b) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += m[i][k] * b.m[k][j];
        r.m[i][j] = s;
      }
    return r;
  }
  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    std::array<double, 3> r;
    for (int i = 0; i < 3; ++i)
      r[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    return r;
  }
};

struct DeformationField {
  VoxelGeometry geometry;
  std::vector<float> displacement;  // component-major: [3][z][y][x], mm

  DeformationField() = default;
  explicit DeformationField(VoxelGeometry g)
      : geometry(g), displacement(3 * static_cast<size_t>(g.voxel_count()), 0.f) {}

  float at(int comp, int x, int y, int z) const {
    return displacement[comp * geometry.voxel_count() +
                        (int64_t(z) * geometry.dims[1] + y) * geometry.dims[0] + x];
  }
};

struct SlabTriplet {
  SliceImage x1, x2, y;
  double d1_mm = 1.0;
  double d2_mm = 1.0;
};

struct Batch {
  std::vector<SlabTriplet> triplets;
};

// Pull-back affine in mm: rotations uniform in +-rotation_max_deg per axis,
// anisotropic scale, shears, translation. Applied by deform_labels relative
// to the volume center. Draw order is fixed for reproducibility.
inline Mat4 sample_affine(Rng& rng, const GeneratorConfig& cfg) {
  const double deg2rad = 0.017453292519943295;
  const double rx = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * deg2rad;
  const double ry = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * deg2rad;
  const double rz = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * deg2rad;
  const double sx = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
  const double sy = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
  const double sz = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
  const double hxy = rng.uniform(-cfg.shear_max, cfg.shear_max);
  const double hxz = rng.uniform(-cfg.shear_max, cfg.shear_max);
  const double hyz = rng.uniform(-cfg.shear_max, cfg.shear_max);
  const double tx = rng.uniform(-cfg.translation_max_mm, cfg.translation_max_mm);
  const double ty = rng.uniform(-cfg.translation_max_mm, cfg.translation_max_mm);
  const double tz = rng.uniform(-cfg.translation_max_mm, cfg.translation_max_mm);

  Mat4 rot_x = Mat4::identity();
  rot_x.m[1][1] = std::cos(rx); rot_x.m[1][2] = -std::sin(rx);
  rot_x.m[2][1] = std::sin(rx); rot_x.m[2][2] = std::cos(rx);
  Mat4 rot_y = Mat4::identity();
  rot_y.m[0][0] = std::cos(ry); rot_y.m[0][2] = std::sin(ry);
  rot_y.m[2][0] = -std::sin(ry); rot_y.m[2][2] = std::cos(ry);
  Mat4 rot_z = Mat4::identity();
  rot_z.m[0][0] = std::cos(rz); rot_z.m[0][1] = -std::sin(rz);
  rot_z.m[1][0] = std::sin(rz); rot_z.m[1][1] = std::cos(rz);
  Mat4 shear = Mat4::identity();
  shear.m[0][1] = hxy; shear.m[0][2] = hxz; shear.m[1][2] = hyz;
  Mat4 scale = Mat4::identity();
  scale.m[0][0] = sx; scale.m[1][1] = sy; scale.m[2][2] = sz;

  return Mat4::translation(tx, ty, tz) * rot_z * rot_y * rot_x * shear * scale;
}

namespace detail {

// Control-point grid sizes so that points at k*spacing_mm cover [0, extent].
inline std::array<int, 3> control_grid_dims(const VoxelGeometry& g,
                                            const std::array<double, 3>& cp_spacing) {
  std::array<int, 3> n;
  for (int a = 0; a < 3; ++a)
    n[a] = std::max(2, static_cast<int>(std::ceil(g.extent_mm(a) / cp_spacing[a])) + 1);
  return n;
}

// Trilinear upsample of a coarse control grid to the full voxel grid.
// cp_value(c, ix, iy, iz) supplies the control value for component c.
template <typename CpFn>
void upsample_control_grid(const VoxelGeometry& g, const std::array<int, 3>& n,
                           const std::array<double, 3>& cp_spacing, int components,
                           CpFn&& cp_value, float* out, int threads) {
  const int dx = g.dims[0], dy = g.dims[1], dz = g.dims[2];
  const int64_t plane = g.voxel_count();
  parallel_for(int64_t(dz) * dy, threads, [&](int64_t row) {
    const int z = static_cast<int>(row / dy);
    const int y = static_cast<int>(row % dy);
    const double cy = std::min(y * g.spacing[1] / cp_spacing[1], double(n[1] - 1));
    const double cz = std::min(z * g.spacing[2] / cp_spacing[2], double(n[2] - 1));
    const int y0 = std::min(static_cast<int>(cy), n[1] - 2);
    const int z0 = std::min(static_cast<int>(cz), n[2] - 2);
    const double fy = cy - y0, fz = cz - z0;
    for (int x = 0; x < dx; ++x) {
      const double cx = std::min(x * g.spacing[0] / cp_spacing[0], double(n[0] - 1));
      const int x0 = std::min(static_cast<int>(cx), n[0] - 2);
      const double fx = cx - x0;
      for (int c = 0; c < components; ++c) {
        auto v = [&](int xi, int yi, int zi) { return cp_value(c, xi, yi, zi); };
        const double c00 = v(x0, y0, z0) * (1 - fx) + v(x0 + 1, y0, z0) * fx;
        const double c10 = v(x0, y0 + 1, z0) * (1 - fx) + v(x0 + 1, y0 + 1, z0) * fx;
        const double c01 = v(x0, y0, z0 + 1) * (1 - fx) + v(x0 + 1, y0, z0 + 1) * fx;
        const double c11 = v(x0, y0 + 1, z0 + 1) * (1 - fx) + v(x0 + 1, y0 + 1, z0 + 1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        out[c * plane + (int64_t(z) * dy + y) * dx + x] =
            static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  });
}

} // namespace detail

// Smooth random displacement field: independent Gaussian control points on a
// coarse grid (finer spacing along AP), trilinearly upsampled.
inline DeformationField sample_deformation(Rng& rng, const VoxelGeometry& geometry,
                                           const GeneratorConfig& cfg, int threads = 1) {
  const std::array<double, 3> cp_spacing{cfg.nonlin_cp_spacing_inplane_mm,
                                         cfg.nonlin_cp_spacing_ap_mm,
                                         cfg.nonlin_cp_spacing_inplane_mm};
  const auto n = detail::control_grid_dims(geometry, cp_spacing);
  std::vector<float> cp(3 * size_t(n[0]) * n[1] * n[2]);
  for (auto& v : cp) v = static_cast<float>(rng.normal(0.0, cfg.nonlin_std_mm));
  DeformationField field(geometry);
  auto cp_at = [&](int c, int x, int y, int z) {
    return cp[((size_t(c) * n[2] + z) * n[1] + y) * n[0] + x];
  };
  detail::upsample_control_grid(geometry, n, cp_spacing, 3, cp_at,
                                field.displacement.data(), threads);
  return field;
}

// Pulls back each output voxel through (centered affine, then displacement)
// and nearest-neighbor samples the source; outside coordinates become
// background 0. Never invents labels.
inline LabelVolume deform_labels(const LabelVolume& labels, const Mat4& affine,
                                 const DeformationField& field, int threads = 1) {
  const auto& g = labels.geometry;
  if (field.geometry.dims != g.dims)
    throw ShapeMismatch("deform_labels: field grid does not match label grid");
  LabelVolume out(g);
  const std::array<double, 3> center{g.extent_mm(0) / 2, g.extent_mm(1) / 2,
                                     g.extent_mm(2) / 2};
  const int dx = g.dims[0], dy = g.dims[1], dz = g.dims[2];
  parallel_for(int64_t(dz) * dy, threads, [&](int64_t row) {
    const int z = static_cast<int>(row / dy);
    const int y = static_cast<int>(row % dy);
    for (int x = 0; x < dx; ++x) {
      const std::array<double, 3> rel{x * g.spacing[0] - center[0],
                                      y * g.spacing[1] - center[1],
                                      z * g.spacing[2] - center[2]};
      auto src = affine.apply(rel);
      for (int a = 0; a < 3; ++a) src[a] += center[a];
      src[0] += field.at(0, x, y, z);
      src[1] += field.at(1, x, y, z);
      src[2] += field.at(2, x, y, z);
      const int xs = static_cast<int>(std::lround(src[0] / g.spacing[0]));
      const int ys = static_cast<int>(std::lround(src[1] / g.spacing[1]));
      const int zs = static_cast<int>(std::lround(src[2] / g.spacing[2]));
      uint8_t v = 0;
      if (xs >= 0 && xs < dx && ys >= 0 && ys < dy && zs >= 0 && zs < dz)
        v = labels.at(xs, ys, zs);
      out.at(x, y, z) = v;
    }
  });
  return out;
}

// Per label: mean uniform in gmm_mean_range, std uniform in gmm_std_range;
// voxelwise independent Gaussian draws, clamped to [0,1].
inline IntensityVolume gmm_synthesize(const LabelVolume& labels, Rng& rng,
                                      const GeneratorConfig& cfg, int threads = 1) {
  std::array<float, 256> mean{}, stdev{};
  for (int l : labels.label_set()) {
    mean[l] = static_cast<float>(rng.uniform(cfg.gmm_mean_range[0], cfg.gmm_mean_range[1]));
    stdev[l] = static_cast<float>(rng.uniform(cfg.gmm_std_range[0], cfg.gmm_std_range[1]));
  }
  const uint64_t noise_seed = rng.next_u64();
  IntensityVolume out(labels.geometry, 1);
  parallel_for(labels.geometry.voxel_count(), threads, [&](int64_t i) {
    const uint8_t l = labels.voxels[i];
    const double v = mean[l] + stdev[l] * gaussian_at(noise_seed, static_cast<uint64_t>(i));
    out.voxels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  });
  return out;
}

// v -> v^gamma with log-gamma uniform in gamma_log_range; [0,1] is preserved.
inline IntensityVolume gamma_augment(const IntensityVolume& vol, Rng& rng,
                                     const GeneratorConfig& cfg, int threads = 1) {
  const float g = static_cast<float>(
      std::exp(rng.uniform(cfg.gamma_log_range[0], cfg.gamma_log_range[1])));
  IntensityVolume out = vol;
  parallel_for(static_cast<int64_t>(out.voxels.size()), threads,
               [&](int64_t i) { out.voxels[i] = std::pow(vol.voxels[i], g); });
  return out;
}

// Smooth multiplicative illumination field exp(B), with B Gaussian on a
// control grid whose AP spacing is finer than in-plane; output clamped.
inline IntensityVolume apply_bias_field(const IntensityVolume& vol, Rng& rng,
                                        const GeneratorConfig& cfg, int threads = 1) {
  const std::array<double, 3> cp_spacing{cfg.bias_cp_spacing_inplane_mm,
                                         cfg.bias_cp_spacing_ap_mm,
                                         cfg.bias_cp_spacing_inplane_mm};
  const auto n = detail::control_grid_dims(vol.geometry, cp_spacing);
  std::vector<float> cp(static_cast<size_t>(n[0]) * n[1] * n[2]);
  for (auto& v : cp) v = static_cast<float>(rng.normal(0.0, cfg.bias_log_amplitude));
  std::vector<float> log_field(vol.geometry.voxel_count());
  auto cp_at = [&](int, int x, int y, int z) {
    return cp[(size_t(z) * n[1] + y) * n[0] + x];
  };
  detail::upsample_control_grid(vol.geometry, n, cp_spacing, 1, cp_at, log_field.data(),
                                threads);
  IntensityVolume out = vol;
  const int64_t plane = vol.geometry.voxel_count();
  parallel_for(plane, threads, [&](int64_t i) {
    const float f = std::exp(log_field[i]);
    for (int c = 0; c < vol.channels; ++c)
      out.voxels[c * plane + i] = std::clamp(vol.voxels[c * plane + i] * f, 0.f, 1.f);
  });
  return out;
}

// Random digital slabbing: integer thickness d in [min,max], integer split
// d1 in [1,d-1], integer base AP coordinate; one shared in-plane crop.
inline SlabTriplet sample_triplet(const IntensityVolume& vol, Rng& rng,
                                  const GeneratorConfig& cfg) {
  const double ap_extent = vol.geometry.ap_extent_mm();
  if (!(ap_extent > cfg.thickness_max_mm))
    throw VolumeTooSmall("sample_triplet: AP extent " + std::to_string(ap_extent) +
                         " mm must exceed max thickness");
  const int d = static_cast<int>(rng.uniform_int(cfg.thickness_min_mm, cfg.thickness_max_mm));
  const int d1 = static_cast<int>(rng.uniform_int(1, d - 1));
  const int a_max = static_cast<int>(std::floor(ap_extent)) - d;
  const int a = static_cast<int>(rng.uniform_int(0, a_max));

  SlabTriplet t;
  t.x1 = extract_coronal_slice(vol, a);
  t.x2 = extract_coronal_slice(vol, a + d);
  t.y = extract_coronal_slice(vol, a + d1);
  t.d1_mm = d1;
  t.d2_mm = d - d1;

  const int s = cfg.slice_size;
  if (t.x1.height < s || t.x1.width < s)
    throw VolumeTooSmall("sample_triplet: in-plane size below slice_size");
  const int cy = static_cast<int>(rng.uniform_int(0, t.x1.height - s));
  const int cx = static_cast<int>(rng.uniform_int(0, t.x1.width - s));
  auto crop = [&](const SliceImage& img) {
    SliceImage c(img.channels, s, s, img.pixel_spacing);
    for (int ch = 0; ch < img.channels; ++ch)
      for (int r = 0; r < s; ++r)
        for (int col = 0; col < s; ++col)
          c.at(ch, r, col) = img.at(ch, cy + r, cx + col);
    return c;
  };
  t.x1 = crop(t.x1);
  t.x2 = crop(t.x2);
  t.y = crop(t.y);
  return t;
}

// Full 3D synthesis chain: affine -> nonlinear deformation -> GMM -> gamma
// -> multiplicative bias.
inline IntensityVolume synthesize_volume(const LabelVolume& labels, Rng& rng,
                                         const GeneratorConfig& cfg, int threads = 1) {
  const Mat4 affine = sample_affine(rng, cfg);
  const DeformationField field = sample_deformation(rng, labels.geometry, cfg, threads);
  const LabelVolume deformed = deform_labels(labels, affine, field, threads);
  IntensityVolume img = gmm_synthesize(deformed, rng, cfg, threads);
  img = gamma_augment(img, rng, cfg, threads);
  return apply_bias_field(img, rng, cfg, threads);
}

// One random label volume, one synthetic volume, batch_size triplets.
inline Batch make_batch(const std::vector<LabelVolume>& label_pool, Rng& rng,
                        const GeneratorConfig& cfg, int threads = 1) {
  if (label_pool.empty()) throw VolumeTooSmall("make_batch: empty label pool");
  const auto idx = rng.uniform_int(0, static_cast<int64_t>(label_pool.size()) - 1);
  const IntensityVolume vol = synthesize_volume(label_pool[idx], rng, cfg, threads);
  Batch b;
  b.triplets.reserve(cfg.batch_size);
  for (int i = 0; i < cfg.batch_size; ++i) b.triplets.push_back(sample_triplet(vol, rng, cfg));
  return b;
}

} // namespace slabfill

#endif

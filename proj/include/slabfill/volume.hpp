#ifndef SLABFILL_VOLUME_HPP
#define SLABFILL_VOLUME_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <set>
#include <string>
#include <vector>

#include "slabfill/errors.hpp"

namespace slabfill {

// Fixed 64-byte alignment for every buffer that enters a vectorized kernel.
// Heap addresses otherwise vary run to run, and alignment-dependent peel
// loops would change summation order and break bit-reproducibility.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const { return true; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

// Axis order is fixed: 0 = left-right, 1 = posterior-anterior (AP),
// 2 = inferior-superior. All mm coordinates live in the volume's own frame
// with the origin at voxel (0,0,0).
struct VoxelGeometry {
  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  static constexpr int ap_axis = 1;

  VoxelGeometry() = default;
  VoxelGeometry(std::array<int, 3> d, std::array<double, 3> s) : dims(d), spacing(s) {
    // nifti-1 stores pixdim as float32; snapping here keeps write/read a
    // bit-exact identity for every constructible volume
    for (auto& v : spacing) v = static_cast<double>(static_cast<float>(v));
    validate();
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw OutOfBounds("VoxelGeometry: dims must be >= 1");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw OutOfBounds("VoxelGeometry: spacing must be positive");
    }
  }

  int64_t voxel_count() const {
    return int64_t(dims[0]) * dims[1] * dims[2];
  }

  double extent_mm(int axis) const { return (dims[axis] - 1) * spacing[axis]; }
  double ap_extent_mm() const { return extent_mm(ap_axis); }

  bool operator==(const VoxelGeometry&) const = default;
};

// Dense 3D grid of non-negative label IDs. Immutable by convention once
// built; all read paths are safe to share across threads.
struct LabelVolume {
  VoxelGeometry geometry;
  std::vector<uint8_t> voxels;  // x fastest, then y, then z

  LabelVolume() = default;
  LabelVolume(VoxelGeometry g, uint8_t fill = 0)
      : geometry(g), voxels(static_cast<size_t>(g.voxel_count()), fill) {}

  int64_t index(int x, int y, int z) const {
    return (int64_t(z) * geometry.dims[1] + y) * geometry.dims[0] + x;
  }
  uint8_t at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
  uint8_t& at(int x, int y, int z) { return voxels[index(x, y, z)]; }

  // Sorted unique label IDs present in the volume.
  std::vector<int> label_set() const {
    std::array<bool, 256> seen{};
    for (uint8_t v : voxels) seen[v] = true;
    std::vector<int> out;
    for (int l = 0; l < 256; ++l)
      if (seen[l]) out.push_back(l);
    return out;
  }

  bool operator==(const LabelVolume&) const = default;
};

// Dense channel-major 4D grid of real intensities.
struct IntensityVolume {
  VoxelGeometry geometry;
  int channels = 1;
  std::vector<float> voxels;  // channel-major: [c][z][y][x]

  IntensityVolume() = default;
  IntensityVolume(VoxelGeometry g, int ch = 1, float fill = 0.f)
      : geometry(g), channels(ch),
        voxels(static_cast<size_t>(g.voxel_count()) * ch, fill) {}

  int64_t plane_size() const { return geometry.voxel_count(); }
  int64_t index(int c, int x, int y, int z) const {
    return int64_t(c) * plane_size() +
           (int64_t(z) * geometry.dims[1] + y) * geometry.dims[0] + x;
  }
  float at(int c, int x, int y, int z) const { return voxels[index(c, x, y, z)]; }
  float& at(int c, int x, int y, int z) { return voxels[index(c, x, y, z)]; }

  bool operator==(const IntensityVolume&) const = default;
};

// 2D image, channel-major storage. pixel_spacing is (row mm, col mm).
template <typename T>
struct BasicImage {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::array<double, 2> pixel_spacing{1.0, 1.0};
  AlignedVec<T> pixels;  // [c][row][col]

  BasicImage() = default;
  BasicImage(int ch, int h, int w, std::array<double, 2> sp = {1.0, 1.0})
      : channels(ch), height(h), width(w), pixel_spacing(sp),
        pixels(static_cast<size_t>(ch) * h * w, T(0)) {}

  int64_t plane_size() const { return int64_t(height) * width; }
  int64_t size() const { return plane_size() * channels; }
  T at(int c, int y, int x) const { return pixels[(int64_t(c) * height + y) * width + x]; }
  T& at(int c, int y, int x) { return pixels[(int64_t(c) * height + y) * width + x]; }
  const T* plane(int c) const { return pixels.data() + c * plane_size(); }
  T* plane(int c) { return pixels.data() + c * plane_size(); }

  bool same_shape(const BasicImage& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  bool operator==(const BasicImage&) const = default;
};

using SliceImage = BasicImage<float>;

// Mirror-without-edge-repeat index folding, valid for any integer i.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

// Trilinear interpolation of one channel at a continuous voxel coordinate.
// Exact at integer coordinates and on any function affine in the coordinates.
inline float trilinear_sample(const IntensityVolume& vol, double x, double y, double z,
                              int channel = 0) {
  const auto& d = vol.geometry.dims;
  constexpr double kEdgeTol = 1e-9;
  if (x < -kEdgeTol || y < -kEdgeTol || z < -kEdgeTol ||
      x > d[0] - 1 + kEdgeTol || y > d[1] - 1 + kEdgeTol || z > d[2] - 1 + kEdgeTol)
    throw OutOfBounds("trilinear_sample: coordinate (" + std::to_string(x) + "," +
                      std::to_string(y) + "," + std::to_string(z) + ") outside grid");
  x = std::clamp(x, 0.0, double(d[0] - 1));
  y = std::clamp(y, 0.0, double(d[1] - 1));
  z = std::clamp(z, 0.0, double(d[2] - 1));

  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int z0 = static_cast<int>(std::floor(z));
  if (x0 == d[0] - 1 && d[0] > 1) --x0;
  if (y0 == d[1] - 1 && d[1] > 1) --y0;
  if (z0 == d[2] - 1 && d[2] > 1) --z0;
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  const int x1 = std::min(x0 + 1, d[0] - 1);
  const int y1 = std::min(y0 + 1, d[1] - 1);
  const int z1 = std::min(z0 + 1, d[2] - 1);

  auto v = [&](int xi, int yi, int zi) {
    return static_cast<double>(vol.at(channel, xi, yi, zi));
  };
  const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
  const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
  const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
  const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

// Coronal slice (plane perpendicular to the AP axis) at an AP coordinate in
// mm. Rows run along axis 2, columns along axis 0. Grid-aligned coordinates
// reproduce the stored plane exactly.
inline SliceImage extract_coronal_slice(const IntensityVolume& vol, double ap_mm) {
  const auto& g = vol.geometry;
  const double y = ap_mm / g.spacing[1];
  if (y < -1e-9 || y > g.dims[1] - 1 + 1e-9)
    throw OutOfBounds("extract_coronal_slice: ap coordinate " + std::to_string(ap_mm) +
                      " mm outside [0, " + std::to_string(g.ap_extent_mm()) + "]");
  SliceImage out(vol.channels, g.dims[2], g.dims[0], {g.spacing[2], g.spacing[0]});
  for (int c = 0; c < vol.channels; ++c)
    for (int r = 0; r < out.height; ++r)
      for (int col = 0; col < out.width; ++col)
        out.at(c, r, col) = trilinear_sample(vol, col, y, r, c);
  return out;
}

} // namespace slabfill

#endif

#ifndef SLABFILL_IMPUTER_HPP
#define SLABFILL_IMPUTER_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/log.hpp"
#include "slabfill/loss.hpp"
#include "slabfill/parallel.hpp"
#include "slabfill/unet.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

constexpr double kPassthroughTolMm = 1e-6;
constexpr double kTrainedThicknessMaxMm = 12.0;  // beyond this the model is out of distribution
constexpr double kMaxSliceGapMm = 50.0;

// Ordered stack of acquired slices with strictly increasing AP coordinates.
struct ReconstructionStack {
  std::vector<SliceImage> slices;
  std::vector<double> ap_coords_mm;

  void validate() const {
    if (slices.size() < 2) throw InvalidStack("stack needs at least 2 slices");
    if (ap_coords_mm.size() != slices.size())
      throw InvalidStack("one AP coordinate per slice required");
    for (size_t i = 0; i < slices.size(); ++i) {
      if (slices[i].channels != slices[0].channels)
        throw ChannelMismatch("slice " + std::to_string(i) + " channel count differs");
      if (slices[i].height != slices[0].height || slices[i].width != slices[0].width)
        throw ShapeMismatch("slice " + std::to_string(i) + " shape differs");
    }
    for (size_t i = 1; i < ap_coords_mm.size(); ++i) {
      const double gap = ap_coords_mm[i] - ap_coords_mm[i - 1];
      if (!(gap > 0)) throw InvalidStack("AP coordinates must be strictly increasing");
      if (gap > kMaxSliceGapMm)
        throw InvalidStack("inter-slice gap " + std::to_string(gap) + " mm exceeds " +
                           std::to_string(kMaxSliceGapMm));
    }
  }
};

struct Bracket {
  bool passthrough = false;
  int i = 0;  // lower slice (or the coincident slice when passthrough)
  int j = 0;  // upper slice
  double d1 = 0;
  double d2 = 0;
};

// Consecutive-slice bracket for target coordinate t, or a passthrough marker
// when t coincides with an acquired slice within 1e-6 mm.
inline Bracket bracket_slices(const std::vector<double>& coords, double t) {
  if (coords.empty() || t < coords.front() - kPassthroughTolMm ||
      t > coords.back() + kPassthroughTolMm)
    throw OutOfRange("target " + std::to_string(t) + " mm outside slice range");
  const auto it = std::lower_bound(coords.begin(), coords.end(), t);
  const int hi = static_cast<int>(it - coords.begin());
  for (int c : {hi - 1, hi}) {
    if (c >= 0 && c < static_cast<int>(coords.size()) &&
        std::abs(coords[c] - t) <= kPassthroughTolMm) {
      Bracket b;
      b.passthrough = true;
      b.i = b.j = c;
      return b;
    }
  }
  Bracket b;
  b.j = hi;
  b.i = hi - 1;
  b.d1 = t - coords[b.i];
  b.d2 = coords[b.j] - t;
  return b;
}

struct ImputationPlan {
  std::vector<double> target_coords_mm;
  std::vector<Bracket> brackets;
};

// Targets at first + k*spacing for k = 0,1,... while <= last coordinate;
// never extrapolates beyond the terminal slices.
inline ImputationPlan plan(const ReconstructionStack& stack, double spacing_mm) {
  stack.validate();
  if (!(spacing_mm > 0)) throw ConfigError("spacing_mm must be > 0");
  const double first = stack.ap_coords_mm.front();
  const double last = stack.ap_coords_mm.back();
  const int64_t k_max = static_cast<int64_t>(std::floor((last - first) / spacing_mm + 1e-9));
  ImputationPlan p;
  p.target_coords_mm.reserve(k_max + 1);
  p.brackets.reserve(k_max + 1);
  for (int64_t k = 0; k <= k_max; ++k) {
    const double t = std::min(first + static_cast<double>(k) * spacing_mm, last);
    p.target_coords_mm.push_back(t);
    p.brackets.push_back(bracket_slices(stack.ap_coords_mm, t));
  }
  return p;
}

namespace imputer_detail {

template <typename T>
BasicImage<T> extract_channel(const BasicImage<T>& img, int c) {
  BasicImage<T> out(1, img.height, img.width, img.pixel_spacing);
  std::copy_n(img.plane(c), img.plane_size(), out.plane(0));
  return out;
}

} // namespace imputer_detail

// Imputes each non-passthrough target per channel: the bracketing pair is
// jointly min-max normalized, impute_slice is evaluated, and the output is
// mapped back through the inverse normalization and clamped to [0,1].
// Passthrough targets copy the acquired slice verbatim. Targets are
// independent; evaluation may run on several threads with identical results.
inline IntensityVolume impute_volume(const Parameters<float>& params,
                                     const ReconstructionStack& stack, double spacing_mm,
                                     int threads = 1) {
  const ImputationPlan p = plan(stack, spacing_mm);
  const int channels = stack.slices[0].channels;
  const int h = stack.slices[0].height;
  const int w = stack.slices[0].width;
  const auto& ps = stack.slices[0].pixel_spacing;
  const int n = static_cast<int>(p.target_coords_mm.size());

  int wide = 0;
  for (const auto& b : p.brackets)
    if (!b.passthrough && b.d1 + b.d2 > kTrainedThicknessMaxMm) ++wide;
  if (wide > 0)
    log_warn(std::to_string(wide) + " target(s) bracketed by slabs thicker than " +
             std::to_string(static_cast<int>(kTrainedThicknessMaxMm)) +
             " mm; the model is out of its training range there");

  IntensityVolume out(VoxelGeometry({w, n, h}, {ps[1], spacing_mm, ps[0]}), channels);
  parallel_for(n, threads, [&](int64_t k) {
    const Bracket& b = p.brackets[k];
    for (int c = 0; c < channels; ++c) {
      SliceImage result;
      if (b.passthrough) {
        result = imputer_detail::extract_channel(stack.slices[b.i], c);
      } else {
        const SliceImage x1 = imputer_detail::extract_channel(stack.slices[b.i], c);
        const SliceImage x2 = imputer_detail::extract_channel(stack.slices[b.j], c);
        const auto m = joint_minmax(x1, x2);
        if (m.degenerate) {
          result = SliceImage(1, h, w, ps);
          std::fill(result.pixels.begin(), result.pixels.end(),
                    std::clamp(m.lo, 0.f, 1.f));
        } else {
          result = impute_slice(params, apply_map(m, x1), apply_map(m, x2), b.d1, b.d2);
          for (auto& v : result.pixels) v = std::clamp(m.invert(v), 0.f, 1.f);
        }
      }
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col)
          out.at(c, col, static_cast<int>(k), r) = result.at(0, r, col);
    }
  });
  return out;
}

// Slices a volume stored along the AP axis into a stack. If coords are not
// given they are inferred from the AP voxel spacing.
inline ReconstructionStack stack_from_volume(const IntensityVolume& vol,
                                             const std::vector<double>* coords = nullptr) {
  ReconstructionStack stack;
  const int n = vol.geometry.dims[1];
  if (coords) {
    if (static_cast<int>(coords->size()) != n)
      throw InvalidStack("coordinate count " + std::to_string(coords->size()) +
                         " does not match slice count " + std::to_string(n));
    stack.ap_coords_mm = *coords;
  } else {
    for (int k = 0; k < n; ++k)
      stack.ap_coords_mm.push_back(k * vol.geometry.spacing[1]);
  }
  stack.slices.reserve(n);
  for (int k = 0; k < n; ++k) {
    SliceImage s(vol.channels, vol.geometry.dims[2], vol.geometry.dims[0],
                 {vol.geometry.spacing[2], vol.geometry.spacing[0]});
    for (int c = 0; c < vol.channels; ++c)
      for (int r = 0; r < s.height; ++r)
        for (int col = 0; col < s.width; ++col)
          s.at(c, r, col) = vol.at(c, col, k, r);
    stack.slices.push_back(std::move(s));
  }
  stack.validate();
  return stack;
}

} // namespace slabfill

#endif

#ifndef SLABFILL_LOSS_HPP
#define SLABFILL_LOSS_HPP

#include <cmath>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/synth.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

template <typename T>
struct MinMaxMap {
  T lo = T(0);
  T hi = T(1);
  bool degenerate = false;

  T apply(T v) const { return degenerate ? T(0) : (v - lo) / (hi - lo); }
  T invert(T v) const { return degenerate ? lo : lo + v * (hi - lo); }
};

// Joint range of the two bounding slices; the target is unknown at test time,
// so it never contributes to the map.
template <typename T>
MinMaxMap<T> joint_minmax(const BasicImage<T>& x1, const BasicImage<T>& x2) {
  MinMaxMap<T> m;
  m.lo = x1.pixels[0];
  m.hi = x1.pixels[0];
  for (const auto* img : {&x1, &x2})
    for (T v : img->pixels) {
      if (v < m.lo) m.lo = v;
      if (v > m.hi) m.hi = v;
    }
  m.degenerate = !(m.hi > m.lo);
  return m;
}

template <typename T>
BasicImage<T> apply_map(const MinMaxMap<T>& m, const BasicImage<T>& img) {
  BasicImage<T> out = img;
  for (auto& v : out.pixels) v = m.apply(v);
  return out;
}

// Maps the joint x1/x2 range onto [0,1] and transforms all three slices with
// the same affine map; a flat pair maps everything to zero.
inline SlabTriplet minmax_normalize_triplet(const SlabTriplet& t) {
  const auto m = joint_minmax(t.x1, t.x2);
  SlabTriplet out;
  out.x1 = apply_map(m, t.x1);
  out.x2 = apply_map(m, t.x2);
  out.y = apply_map(m, t.y);
  out.d1_mm = t.d1_mm;
  out.d2_mm = t.d2_mm;
  return out;
}

template <typename T>
struct SobelCache {
  BasicImage<T> gx, gy, mag;
};

// Gradient magnitude with the 3x3 Sobel kernels
//   Gx = [[-1,0,1],[-2,0,2],[-1,0,1]],  Gy = Gx^T
// correlated over a reflection-padded image (mirror without edge repeat).
template <typename T>
BasicImage<T> sobel_magnitude(const BasicImage<T>& img, SobelCache<T>* cache = nullptr) {
  if (img.channels != 1) throw ShapeMismatch("sobel_magnitude: single-channel only");
  const int h = img.height, w = img.width;
  BasicImage<T> gx(1, h, w), gy(1, h, w), mag(1, h, w, img.pixel_spacing);
  for (int y = 0; y < h; ++y) {
    const int ym = reflect_index(y - 1, h), yp = reflect_index(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xm = reflect_index(x - 1, w), xp = reflect_index(x + 1, w);
      auto col = [&](int xx) {
        return img.at(0, ym, xx) + T(2) * img.at(0, y, xx) + img.at(0, yp, xx);
      };
      auto row = [&](int yy) {
        return img.at(0, yy, xm) + T(2) * img.at(0, yy, x) + img.at(0, yy, xp);
      };
      // identical-term differences cancel exactly on constant images
      const T sx = col(xp) - col(xm);
      const T sy = row(yp) - row(ym);
      gx.at(0, y, x) = sx;
      gy.at(0, y, x) = sy;
      mag.at(0, y, x) = std::sqrt(sx * sx + sy * sy);
    }
  }
  if (cache) {
    cache->gx = std::move(gx);
    cache->gy = std::move(gy);
    cache->mag = mag;
  }
  return mag;
}

// Adjoint of sobel_magnitude: adds the gradient w.r.t. the input image into
// dimg. d mag / d g = g / mag, defined as 0 where mag == 0; the reflection
// padding adjoint scatters into the mirrored source pixels.
template <typename T>
void sobel_backward(const SobelCache<T>& c, const BasicImage<T>& dmag, BasicImage<T>& dimg) {
  static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const int h = dmag.height, w = dmag.width;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T m = c.mag.at(0, y, x);
      if (!(m > T(0))) continue;
      const T dgx = dmag.at(0, y, x) * c.gx.at(0, y, x) / m;
      const T dgy = dmag.at(0, y, x) * c.gy.at(0, y, x) / m;
      for (int dy = 0; dy < 3; ++dy) {
        const int yy = reflect_index(y + dy - 1, h);
        for (int dx = 0; dx < 3; ++dx) {
          const int xx = reflect_index(x + dx - 1, w);
          dimg.at(0, yy, xx) += T(kx[dy][dx]) * dgx + T(ky[dy][dx]) * dgy;
        }
      }
    }
  }
}

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
double mean_absolute_error(const BasicImage<T>& a, const BasicImage<T>& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("mean_absolute_error: shapes differ");
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    s += std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]));
  return s / static_cast<double>(a.size());
}

template <typename T>
struct LossResult {
  T value = T(0);
  BasicImage<T> grad;  // d value / d pred
};

// MAE(pred, target) + lambda * MAE(sobel(pred), sobel(target)), with the
// exact subgradient (0 at ties) chained through the Sobel pipeline.
template <typename T>
LossResult<T> loss(const BasicImage<T>& pred, const BasicImage<T>& target, double lambda) {
  if (!pred.same_shape(target)) throw ShapeMismatch("loss: shapes differ");
  const T inv_n = T(1) / static_cast<T>(pred.plane_size());
  LossResult<T> r;
  r.grad = BasicImage<T>(1, pred.height, pred.width);
  T intensity = T(0);
  for (int64_t i = 0; i < pred.size(); ++i) {
    const T d = pred.pixels[i] - target.pixels[i];
    intensity += std::abs(d);
    r.grad.pixels[i] = sign_of(d) * inv_n;
  }
  intensity *= inv_n;

  SobelCache<T> cache;
  const BasicImage<T> sp = sobel_magnitude(pred, &cache);
  const BasicImage<T> st = sobel_magnitude(target);
  T grad_term = T(0);
  BasicImage<T> dmag(1, pred.height, pred.width);
  const T lam = static_cast<T>(lambda);
  for (int64_t i = 0; i < sp.size(); ++i) {
    const T d = sp.pixels[i] - st.pixels[i];
    grad_term += std::abs(d);
    dmag.pixels[i] = sign_of(d) * inv_n * lam;
  }
  grad_term *= inv_n;
  sobel_backward(cache, dmag, r.grad);
  r.value = intensity + lam * grad_term;
  return r;
}

} // namespace slabfill

#endif

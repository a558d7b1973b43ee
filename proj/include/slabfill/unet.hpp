#ifndef SLABFILL_UNET_HPP
#define SLABFILL_UNET_HPP

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/parallel.hpp"
#include "slabfill/rng.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

struct NetworkConfig {
  int levels = 4;
  int base_channels = 64;
  static constexpr int in_channels = 4;   // x1, x2, d1 map, d2 map
  static constexpr int out_channels = 1;  // residual
  int group_norm_groups = 8;
  double leaky_slope = 0.01;

  void validate() const {
    if (levels < 1 || levels > 8) throw ConfigError("levels must be in [1,8]");
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (group_norm_groups < 1) throw ConfigError("group_norm_groups must be positive");
  }
  int level_channels(int level) const { return base_channels << level; }
  int bottleneck_channels() const { return base_channels << levels; }
};

// Largest feasible group count <= min(requested, channels) that divides the
// channel count; with power-of-two channel plans this is min(requested, C).
inline int groups_for_channels(int requested, int channels) {
  int g = std::min(requested, channels);
  while (channels % g != 0) --g;
  return g;
}

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  AlignedVec<T> v;

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

namespace unet_detail {

inline uint64_t next_stamp() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1);
}

} // namespace unet_detail

template <typename T>
struct Parameters {
  NetworkConfig config;
  std::vector<Tensor<T>> tensors;  // canonical (forward) order
  uint64_t stamp = 0;              // bumped on any in-place update
};

template <typename T>
struct Gradients {
  std::vector<AlignedVec<T>> tensors;  // one entry per Parameters tensor
};

// One conv unit: GroupNorm, then 3x3 conv (pad 1), then LeakyReLU.
struct UnitSpec {
  int cin = 0;
  int cout = 0;
  int groups = 1;     // resolved group count for this unit's norm
  int gn_idx = -1;    // tensor index of gn scale (+1 is gn offset)
  int conv_idx = -1;  // tensor index of conv weight (+1 is conv bias)
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
};

// Static structure of the network derived from the config: encoder blocks
// (two units then 2x2 max-pool, channels doubling), bottleneck block, mirror
// decoder (bilinear 2x upsampling, skip concatenation, two units), final 1x1
// projection. The stem unit normalizes the raw 4-channel input with a single
// group: per-channel stats would collapse the constant distance maps to
// their offsets and lose the d1/d2 conditioning, while joint stats keep the
// distances distinct and still cancel constant input shifts.
struct NetPlan {
  NetworkConfig cfg;
  std::vector<UnitSpec> enc;  // 2 * levels, forward order
  std::vector<UnitSpec> bottleneck;  // 2
  std::vector<UnitSpec> dec;  // 2 * levels, forward order
  int head_idx = -1;          // final 1x1 weight (+1 is bias)
  std::vector<TensorSpec> tensors;
};

inline NetPlan make_plan(const NetworkConfig& cfg) {
  cfg.validate();
  NetPlan plan;
  plan.cfg = cfg;
  auto add_unit = [&](const std::string& prefix, int cin, int cout, int groups) {
    UnitSpec u;
    u.cin = cin;
    u.cout = cout;
    u.groups = groups;
    u.gn_idx = static_cast<int>(plan.tensors.size());
    plan.tensors.push_back({prefix + ".gn.scale", {cin}});
    plan.tensors.push_back({prefix + ".gn.offset", {cin}});
    u.conv_idx = static_cast<int>(plan.tensors.size());
    plan.tensors.push_back({prefix + ".conv.weight", {cout, cin, 3, 3}});
    plan.tensors.push_back({prefix + ".conv.bias", {cout}});
    return u;
  };
  auto groups_of = [&](int channels) {
    return groups_for_channels(cfg.group_norm_groups, channels);
  };

  for (int i = 0; i < cfg.levels; ++i) {
    const int cin = i == 0 ? NetworkConfig::in_channels : cfg.level_channels(i - 1);
    const int cout = cfg.level_channels(i);
    const std::string p = "enc" + std::to_string(i);
    plan.enc.push_back(add_unit(p + ".u0", cin, cout, i == 0 ? 1 : groups_of(cin)));
    plan.enc.push_back(add_unit(p + ".u1", cout, cout, groups_of(cout)));
  }
  {
    const int cin = cfg.level_channels(cfg.levels - 1);
    const int cout = cfg.bottleneck_channels();
    plan.bottleneck.push_back(add_unit("bottleneck.u0", cin, cout, groups_of(cin)));
    plan.bottleneck.push_back(add_unit("bottleneck.u1", cout, cout, groups_of(cout)));
  }
  for (int i = cfg.levels - 1; i >= 0; --i) {
    const int up_ch = i == cfg.levels - 1 ? cfg.bottleneck_channels() : cfg.level_channels(i + 1);
    const int cin = up_ch + cfg.level_channels(i);  // upsampled + skip
    const int cout = cfg.level_channels(i);
    const std::string p = "dec" + std::to_string(i);
    plan.dec.push_back(add_unit(p + ".u0", cin, cout, groups_of(cin)));
    plan.dec.push_back(add_unit(p + ".u1", cout, cout, groups_of(cout)));
  }
  plan.head_idx = static_cast<int>(plan.tensors.size());
  plan.tensors.push_back({"head.weight", {1, cfg.base_channels, 1, 1}});
  plan.tensors.push_back({"head.bias", {1}});
  return plan;
}

// Kernels He-uniform over fan-in, biases zero, norm scale one / offset zero.
// The final projection starts at zero so a fresh network is exactly the
// linear-interpolation baseline.
template <typename T>
Parameters<T> init_network(const NetworkConfig& config, Rng& rng) {
  const NetPlan plan = make_plan(config);
  Parameters<T> params;
  params.config = config;
  params.stamp = unet_detail::next_stamp();
  params.tensors.reserve(plan.tensors.size());
  for (const auto& spec : plan.tensors) {
    Tensor<T> t;
    t.name = spec.name;
    t.shape = spec.shape;
    t.v.assign(static_cast<size_t>(t.size()), T(0));
    const bool is_weight = spec.name.ends_with(".weight");
    const bool is_head = spec.name.starts_with("head.");
    const bool is_gn_scale = spec.name.ends_with(".gn.scale");
    if (is_weight && !is_head) {
      const int64_t fan_in = t.size() / spec.shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : t.v) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (is_gn_scale) {
      std::fill(t.v.begin(), t.v.end(), T(1));
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

template <typename T>
Gradients<T> zero_gradients(const Parameters<T>& params) {
  Gradients<T> g;
  g.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    g.tensors.emplace_back(t.v.size(), T(0));
  return g;
}

template <typename T>
void accumulate(Gradients<T>& into, const Gradients<T>& from) {
  for (size_t i = 0; i < into.tensors.size(); ++i)
    for (size_t j = 0; j < into.tensors[i].size(); ++j)
      into.tensors[i][j] += from.tensors[i][j];
}

// ---------------------------------------------------------------------------
// primitive layers
// ---------------------------------------------------------------------------

namespace unet_detail {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MatXR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kGnEps = 1e-5;

// im2col for 3x3 / pad 1 over a strip of output rows [y0, y1).
// colT is col-major [(y1-y0)*W, cin*9]; column q = c*9 + ky*3 + kx.
template <typename T>
void im2col_strip(const BasicImage<T>& in, int y0, int y1, MatX<T>& colT) {
  const int H = in.height, W = in.width, C = in.channels;
  const int R = (y1 - y0) * W;
  colT.setZero(R, C * 9);
  for (int c = 0; c < C; ++c) {
    const T* src = in.plane(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int q = c * 9 + ky * 3 + kx;
        T* dst = colT.data() + static_cast<int64_t>(q) * R;
        const int x_begin = std::max(0, 1 - kx);
        const int x_end = std::min(W, W + 1 - kx);
        for (int y = y0; y < y1; ++y) {
          const int ys = y + ky - 1;
          if (ys < 0 || ys >= H) continue;
          const int n = x_end - x_begin;
          if (n > 0)
            std::copy_n(src + int64_t(ys) * W + x_begin + kx - 1, n,
                        dst + int64_t(y - y0) * W + x_begin);
        }
      }
    }
  }
}

// Adjoint of im2col_strip: scatter-adds dcolT back into the input gradient.
template <typename T>
void col2im_strip_add(const MatX<T>& dcolT, int y0, int y1, BasicImage<T>& din) {
  const int H = din.height, W = din.width, C = din.channels;
  const int R = (y1 - y0) * W;
  for (int c = 0; c < C; ++c) {
    T* dst = din.plane(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int q = c * 9 + ky * 3 + kx;
        const T* src = dcolT.data() + static_cast<int64_t>(q) * R;
        const int x_begin = std::max(0, 1 - kx);
        const int x_end = std::min(W, W + 1 - kx);
        for (int y = y0; y < y1; ++y) {
          const int ys = y + ky - 1;
          if (ys < 0 || ys >= H) continue;
          T* d = dst + int64_t(ys) * W + x_begin + kx - 1;
          const T* s = src + int64_t(y - y0) * W + x_begin;
          for (int i = 0; i < x_end - x_begin; ++i) d[i] += s[i];
        }
      }
    }
  }
}

inline int strip_rows(int height, int width, int cin) {
  const int64_t budget = int64_t(1) << 22;  // ~4M scalars of im2col scratch
  const int64_t per_row = int64_t(width) * cin * 9;
  return static_cast<int>(std::clamp<int64_t>(budget / std::max<int64_t>(per_row, 1), 1, height));
}

template <typename T>
void conv3x3_forward(const BasicImage<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                     BasicImage<T>& out) {
  const int H = in.height, W = in.width, cin = in.channels;
  const int cout = w.shape[0];
  const int64_t hw = int64_t(H) * W;
  Eigen::Map<MatX<T>> out_m(out.pixels.data(), hw, cout);  // CHW == col-major [HW, Co]
  Eigen::Map<const MatXR<T>> w_m(w.v.data(), cout, cin * 9);
  MatX<T> colT;
  const int step = strip_rows(H, W, cin);
  for (int y0 = 0; y0 < H; y0 += step) {
    const int y1 = std::min(H, y0 + step);
    im2col_strip(in, y0, y1, colT);
    out_m.middleRows(int64_t(y0) * W, int64_t(y1 - y0) * W).noalias() =
        colT * w_m.transpose();
  }
  for (int c = 0; c < cout; ++c) out_m.col(c).array() += b.v[c];
}

template <typename T>
void conv3x3_backward(const BasicImage<T>& in, const Tensor<T>& w,
                      const BasicImage<T>& dout, AlignedVec<T>& dw, AlignedVec<T>& db,
                      BasicImage<T>* din) {
  const int H = in.height, W = in.width, cin = in.channels;
  const int cout = w.shape[0];
  const int64_t hw = int64_t(H) * W;
  Eigen::Map<const MatX<T>> dout_m(dout.pixels.data(), hw, cout);
  Eigen::Map<const MatXR<T>> w_m(w.v.data(), cout, cin * 9);
  Eigen::Map<MatXR<T>> dw_m(dw.data(), cout, cin * 9);
  MatX<T> colT, dcolT;
  const int step = strip_rows(H, W, cin);
  for (int y0 = 0; y0 < H; y0 += step) {
    const int y1 = std::min(H, y0 + step);
    const int64_t r0 = int64_t(y0) * W, nr = int64_t(y1 - y0) * W;
    im2col_strip(in, y0, y1, colT);
    dw_m.noalias() += dout_m.middleRows(r0, nr).transpose() * colT;
    if (din) {
      dcolT.noalias() = dout_m.middleRows(r0, nr) * w_m;
      col2im_strip_add(dcolT, y0, y1, *din);
    }
  }
  for (int c = 0; c < cout; ++c) db[c] += dout_m.col(c).sum();
}

template <typename T>
void conv1x1_forward(const BasicImage<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                     BasicImage<T>& out) {
  const int64_t hw = in.plane_size();
  const int cout = w.shape[0];
  Eigen::Map<const MatX<T>> in_m(in.pixels.data(), hw, in.channels);
  Eigen::Map<const MatXR<T>> w_m(w.v.data(), cout, in.channels);
  Eigen::Map<MatX<T>> out_m(out.pixels.data(), hw, cout);
  out_m.noalias() = in_m * w_m.transpose();
  for (int c = 0; c < cout; ++c) out_m.col(c).array() += b.v[c];
}

template <typename T>
void conv1x1_backward(const BasicImage<T>& in, const Tensor<T>& w,
                      const BasicImage<T>& dout, AlignedVec<T>& dw, AlignedVec<T>& db,
                      BasicImage<T>* din) {
  const int64_t hw = in.plane_size();
  const int cout = w.shape[0];
  Eigen::Map<const MatX<T>> in_m(in.pixels.data(), hw, in.channels);
  Eigen::Map<const MatX<T>> dout_m(dout.pixels.data(), hw, cout);
  Eigen::Map<const MatXR<T>> w_m(w.v.data(), cout, in.channels);
  Eigen::Map<MatXR<T>> dw_m(dw.data(), cout, in.channels);
  dw_m.noalias() += dout_m.transpose() * in_m;
  for (int c = 0; c < cout; ++c) db[c] += dout_m.col(c).sum();
  if (din) {
    Eigen::Map<MatX<T>> din_m(din->pixels.data(), hw, in.channels);
    din_m.noalias() += dout_m * w_m;
  }
}

template <typename T>
void groupnorm_forward(const BasicImage<T>& x, const T* scale, const T* offset, int groups,
                       BasicImage<T>& out, std::vector<T>& mean, std::vector<T>& invstd) {
  const int C = x.channels;
  const int64_t hw = x.plane_size();
  const int cg = C / groups;
  const int64_t m = cg * hw;
  mean.resize(groups);
  invstd.resize(groups);
  for (int g = 0; g < groups; ++g) {
    const T* base = x.pixels.data() + int64_t(g) * cg * hw;
    double sum = 0, sum2 = 0;
    for (int64_t i = 0; i < m; ++i) {
      const double v = static_cast<double>(base[i]);
      sum += v;
      sum2 += v * v;
    }
    const double mu = sum / m;
    const double var = std::max(0.0, sum2 / m - mu * mu);
    mean[g] = static_cast<T>(mu);
    invstd[g] = static_cast<T>(1.0 / std::sqrt(var + kGnEps));
  }
  for (int c = 0; c < C; ++c) {
    const int g = c / cg;
    const T mu = mean[g], s = invstd[g], ga = scale[c], be = offset[c];
    const T* src = x.plane(c);
    T* dst = out.plane(c);
    for (int64_t i = 0; i < hw; ++i) dst[i] = ga * (src[i] - mu) * s + be;
  }
}

template <typename T>
void groupnorm_backward(const BasicImage<T>& x, const std::vector<T>& mean,
                        const std::vector<T>& invstd, const T* scale, int groups,
                        const BasicImage<T>& dout, BasicImage<T>& dx, T* dscale,
                        T* doffset) {
  const int C = x.channels;
  const int64_t hw = x.plane_size();
  const int cg = C / groups;
  const T m = static_cast<T>(cg * hw);
  for (int g = 0; g < groups; ++g) {
    const T mu = mean[g], s = invstd[g];
    double sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (int c = g * cg; c < (g + 1) * cg; ++c) {
      const T* xs = x.plane(c);
      const T* dy = dout.plane(c);
      double dsc = 0, dof = 0;
      for (int64_t i = 0; i < hw; ++i) {
        const T xhat = (xs[i] - mu) * s;
        dsc += static_cast<double>(dy[i]) * xhat;
        dof += static_cast<double>(dy[i]);
        const double dxhat = static_cast<double>(dy[i]) * scale[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      dscale[c] += static_cast<T>(dsc);
      doffset[c] += static_cast<T>(dof);
    }
    const T c1 = static_cast<T>(sum_dxhat / m);
    const T c2 = static_cast<T>(sum_dxhat_xhat / m);
    for (int c = g * cg; c < (g + 1) * cg; ++c) {
      const T* xs = x.plane(c);
      const T* dy = dout.plane(c);
      T* dxi = dx.plane(c);
      const T ga = scale[c];
      for (int64_t i = 0; i < hw; ++i) {
        const T xhat = (xs[i] - mu) * s;
        dxi[i] = s * (dy[i] * ga - c1 - xhat * c2);
      }
    }
  }
}

template <typename T>
void maxpool2x2_forward(const BasicImage<T>& in, BasicImage<T>& out,
                        std::vector<int32_t>* argmax) {
  const int C = in.channels, H = in.height, W = in.width;
  const int oh = H / 2, ow = W / 2;
  if (argmax) argmax->resize(size_t(C) * oh * ow);
  for (int c = 0; c < C; ++c) {
    const T* src = in.plane(c);
    T* dst = out.plane(c);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const int64_t base = int64_t(2 * y) * W + 2 * x;
        int64_t best = base;
        T bv = src[base];
        const int64_t cand[3] = {base + 1, base + W, base + W + 1};
        for (int64_t idx : cand)
          if (src[idx] > bv) {
            bv = src[idx];
            best = idx;
          }
        dst[int64_t(y) * ow + x] = bv;
        if (argmax)
          (*argmax)[(int64_t(c) * oh + y) * ow + x] = static_cast<int32_t>(best);
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const BasicImage<T>& dout, const std::vector<int32_t>& argmax,
                         BasicImage<T>& din) {
  const int C = dout.channels, oh = dout.height, ow = dout.width;
  for (int c = 0; c < C; ++c) {
    const T* dy = dout.plane(c);
    T* dx = din.plane(c);
    for (int64_t i = 0; i < int64_t(oh) * ow; ++i)
      dx[argmax[int64_t(c) * oh * ow + i]] += dy[i];
  }
}

// 2x bilinear upsampling with half-pixel centers: out[2i] mixes in[i-1]/in[i]
// with weights 1/4, 3/4 and out[2i+1] mixes in[i]/in[i+1] with 3/4, 1/4
// (edges clamped), applied separably to rows and columns.
template <typename T>
void upsample2x_forward(const BasicImage<T>& in, BasicImage<T>& out) {
  const int C = in.channels, H = in.height, W = in.width;
  BasicImage<T> tmp(C, 2 * H, W);
  for (int c = 0; c < C; ++c) {
    const T* src = in.plane(c);
    T* dst = tmp.plane(c);
    for (int y = 0; y < H; ++y) {
      const T* lo = src + int64_t(std::max(y - 1, 0)) * W;
      const T* mid = src + int64_t(y) * W;
      const T* hi = src + int64_t(std::min(y + 1, H - 1)) * W;
      T* even = dst + int64_t(2 * y) * W;
      T* odd = dst + int64_t(2 * y + 1) * W;
      for (int x = 0; x < W; ++x) {
        even[x] = T(0.25) * lo[x] + T(0.75) * mid[x];
        odd[x] = T(0.75) * mid[x] + T(0.25) * hi[x];
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    const T* src = tmp.plane(c);
    T* dst = out.plane(c);
    for (int y = 0; y < 2 * H; ++y) {
      const T* row = src + int64_t(y) * W;
      T* orow = dst + int64_t(y) * 2 * W;
      for (int x = 0; x < W; ++x) {
        const T lo = row[std::max(x - 1, 0)];
        const T mid = row[x];
        const T hi = row[std::min(x + 1, W - 1)];
        orow[2 * x] = T(0.25) * lo + T(0.75) * mid;
        orow[2 * x + 1] = T(0.75) * mid + T(0.25) * hi;
      }
    }
  }
}

template <typename T>
void upsample2x_backward(const BasicImage<T>& dout, BasicImage<T>& din) {
  const int C = din.channels, H = din.height, W = din.width;
  BasicImage<T> dtmp(C, 2 * H, W);
  for (int c = 0; c < C; ++c) {
    const T* dy = dout.plane(c);
    T* dt = dtmp.plane(c);
    for (int y = 0; y < 2 * H; ++y) {
      const T* orow = dy + int64_t(y) * 2 * W;
      T* trow = dt + int64_t(y) * W;
      for (int x = 0; x < W; ++x) {
        trow[std::max(x - 1, 0)] += T(0.25) * orow[2 * x];
        trow[x] += T(0.75) * orow[2 * x] + T(0.75) * orow[2 * x + 1];
        trow[std::min(x + 1, W - 1)] += T(0.25) * orow[2 * x + 1];
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    const T* dt = dtmp.plane(c);
    T* dx = din.plane(c);
    for (int y = 0; y < H; ++y) {
      const T* even = dt + int64_t(2 * y) * W;
      const T* odd = dt + int64_t(2 * y + 1) * W;
      T* lo = dx + int64_t(std::max(y - 1, 0)) * W;
      T* mid = dx + int64_t(y) * W;
      T* hi = dx + int64_t(std::min(y + 1, H - 1)) * W;
      for (int x = 0; x < W; ++x) {
        lo[x] += T(0.25) * even[x];
        mid[x] += T(0.75) * even[x] + T(0.75) * odd[x];
        hi[x] += T(0.25) * odd[x];
      }
    }
  }
}

} // namespace unet_detail

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct UnitCache {
  BasicImage<T> x;      // unit input (conv input for the stem unit)
  std::vector<T> mean, invstd;
  BasicImage<T> gnout;  // conv input when the unit has a norm
  BasicImage<T> z;      // conv output, pre-activation
};

template <typename T>
struct SampleCache {
  std::vector<UnitCache<T>> units;      // forward order: enc, bottleneck, dec
  std::vector<std::vector<int32_t>> pool_argmax;  // one per encoder level
  std::vector<std::array<int, 2>> pool_in_shape;  // (h, w) entering each pool
  BasicImage<T> head_in;
};

template <typename T>
struct ForwardCache {
  uint64_t params_stamp = 0;
  std::vector<SampleCache<T>> samples;
};

namespace unet_detail {

template <typename T>
BasicImage<T> unit_forward(const UnitSpec& u, const Parameters<T>& params,
                           BasicImage<T>&& x, UnitCache<T>* uc) {
  const NetworkConfig& cfg = params.config;
  BasicImage<T> gnout(x.channels, x.height, x.width);
  std::vector<T> mean, invstd;
  groupnorm_forward(x, params.tensors[u.gn_idx].v.data(),
                    params.tensors[u.gn_idx + 1].v.data(), u.groups, gnout, mean, invstd);
  BasicImage<T> z(u.cout, x.height, x.width);
  conv3x3_forward(gnout, params.tensors[u.conv_idx], params.tensors[u.conv_idx + 1], z);
  const T slope = static_cast<T>(cfg.leaky_slope);
  if (!uc) {
    for (auto& v : z.pixels)
      if (v < T(0)) v *= slope;
    return z;
  }
  BasicImage<T> out = z;
  for (auto& v : out.pixels)
    if (v < T(0)) v *= slope;
  uc->x = std::move(x);
  uc->mean = std::move(mean);
  uc->invstd = std::move(invstd);
  uc->gnout = std::move(gnout);
  uc->z = std::move(z);
  return out;
}

template <typename T>
BasicImage<T> unit_backward(const UnitSpec& u, const Parameters<T>& params,
                            const UnitCache<T>& uc, const BasicImage<T>& dout,
                            Gradients<T>& grads) {
  const NetworkConfig& cfg = params.config;
  const T slope = static_cast<T>(cfg.leaky_slope);
  BasicImage<T> dz = dout;
  for (int64_t i = 0; i < dz.size(); ++i)
    if (uc.z.pixels[i] <= T(0)) dz.pixels[i] *= slope;
  BasicImage<T> dconv_in(uc.gnout.channels, uc.gnout.height, uc.gnout.width);
  conv3x3_backward(uc.gnout, params.tensors[u.conv_idx], dz, grads.tensors[u.conv_idx],
                   grads.tensors[u.conv_idx + 1], &dconv_in);
  BasicImage<T> dx(uc.x.channels, uc.x.height, uc.x.width);
  groupnorm_backward(uc.x, uc.mean, uc.invstd, params.tensors[u.gn_idx].v.data(), u.groups,
                     dconv_in, dx, grads.tensors[u.gn_idx].data(),
                     grads.tensors[u.gn_idx + 1].data());
  return dx;
}

template <typename T>
BasicImage<T> concat_channels(const BasicImage<T>& a, const BasicImage<T>& b) {
  BasicImage<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.pixels.begin(), a.pixels.end(), out.pixels.begin());
  std::copy(b.pixels.begin(), b.pixels.end(), out.pixels.begin() + a.pixels.size());
  return out;
}

template <typename T>
BasicImage<T> forward_one(const NetPlan& plan, const Parameters<T>& params,
                          const BasicImage<T>& input, SampleCache<T>* cache) {
  const int L = plan.cfg.levels;
  BasicImage<T> x = input;
  std::vector<BasicImage<T>> skips(L);
  auto* units = cache ? &cache->units : nullptr;
  if (cache) {
    cache->units.resize(plan.enc.size() + plan.bottleneck.size() + plan.dec.size());
    cache->pool_argmax.resize(L);
    cache->pool_in_shape.resize(L);
  }
  size_t k = 0;
  for (int i = 0; i < L; ++i) {
    x = unit_forward(plan.enc[2 * i], params, std::move(x), units ? &(*units)[k] : nullptr);
    ++k;
    x = unit_forward(plan.enc[2 * i + 1], params, std::move(x), units ? &(*units)[k] : nullptr);
    ++k;
    skips[i] = x;
    BasicImage<T> pooled(x.channels, x.height / 2, x.width / 2);
    maxpool2x2_forward(x, pooled, cache ? &cache->pool_argmax[i] : nullptr);
    if (cache) cache->pool_in_shape[i] = {x.height, x.width};
    x = std::move(pooled);
  }
  for (const auto& u : plan.bottleneck) {
    x = unit_forward(u, params, std::move(x), units ? &(*units)[k] : nullptr);
    ++k;
  }
  for (int i = L - 1; i >= 0; --i) {
    BasicImage<T> up(x.channels, x.height * 2, x.width * 2);
    upsample2x_forward(x, up);
    x = concat_channels(up, skips[i]);
    skips[i] = BasicImage<T>();  // release
    const size_t base = 2 * (L - 1 - i);
    x = unit_forward(plan.dec[base], params, std::move(x), units ? &(*units)[k] : nullptr);
    ++k;
    x = unit_forward(plan.dec[base + 1], params, std::move(x), units ? &(*units)[k] : nullptr);
    ++k;
  }
  BasicImage<T> out(1, x.height, x.width);
  conv1x1_forward(x, params.tensors[plan.head_idx], params.tensors[plan.head_idx + 1], out);
  if (cache) cache->head_in = std::move(x);
  return out;
}

template <typename T>
void backward_one(const NetPlan& plan, const Parameters<T>& params,
                  const SampleCache<T>& cache, const BasicImage<T>& dout,
                  Gradients<T>& grads, BasicImage<T>* dinput) {
  const int L = plan.cfg.levels;
  BasicImage<T> dx(cache.head_in.channels, cache.head_in.height, cache.head_in.width);
  conv1x1_backward(cache.head_in, params.tensors[plan.head_idx], dout,
                   grads.tensors[plan.head_idx], grads.tensors[plan.head_idx + 1], &dx);

  std::vector<BasicImage<T>> dskips(L);
  size_t k = cache.units.size();
  // decoder, reverse forward order (levels 0 .. L-1 here since decoder ran L-1 .. 0)
  for (int i = 0; i < L; ++i) {
    --k;
    dx = unit_backward(plan.dec[2 * (L - 1 - i) + 1], params, cache.units[k], dx, grads);
    --k;
    dx = unit_backward(plan.dec[2 * (L - 1 - i)], params, cache.units[k], dx, grads);
    // split concat [upsampled | skip]
    const int skip_ch = plan.cfg.level_channels(i);
    const int up_ch = dx.channels - skip_ch;
    BasicImage<T> dup(up_ch, dx.height, dx.width);
    std::copy_n(dx.pixels.begin(), dup.pixels.size(), dup.pixels.begin());
    dskips[i] = BasicImage<T>(skip_ch, dx.height, dx.width);
    std::copy_n(dx.pixels.begin() + dup.pixels.size(), dskips[i].pixels.size(),
                dskips[i].pixels.begin());
    BasicImage<T> dlow(up_ch, dx.height / 2, dx.width / 2);
    upsample2x_backward(dup, dlow);
    dx = std::move(dlow);
  }
  for (int j = static_cast<int>(plan.bottleneck.size()) - 1; j >= 0; --j) {
    --k;
    dx = unit_backward(plan.bottleneck[j], params, cache.units[k], dx, grads);
  }
  for (int i = L - 1; i >= 0; --i) {
    const auto [h, w] = cache.pool_in_shape[i];
    BasicImage<T> dpre(dx.channels, h, w);
    maxpool2x2_backward(dx, cache.pool_argmax[i], dpre);
    for (int64_t j = 0; j < dpre.size(); ++j) dpre.pixels[j] += dskips[i].pixels[j];
    dskips[i] = BasicImage<T>();
    --k;
    dx = unit_backward(plan.enc[2 * i + 1], params, cache.units[k], dpre, grads);
    --k;
    dx = unit_backward(plan.enc[2 * i], params, cache.units[k], dx, grads);
  }
  if (dinput) *dinput = std::move(dx);
}

} // namespace unet_detail

// Batch forward. Residuals have the input's spatial shape and one channel.
// train_mode fills `cache` for a later backward pass.
template <typename T>
std::vector<BasicImage<T>> forward(const Parameters<T>& params,
                                   const std::vector<BasicImage<T>>& inputs, bool train_mode,
                                   ForwardCache<T>* cache, int threads = 1) {
  const NetPlan plan = make_plan(params.config);
  const int div = 1 << params.config.levels;
  for (const auto& img : inputs) {
    if (img.channels != NetworkConfig::in_channels)
      throw ShapeMismatch("forward: input must have 4 channels");
    if (img.height % div != 0 || img.width % div != 0)
      throw ShapeNotDivisible("forward: spatial dims " + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " not divisible by " +
                              std::to_string(div));
  }
  if (train_mode && cache) {
    cache->params_stamp = params.stamp;
    cache->samples.assign(inputs.size(), {});
  }
  std::vector<BasicImage<T>> out(inputs.size());
  parallel_for(static_cast<int64_t>(inputs.size()), threads, [&](int64_t i) {
    out[i] = unet_detail::forward_one(plan, params, inputs[i],
                                      train_mode && cache ? &cache->samples[i] : nullptr);
  });
  return out;
}

// Exact reverse-mode gradients of the forward map. Per-sample gradients are
// reduced in sample order, so results are independent of the thread count.
template <typename T>
Gradients<T> backward(const Parameters<T>& params, const ForwardCache<T>& cache,
                      const std::vector<BasicImage<T>>& output_grads,
                      std::vector<BasicImage<T>>* input_grads = nullptr, int threads = 1) {
  if (cache.params_stamp != params.stamp)
    throw StaleCache("backward: parameters changed since the forward pass");
  if (cache.samples.size() != output_grads.size())
    throw ShapeMismatch("backward: cache/grad batch size mismatch");
  const NetPlan plan = make_plan(params.config);
  const size_t n = output_grads.size();
  if (input_grads) input_grads->assign(n, {});
  std::vector<Gradients<T>> per_sample(n);
  parallel_for(static_cast<int64_t>(n), threads, [&](int64_t i) {
    per_sample[i] = zero_gradients(params);
    unet_detail::backward_one(plan, params, cache.samples[i], output_grads[i], per_sample[i],
                              input_grads ? &(*input_grads)[i] : nullptr);
  });
  Gradients<T> total = zero_gradients(params);
  for (size_t i = 0; i < n; ++i) accumulate(total, per_sample[i]);
  return total;
}

// ---------------------------------------------------------------------------
// linear interpolation and residual imputation
// ---------------------------------------------------------------------------

// y_lin = (d2/d) x1 + (d1/d) x2 with d = d1 + d2.
template <typename T>
BasicImage<T> linear_interpolation(const BasicImage<T>& x1, const BasicImage<T>& x2,
                                   double d1, double d2) {
  if (!x1.same_shape(x2)) throw ShapeMismatch("linear_interpolation: shapes differ");
  if (d1 < 0 || d2 < 0 || !(d1 + d2 > 0))
    throw DegenerateDistances("linear_interpolation: need d1,d2 >= 0 and d1+d2 > 0");
  const T w1 = static_cast<T>(d2 / (d1 + d2));
  const T w2 = static_cast<T>(d1 / (d1 + d2));
  BasicImage<T> out = x1;
  for (int64_t i = 0; i < out.size(); ++i)
    out.pixels[i] = w1 * x1.pixels[i] + w2 * x2.pixels[i];
  return out;
}

namespace unet_detail {

template <typename T>
BasicImage<T> reflect_pad_to(const BasicImage<T>& img, int h, int w) {
  BasicImage<T> out(img.channels, h, w, img.pixel_spacing);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = reflect_index(y, img.height);
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = img.at(c, sy, reflect_index(x, img.width));
    }
  return out;
}

} // namespace unet_detail

// Builds the 4-channel network input: the two (normalized) bounding slices
// plus the distances replicated into constant 2D maps (raw mm values).
template <typename T>
BasicImage<T> stack_network_input(const BasicImage<T>& x1, const BasicImage<T>& x2,
                                  double d1, double d2) {
  BasicImage<T> in(4, x1.height, x1.width, x1.pixel_spacing);
  std::copy(x1.pixels.begin(), x1.pixels.end(), in.plane(0));
  std::copy(x2.pixels.begin(), x2.pixels.end(), in.plane(1));
  std::fill_n(in.plane(2), in.plane_size(), static_cast<T>(d1));
  std::fill_n(in.plane(3), in.plane_size(), static_cast<T>(d2));
  return in;
}

// y_hat = y_lin + S_theta(x1, x2, d1, d2), clamped to [0,1].
// Shapes not divisible by 2^levels are reflection-padded and cropped back.
template <typename T>
BasicImage<T> impute_slice(const Parameters<T>& params, const BasicImage<T>& x1,
                           const BasicImage<T>& x2, double d1, double d2) {
  if (x1.channels != 1 || x2.channels != 1)
    throw ShapeMismatch("impute_slice: expects single-channel slices");
  BasicImage<T> y = linear_interpolation(x1, x2, d1, d2);
  const int div = 1 << params.config.levels;
  const int ph = (x1.height + div - 1) / div * div;
  const int pw = (x1.width + div - 1) / div * div;
  BasicImage<T> in = stack_network_input(x1, x2, d1, d2);
  if (ph != x1.height || pw != x1.width) in = unet_detail::reflect_pad_to(in, ph, pw);
  const NetPlan plan = make_plan(params.config);
  const BasicImage<T> res =
      unet_detail::forward_one<T>(plan, params, in, static_cast<SampleCache<T>*>(nullptr));
  for (int yy = 0; yy < y.height; ++yy)
    for (int xx = 0; xx < y.width; ++xx) {
      T v = y.at(0, yy, xx) + res.at(0, yy, xx);
      y.at(0, yy, xx) = std::clamp(v, T(0), T(1));
    }
  return y;
}

} // namespace slabfill

#endif

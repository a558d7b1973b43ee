#ifndef SLABFILL_METRICS_HPP
#define SLABFILL_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slabfill/errors.hpp"
#include "slabfill/imputer.hpp"
#include "slabfill/rng.hpp"
#include "slabfill/synth.hpp"
#include "slabfill/unet.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

// 2|A n B| / (|A| + |B|) for the voxel sets carrying `label`; two empty sets
// count as perfect agreement (1.0).
inline double dice(const LabelVolume& a, const LabelVolume& b, int label) {
  if (a.geometry.dims != b.geometry.dims)
    throw ShapeMismatch("dice: volumes have different dims");
  int64_t na = 0, nb = 0, nab = 0;
  for (size_t i = 0; i < a.voxels.size(); ++i) {
    const bool ia = a.voxels[i] == label;
    const bool ib = b.voxels[i] == label;
    na += ia;
    nb += ib;
    nab += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(nab) / static_cast<double>(na + nb);
}

struct IntensityErrors {
  double mae = 0;
  double rmse = 0;
  double psnr = std::numeric_limits<double>::infinity();  // peak 1.0
};

namespace metrics_detail {

inline IntensityErrors errors_from_sums(double abs_sum, double sq_sum, int64_t n) {
  IntensityErrors e;
  if (n == 0) return e;
  e.mae = abs_sum / n;
  e.rmse = std::sqrt(sq_sum / n);
  e.psnr = e.rmse > 0 ? 20.0 * std::log10(1.0 / e.rmse)
                      : std::numeric_limits<double>::infinity();
  return e;
}

} // namespace metrics_detail

inline IntensityErrors intensity_errors(const IntensityVolume& a, const IntensityVolume& b) {
  if (a.geometry.dims != b.geometry.dims || a.channels != b.channels)
    throw ShapeMismatch("intensity_errors: shapes differ");
  double abs_sum = 0, sq_sum = 0;
  for (size_t i = 0; i < a.voxels.size(); ++i) {
    const double d = static_cast<double>(a.voxels[i]) - static_cast<double>(b.voxels[i]);
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  return metrics_detail::errors_from_sums(abs_sum, sq_sum, static_cast<int64_t>(a.voxels.size()));
}

struct WilcoxonResult {
  double w_plus = 0;        // sum of positive-difference ranks
  double p_two_sided = 1.0;
  int n_effective = 0;      // pairs remaining after zero removal
  bool degenerate = false;  // all differences were zero
};

// Paired Wilcoxon signed-rank test. Zero differences are dropped; |d| is
// ranked with midranks for ties. The null distribution of W+ is computed
// exactly for n <= 20 (all 2^n sign assignments, via the doubled-rank sum
// distribution); larger n uses the normal approximation with tie correction.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x,
                                           const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty())
    throw ShapeMismatch("wilcoxon_signed_rank: need equal-length non-empty samples");
  std::vector<double> d;
  d.reserve(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);

  WilcoxonResult r;
  r.n_effective = static_cast<int>(d.size());
  if (d.empty()) {
    r.degenerate = true;
    return r;  // no evidence either way: p = 1 by convention, flagged
  }
  const int n = r.n_effective;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  std::vector<int64_t> rank2(n);  // doubled ranks stay integral under midranks
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const double mid = (i + 1 + j) / 2.0;  // average of ranks i+1 .. j
    for (int k = i; k < j; ++k) {
      rank[order[k]] = mid;
      rank2[order[k]] = static_cast<int64_t>(std::llround(2 * mid));
    }
    i = j;
  }
  double w_plus = 0;
  int64_t w_plus2 = 0;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0) {
      w_plus += rank[i];
      w_plus2 += rank2[i];
    }
  r.w_plus = w_plus;

  if (n <= 20) {
    // counts[s] = number of sign assignments with doubled W+ equal to s
    const int64_t max2 = int64_t(n) * (n + 1);
    std::vector<double> counts(max2 + 1, 0.0);
    counts[0] = 1.0;
    for (int i = 0; i < n; ++i)
      for (int64_t s = max2 - rank2[i]; s >= 0; --s)
        if (counts[s] > 0) counts[s + rank2[i]] += counts[s];
    const double total = std::ldexp(1.0, n);  // 2^n
    double p_ge = 0, p_le = 0;
    for (int64_t s = 0; s <= max2; ++s) {
      if (s >= w_plus2) p_ge += counts[s];
      if (s <= w_plus2) p_le += counts[s];
    }
    r.p_two_sided = std::min(1.0, 2.0 * std::min(p_ge, p_le) / total);
  } else {
    const double mu = n * (n + 1) / 4.0;
    double tie_term = 0;
    for (int i = 0; i < n;) {
      int j = i;
      while (j < n && rank[order[j]] == rank[order[i]]) ++j;
      const double t = j - i;
      tie_term += (t * t * t - t);
      i = j;
    }
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (w_plus - mu) / std::sqrt(var);
    r.p_two_sided = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  }
  if (r.p_two_sided <= 0) r.p_two_sided = std::numeric_limits<double>::min();
  return r;
}

struct OracleCase {
  int index = 0;
  IntensityErrors model;
  IntensityErrors baseline;
  int planes_compared = 0;
};

struct MetricReport {
  int thickness_mm = 0;
  std::vector<OracleCase> cases;
  double model_mean_mae = 0, baseline_mean_mae = 0;
  double model_median_mae = 0, baseline_median_mae = 0;
  WilcoxonResult wilcoxon;
  nlohmann::json config_echo;

  nlohmann::json to_json() const {
    nlohmann::json cj = nlohmann::json::array();
    auto num = [](double v) {
      return std::isinf(v) ? nlohmann::json() : nlohmann::json(v);  // inf -> null
    };
    for (const auto& c : cases)
      cj.push_back({{"case", c.index},
                    {"planes_compared", c.planes_compared},
                    {"model", {{"mae", c.model.mae}, {"rmse", c.model.rmse}, {"psnr", num(c.model.psnr)}}},
                    {"baseline",
                     {{"mae", c.baseline.mae}, {"rmse", c.baseline.rmse}, {"psnr", num(c.baseline.psnr)}}}});
    return {{"thickness_mm", thickness_mm},
            {"cases", cj},
            {"model_mean_mae", model_mean_mae},
            {"baseline_mean_mae", baseline_mean_mae},
            {"model_median_mae", model_median_mae},
            {"baseline_median_mae", baseline_median_mae},
            {"wilcoxon",
             {{"w_plus", wilcoxon.w_plus},
              {"p_two_sided", wilcoxon.p_two_sided},
              {"n_effective", wilcoxon.n_effective},
              {"degenerate", wilcoxon.degenerate}}},
            {"config_echo", config_echo}};
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(5);
    os << std::setw(8) << "case" << std::setw(14) << "model MAE" << std::setw(14)
       << "linear MAE" << std::setw(14) << "model RMSE" << std::setw(14) << "linear RMSE"
       << "\n";
    for (const auto& c : cases)
      os << std::setw(8) << c.index << std::setw(14) << c.model.mae << std::setw(14)
         << c.baseline.mae << std::setw(14) << c.model.rmse << std::setw(14)
         << c.baseline.rmse << "\n";
    os << std::setw(8) << "mean" << std::setw(14) << model_mean_mae << std::setw(14)
       << baseline_mean_mae << "\n";
    os << std::setw(8) << "median" << std::setw(14) << model_median_mae << std::setw(14)
       << baseline_median_mae << "\n";
    os << "wilcoxon p (two-sided, paired) = " << std::setprecision(6)
       << wilcoxon.p_two_sided << (wilcoxon.degenerate ? "  [degenerate]" : "") << "\n";
    return os.str();
  }
};

// Copy of the parameters with the final projection zeroed: the exact linear-
// interpolation baseline evaluated through the same inference path.
inline Parameters<float> zero_residual_copy(const Parameters<float>& params) {
  Parameters<float> z = params;
  const NetPlan plan = make_plan(params.config);
  std::fill(z.tensors[plan.head_idx].v.begin(), z.tensors[plan.head_idx].v.end(), 0.f);
  std::fill(z.tensors[plan.head_idx + 1].v.begin(), z.tensors[plan.head_idx + 1].v.end(), 0.f);
  z.stamp = unet_detail::next_stamp();
  return z;
}

namespace metrics_detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace metrics_detail

// Synthetic-oracle benchmark: held-out synthetic volumes are subsampled along
// AP every thickness_mm, imputed back to 1 mm with the model and with the
// linear baseline, and both are scored against the known isotropic ground
// truth on the non-passthrough planes (passthrough planes are exact in both
// arms and would only dilute the contrast).
inline MetricReport oracle_benchmark(const Parameters<float>& params,
                                     const std::vector<LabelVolume>& label_pool,
                                     const GeneratorConfig& gen_cfg, int thickness_mm,
                                     int n_volumes, uint64_t seed, int threads = 1) {
  if (thickness_mm < 1) throw ConfigError("thickness_mm must be >= 1");
  if (n_volumes < 1) throw ConfigError("n_volumes must be >= 1");
  if (label_pool.empty()) throw VolumeTooSmall("oracle_benchmark: empty label pool");
  gen_cfg.validate();

  const Parameters<float> baseline_params = zero_residual_copy(params);
  MetricReport report;
  report.thickness_mm = thickness_mm;
  report.config_echo = nlohmann::json{{"thickness_mm", thickness_mm},
                                      {"n_volumes", n_volumes},
                                      {"seed", seed}};

  std::vector<double> model_maes, baseline_maes;
  for (int v = 0; v < n_volumes; ++v) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(v)));
    const auto pool_idx = rng.uniform_int(0, static_cast<int64_t>(label_pool.size()) - 1);
    const IntensityVolume truth = synthesize_volume(label_pool[pool_idx], rng, gen_cfg, threads);

    ReconstructionStack stack;
    const double extent = truth.geometry.ap_extent_mm();
    for (double t = 0; t <= extent + 1e-9; t += thickness_mm) {
      stack.ap_coords_mm.push_back(t);
      stack.slices.push_back(extract_coronal_slice(truth, std::min(t, extent)));
    }
    stack.validate();

    const IntensityVolume model_out = impute_volume(params, stack, 1.0, threads);
    const IntensityVolume base_out = impute_volume(baseline_params, stack, 1.0, threads);
    const ImputationPlan p = plan(stack, 1.0);

    OracleCase oc;
    oc.index = v;
    double m_abs = 0, m_sq = 0, b_abs = 0, b_sq = 0;
    int64_t count = 0;
    for (size_t k = 0; k < p.brackets.size(); ++k) {
      if (p.brackets[k].passthrough) continue;
      ++oc.planes_compared;
      const SliceImage gt = extract_coronal_slice(truth, p.target_coords_mm[k]);
      for (int c = 0; c < truth.channels; ++c)
        for (int r = 0; r < gt.height; ++r)
          for (int col = 0; col < gt.width; ++col) {
            const double g = gt.at(c, r, col);
            const double dm = model_out.at(c, col, static_cast<int>(k), r) - g;
            const double db = base_out.at(c, col, static_cast<int>(k), r) - g;
            m_abs += std::abs(dm);
            m_sq += dm * dm;
            b_abs += std::abs(db);
            b_sq += db * db;
            ++count;
          }
    }
    oc.model = metrics_detail::errors_from_sums(m_abs, m_sq, count);
    oc.baseline = metrics_detail::errors_from_sums(b_abs, b_sq, count);
    report.cases.push_back(oc);
    model_maes.push_back(oc.model.mae);
    baseline_maes.push_back(oc.baseline.mae);
  }

  double ms = 0, bs = 0;
  for (size_t i = 0; i < model_maes.size(); ++i) {
    ms += model_maes[i];
    bs += baseline_maes[i];
  }
  report.model_mean_mae = ms / model_maes.size();
  report.baseline_mean_mae = bs / baseline_maes.size();
  report.model_median_mae = metrics_detail::median(model_maes);
  report.baseline_median_mae = metrics_detail::median(baseline_maes);
  report.wilcoxon = wilcoxon_signed_rank(model_maes, baseline_maes);
  return report;
}

} // namespace slabfill

#endif

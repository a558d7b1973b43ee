#ifndef SLABFILL_ADAM_HPP
#define SLABFILL_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/unet.hpp"

namespace slabfill {

struct TrainConfig {
  double learning_rate = 1e-6;  // paper-scale default; desk profile raises it
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  double grad_loss_weight = 1.0;  // lambda
  int64_t max_steps = 100000;
  int64_t val_interval = 1000;
  int val_size = 1000;
  int patience = 10;
  uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
      throw ConfigError("adam betas must lie in (0,1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (grad_loss_weight < 0) throw ConfigError("grad_loss_weight must be >= 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (val_interval < 1) throw ConfigError("val_interval must be positive");
    if (val_size < 1) throw ConfigError("val_size must be >= 1");
    if (patience < 1) throw ConfigError("patience must be positive");
  }
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // aligned with Parameters::tensors
  int64_t step = 0;

  static AdamState init(const Parameters<T>& params) {
    AdamState s;
    s.m.reserve(params.tensors.size());
    s.v.reserve(params.tensors.size());
    for (const auto& t : params.tensors) {
      s.m.emplace_back(t.v.size(), T(0));
      s.v.emplace_back(t.v.size(), T(0));
    }
    return s;
  }
};

// Standard bias-corrected Adam update, applied in place per tensor.
template <typename T>
void adam_step(Parameters<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (grads.tensors.size() != params.tensors.size() ||
      state.m.size() != params.tensors.size())
    throw ShapeMismatch("adam_step: tensor list mismatch");
  const T b1 = static_cast<T>(cfg.adam_beta1);
  const T b2 = static_cast<T>(cfg.adam_beta2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.adam_eps);
  ++state.step;
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.adam_beta1, state.step));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.adam_beta2, state.step));
  for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& theta = params.tensors[ti].v;
    const auto& g = grads.tensors[ti];
    auto& m = state.m[ti];
    auto& v = state.v[ti];
    if (g.size() != theta.size()) throw ShapeMismatch("adam_step: gradient shape mismatch");
    for (size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  params.stamp = unet_detail::next_stamp();
}

} // namespace slabfill

#endif

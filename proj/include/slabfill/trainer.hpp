#ifndef SLABFILL_TRAINER_HPP
#define SLABFILL_TRAINER_HPP

#include <chrono>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "slabfill/adam.hpp"
#include "slabfill/log.hpp"
#include "slabfill/loss.hpp"
#include "slabfill/model_io.hpp"
#include "slabfill/run_config.hpp"
#include "slabfill/synth.hpp"
#include "slabfill/unet.hpp"

namespace slabfill {

constexpr uint64_t kValSeedTag = 0x76616c736574ULL;   // validation stream
constexpr uint64_t kInitSeedTag = 0x696e6974ULL;      // weight init stream

struct TrainReport {
  std::vector<int64_t> steps;
  std::vector<double> train_loss;
  std::vector<int64_t> val_steps;
  std::vector<double> val_mae;
  int64_t best_step = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  double wall_seconds = 0;  // not serialized; runs must be byte-reproducible
  nlohmann::json config_echo;

  nlohmann::json to_json() const {
    return {{"steps", steps},
            {"train_loss", train_loss},
            {"val_steps", val_steps},
            {"val_mae", val_mae},
            {"best_step", best_step},
            {"config_echo", config_echo}};
  }
};

// Fixed validation set drawn from a dedicated stream derived from the
// generator seed; triplets are min-max normalized once, up front.
inline std::vector<SlabTriplet> build_validation_set(const std::vector<LabelVolume>& pool,
                                                     const GeneratorConfig& gen_cfg,
                                                     int val_size, int threads = 1) {
  Rng rng(derive_seed(gen_cfg.seed, kValSeedTag));
  std::vector<SlabTriplet> out;
  out.reserve(val_size);
  while (static_cast<int>(out.size()) < val_size) {
    Batch b = make_batch(pool, rng, gen_cfg, threads);
    for (auto& t : b.triplets) {
      if (static_cast<int>(out.size()) >= val_size) break;
      out.push_back(minmax_normalize_triplet(t));
    }
  }
  return out;
}

// Mean intensity MAE of the imputed slice against the target.
inline double validate(const Parameters<float>& params,
                       const std::vector<SlabTriplet>& val_set, int threads = 1) {
  std::vector<double> maes(val_set.size());
  parallel_for(static_cast<int64_t>(val_set.size()), threads, [&](int64_t i) {
    const auto& t = val_set[i];
    const SliceImage pred = impute_slice(params, t.x1, t.x2, t.d1_mm, t.d2_mm);
    maes[i] = mean_absolute_error(pred, t.y);
  });
  double s = 0;
  for (double v : maes) s += v;
  return val_set.empty() ? 0.0 : s / static_cast<double>(val_set.size());
}

inline void write_train_report(const TrainReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  f << report.to_json().dump(2) << "\n";
  if (!f) throw IoFailure("write failed: " + path);
}

// Training loop: make_batch -> per-triplet min-max normalization -> forward/
// backward of the mean loss -> Adam step. Validation every val_interval
// steps selects the best parameters; stops at max_steps or after `patience`
// validations without improvement. The best model is saved to out_path and
// the report to out_path + ".report.json".
inline TrainReport train(const GeneratorConfig& gen_cfg_in, const NetworkConfig& net_cfg,
                         const TrainConfig& train_cfg,
                         const std::vector<LabelVolume>& label_pool,
                         const std::string& out_path, int threads = 1) {
  const auto t_start = std::chrono::steady_clock::now();
  GeneratorConfig gen_cfg = gen_cfg_in;
  gen_cfg.batch_size = train_cfg.batch_size;
  gen_cfg.validate();
  net_cfg.validate();
  train_cfg.validate();
  if (label_pool.empty()) throw VolumeTooSmall("train: empty label pool");

  TrainReport report;
  {
    RunConfig echo;
    echo.generator = gen_cfg;
    echo.network = net_cfg;
    echo.training = train_cfg;
    report.config_echo = run_config_to_json(echo);
  }

  Rng init_rng(derive_seed(train_cfg.seed, kInitSeedTag));
  Parameters<float> params = init_network<float>(net_cfg, init_rng);
  AdamState<float> adam = AdamState<float>::init(params);
  Parameters<float> best = params;

  if (train_cfg.max_steps > 0) {
    const auto val_set =
        build_validation_set(label_pool, gen_cfg, train_cfg.val_size, threads);
    report.best_val_mae = validate(params, val_set, threads);
    report.val_steps.push_back(0);
    report.val_mae.push_back(report.best_val_mae);
    int stale_validations = 0;

    Rng batch_rng(gen_cfg.seed);
    const int B = train_cfg.batch_size;
    for (int64_t step = 1; step <= train_cfg.max_steps; ++step) {
      Batch batch = make_batch(label_pool, batch_rng, gen_cfg, threads);
      std::vector<BasicImage<float>> inputs(B), ylin(B), targets(B);
      for (int i = 0; i < B; ++i) {
        const SlabTriplet t = minmax_normalize_triplet(batch.triplets[i]);
        inputs[i] = stack_network_input(t.x1, t.x2, t.d1_mm, t.d2_mm);
        ylin[i] = linear_interpolation(t.x1, t.x2, t.d1_mm, t.d2_mm);
        targets[i] = t.y;
      }
      ForwardCache<float> cache;
      std::vector<BasicImage<float>> residuals = forward(params, inputs, true, &cache, threads);

      std::vector<double> sample_loss(B);
      std::vector<BasicImage<float>> dres(B);
      const float inv_b = 1.f / static_cast<float>(B);
      parallel_for(B, threads, [&](int64_t i) {
        BasicImage<float> pred = ylin[i];
        for (int64_t j = 0; j < pred.size(); ++j) pred.pixels[j] += residuals[i].pixels[j];
        LossResult<float> lr = loss(pred, targets[i], train_cfg.grad_loss_weight);
        sample_loss[i] = lr.value;
        dres[i] = std::move(lr.grad);
        for (auto& v : dres[i].pixels) v *= inv_b;
      });
      double mean_loss = 0;
      for (double v : sample_loss) mean_loss += v;
      mean_loss /= B;

      Gradients<float> grads =
          backward(params, cache, dres, static_cast<std::vector<BasicImage<float>>*>(nullptr),
                   threads);
      adam_step(params, grads, adam, train_cfg);
      report.steps.push_back(step);
      report.train_loss.push_back(mean_loss);

      if (step % train_cfg.val_interval == 0 || step == train_cfg.max_steps) {
        const double v = validate(params, val_set, threads);
        report.val_steps.push_back(step);
        report.val_mae.push_back(v);
        log_info("step " + std::to_string(step) + ": train loss " +
                 std::to_string(mean_loss) + ", val MAE " + std::to_string(v));
        if (v < report.best_val_mae) {
          report.best_val_mae = v;
          report.best_step = step;
          best = params;
          stale_validations = 0;
        } else if (++stale_validations >= train_cfg.patience) {
          break;
        }
      }
    }
  }

  save_model(best, out_path);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  write_train_report(report, out_path + ".report.json");
  return report;
}

} // namespace slabfill

#endif

// slabfill command line: synthetic corpus generation, training, slice
// imputation, and evaluation. Exit codes: 0 success, 2 configuration error,
// 3 I/O or data error, 4 model/file incompatibility.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "slabfill/slabfill.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slabfill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitModel = 4;

std::vector<fs::path> list_nifti_files(const std::string& dir) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".nii") files.push_back(e.path());
  if (ec) throw IoFailure("cannot list directory: " + dir);
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<LabelVolume> load_label_pool(const std::string& dir) {
  std::vector<LabelVolume> pool;
  for (const auto& p : list_nifti_files(dir)) pool.push_back(read_label_volume(p.string()));
  if (pool.empty()) throw IoFailure("no .nii label volumes in " + dir);
  return pool;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream f(path);
  if (!f) throw IoFailure("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config_text(text);
}

IntensityVolume slice_to_volume(const SliceImage& s) {
  IntensityVolume v(VoxelGeometry({s.width, 1, s.height},
                                  {s.pixel_spacing[1], 1.0, s.pixel_spacing[0]}),
                    s.channels);
  for (int c = 0; c < s.channels; ++c)
    for (int r = 0; r < s.height; ++r)
      for (int col = 0; col < s.width; ++col)
        v.at(c, col, 0, r) = s.at(c, r, col);
  return v;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoFailure("write failed: " + path);
}

int cmd_generate(const std::string& labels_dir, const std::string& out_dir, int count,
                 uint64_t seed, const std::string& config_path, int threads) {
  RunConfig cfg = load_run_config(config_path);
  GeneratorConfig gen = cfg.generator;
  gen.seed = seed;
  gen.validate();
  const auto files = list_nifti_files(labels_dir);
  if (files.empty()) throw IoFailure("no .nii label volumes in " + labels_dir);
  std::vector<LabelVolume> pool;
  for (const auto& p : files) pool.push_back(read_label_volume(p.string()));

  fs::create_directories(out_dir);
  json manifest;
  manifest["seed"] = seed;
  manifest["count"] = count;
  manifest["config"] = config_json::generator_to_json(gen);
  manifest["cases"] = json::array();

  for (int i = 0; i < count; ++i) {
    const uint64_t case_seed = derive_seed(seed, static_cast<uint64_t>(i));
    Rng rng(case_seed);
    const auto pool_idx = rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1);
    const IntensityVolume vol = synthesize_volume(pool[pool_idx], rng, gen, threads);
    char name[64];
    std::snprintf(name, sizeof(name), "vol_%04d.nii", i);
    const std::string vol_path = (fs::path(out_dir) / name).string();
    write_nifti(vol, vol_path);

    const SlabTriplet t = sample_triplet(vol, rng, gen);
    json tj;
    for (const auto& [tag, img] : {std::pair{"x1", &t.x1}, {"x2", &t.x2}, {"y", &t.y}}) {
      std::snprintf(name, sizeof(name), "triplet_%04d_%s.nii", i, tag);
      const std::string p = (fs::path(out_dir) / name).string();
      write_nifti(slice_to_volume(*img), p);
      tj[tag] = name;
    }
    tj["d1_mm"] = t.d1_mm;
    tj["d2_mm"] = t.d2_mm;
    std::snprintf(name, sizeof(name), "vol_%04d.nii", i);
    manifest["cases"].push_back({{"index", i},
                                 {"seed", case_seed},
                                 {"source", files[pool_idx].filename().string()},
                                 {"volume", name},
                                 {"triplet", tj}});
    log_info("generated " + vol_path);
  }
  write_json_file(manifest, (fs::path(out_dir) / "manifest.json").string());
  return kExitOk;
}

int cmd_train(const std::string& labels_dir, const std::string& out_path,
              const std::string& config_path, bool desk_scale, int threads) {
  RunConfig cfg = load_run_config(config_path);
  if (desk_scale) {
    cfg.network.levels = 4;
    cfg.network.base_channels = 8;
    cfg.generator.slice_size = 64;
    cfg.training.learning_rate = 1e-4;
  }
  const auto pool = load_label_pool(labels_dir);
  const TrainReport report =
      train(cfg.generator, cfg.network, cfg.training, pool, out_path, threads);
  if (!report.val_mae.empty())
    std::cout << "best step " << report.best_step << ", best validation MAE "
              << report.best_val_mae << "\n";
  std::cout << "model: " << out_path << "\nreport: " << out_path << ".report.json\n";
  return kExitOk;
}

int cmd_impute(const std::string& model_path, const std::string& input_path,
               const std::string& coords_path, double spacing, const std::string& out_path,
               int threads) {
  const Parameters<float> params = load_model(model_path);
  const IntensityVolume input = read_intensity_volume(input_path);
  std::vector<double> coords;
  const std::vector<double>* coords_ptr = nullptr;
  if (!coords_path.empty()) {
    std::ifstream f(coords_path);
    if (!f) throw IoFailure("cannot open coords: " + coords_path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw ConfigError("coords file is not valid JSON: " + std::string(e.what()));
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "ap_coords_mm") coords = value.get<std::vector<double>>();
      else throw ConfigError("unknown coords key: " + key);
    }
    coords_ptr = &coords;
  }
  const ReconstructionStack stack = stack_from_volume(input, coords_ptr);
  const IntensityVolume out = impute_volume(params, stack, spacing, threads);
  write_nifti(out, out_path);
  std::cout << "imputed " << out.geometry.dims[1] << " planes at " << spacing
            << " mm -> " << out_path << "\n";
  return kExitOk;
}

int cmd_evaluate_oracle(const std::string& model_path, const std::string& labels_dir,
                        int thickness, int volumes, uint64_t seed,
                        const std::string& config_path, const std::string& json_path,
                        int threads) {
  const Parameters<float> params = load_model(model_path);
  const auto pool = load_label_pool(labels_dir);
  RunConfig cfg = load_run_config(config_path);
  MetricReport report =
      oracle_benchmark(params, pool, cfg.generator, thickness, volumes, seed, threads);
  report.config_echo["generator"] = config_json::generator_to_json(cfg.generator);
  std::cout << report.to_table();
  if (!json_path.empty()) write_json_file(report.to_json(), json_path);
  return kExitOk;
}

int cmd_evaluate_dice(const std::string& pred_path, const std::string& gold_path,
                      const std::string& labels_csv, const std::string& json_path) {
  const LabelVolume pred = read_label_volume(pred_path);
  const LabelVolume gold = read_label_volume(gold_path);
  std::vector<int> labels;
  if (!labels_csv.empty()) {
    std::stringstream ss(labels_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
      try {
        labels.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad label id: " + tok);
      }
  } else {
    // default: non-background labels present in either volume
    for (int l : gold.label_set())
      if (l != 0) labels.push_back(l);
    for (int l : pred.label_set())
      if (l != 0 && std::find(labels.begin(), labels.end(), l) == labels.end())
        labels.push_back(l);
    std::sort(labels.begin(), labels.end());
  }
  json j;
  j["per_label"] = json::object();
  std::printf("%8s %10s\n", "label", "dice");
  for (int l : labels) {
    const double v = dice(pred, gold, l);
    std::printf("%8d %10.6f\n", l, v);
    j["per_label"][std::to_string(l)] = v;
  }
  if (!json_path.empty()) write_json_file(j, json_path);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"slabfill: slice imputation for anisotropic coronal reconstructions"};
  app.require_subcommand(1);
  int threads = 1;  // --threads 1 guarantees bit-exact reproducibility

  std::string labels_dir, out_path, config_path, model_path, input_path, coords_path;
  std::string pred_path, gold_path, labels_csv, json_path;
  int count = 1, thickness = 8, volumes = 10;
  uint64_t seed = 0;
  double spacing = 1.0;
  bool desk_scale = false;

  auto* gen = app.add_subcommand("generate", "write synthetic volumes and triplet previews");
  gen->add_option("--threads", threads, "worker thread budget")->check(CLI::PositiveNumber);
  gen->add_option("--labels", labels_dir, "directory of .nii label volumes")->required();
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--count", count, "number of synthetic volumes")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "base seed");
  gen->add_option("--config", config_path, "JSON run config");

  auto* tr = app.add_subcommand("train", "train the residual imputation network");
  tr->add_option("--threads", threads, "worker thread budget")->check(CLI::PositiveNumber);
  tr->add_option("--labels", labels_dir, "directory of .nii label volumes")->required();
  tr->add_option("--out", out_path, "output model path")->required();
  tr->add_option("--config", config_path, "JSON run config");
  tr->add_flag("--desk-scale", desk_scale,
               "small profile: levels 4, base 8, 64x64 slices, lr 1e-4");

  auto* im = app.add_subcommand("impute", "impute an isotropic volume from a slice stack");
  im->add_option("--threads", threads, "worker thread budget")->check(CLI::PositiveNumber);
  im->add_option("--model", model_path, "trained model file")->required();
  im->add_option("--input", input_path, "stack volume (.nii)")->required();
  im->add_option("--coords", coords_path, "sidecar JSON {\"ap_coords_mm\": [..]}");
  im->add_option("--spacing", spacing, "target AP spacing in mm")->check(CLI::PositiveNumber);
  im->add_option("--out", out_path, "output volume (.nii)")->required();

  auto* ev = app.add_subcommand("evaluate", "evaluation utilities");
  ev->require_subcommand(1);
  auto* oracle = ev->add_subcommand("oracle", "synthetic-oracle benchmark vs linear baseline");
  oracle->add_option("--threads", threads, "worker thread budget")->check(CLI::PositiveNumber);
  oracle->add_option("--model", model_path, "trained model file")->required();
  oracle->add_option("--labels", labels_dir, "directory of .nii label volumes")->required();
  oracle->add_option("--thickness", thickness, "slab thickness in mm")->check(CLI::PositiveNumber);
  oracle->add_option("--volumes", volumes, "held-out volume count")->check(CLI::PositiveNumber);
  oracle->add_option("--seed", seed, "benchmark seed");
  oracle->add_option("--config", config_path, "JSON run config");
  oracle->add_option("--json", json_path, "write the report as JSON");

  auto* dc = ev->add_subcommand("dice", "per-label Dice between two segmentations");
  dc->add_option("--pred", pred_path, "predicted labels (.nii)")->required();
  dc->add_option("--gold", gold_path, "reference labels (.nii)")->required();
  dc->add_option("--labels", labels_csv, "comma-separated label ids (default: all non-zero)");
  dc->add_option("--json", json_path, "write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(labels_dir, out_path, count, seed, config_path, threads);
    if (tr->parsed()) return cmd_train(labels_dir, out_path, config_path, desk_scale, threads);
    if (im->parsed())
      return cmd_impute(model_path, input_path, coords_path, spacing, out_path, threads);
    if (oracle->parsed())
      return cmd_evaluate_oracle(model_path, labels_dir, thickness, volumes, seed, config_path,
                                 json_path, threads);
    if (dc->parsed()) return cmd_evaluate_dice(pred_path, gold_path, labels_csv, json_path);
  } catch (const ConfigError& e) {
    log_error(e.what());
    return kExitConfig;
  } catch (const BadMagic& e) {
    log_error(e.what());
    return kExitModel;
  } catch (const VersionMismatch& e) {
    log_error(e.what());
    return kExitModel;
  } catch (const ShapeMismatchWithConfig& e) {
    log_error(e.what());
    return kExitModel;
  } catch (const SlabfillError& e) {
    log_error(e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    log_error(std::string("unexpected: ") + e.what());
    return 1;
  }
  return kExitOk;
}

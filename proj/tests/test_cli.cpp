#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "slabfill/model_io.hpp"
#include "slabfill/nifti.hpp"
#include "slabfill/unet.hpp"
#include "testutil.hpp"

using namespace slabfill;
using nlohmann::json;

namespace {

const std::string kCli = SLABFILL_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_labels_dir(const std::string& dir, int count) {
  for (int i = 0; i < count; ++i)
    write_nifti(testutil::make_phantom_labels({20, 40, 20}, 70 + i),
                dir + "/labels_" + std::to_string(i) + ".nii");
}

void write_tiny_config(const std::string& path, int max_steps) {
  json j = {{"generator", {{"slice_size", 16}}},
            {"network", {{"levels", 2}, {"base_channels", 2}}},
            {"training",
             {{"max_steps", max_steps},
              {"batch_size", 2},
              {"val_interval", 2},
              {"val_size", 2},
              {"patience", 99},
              {"learning_rate", 1e-4}}}};
  std::ofstream f(path);
  f << j.dump();
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  json j;
  f >> j;
  return j;
}

} // namespace

TEST_CASE("help exits cleanly") {
  CHECK(run("--help") == 0);
  CHECK(run("generate --help") == 0);
}

TEST_CASE("missing required flags and unknown keys exit 2") {
  CHECK(run("generate") == 2);
  testutil::TempDir tmp("cli");
  write_labels_dir(tmp.path().string(), 1);
  std::ofstream bad(tmp.file("bad.json"));
  bad << R"({"generator": {"not_a_key": 1}})";
  bad.close();
  CHECK(run("generate --labels " + tmp.path().string() + " --out " + tmp.file("out") +
            " --count 1 --seed 1 --config " + tmp.file("bad.json")) == 2);
}

TEST_CASE("empty label directories exit 3") {
  testutil::TempDir tmp("cli");
  std::filesystem::create_directories(tmp.file("empty"));
  CHECK(run("generate --labels " + tmp.file("empty") + " --out " + tmp.file("out") +
            " --count 1 --seed 1") == 3);
  CHECK(run("train --labels " + tmp.file("empty") + " --out " + tmp.file("m.slabfill")) == 3);
}

TEST_CASE("generate is deterministic and echoes the thickness range") {
  testutil::TempDir tmp("cli");
  write_labels_dir(tmp.path().string(), 2);
  std::ofstream cf(tmp.file("gen.json"));
  cf << R"({"generator": {"slice_size": 16}})";  // phantoms are small in-plane
  cf.close();
  const std::string base = "generate --labels " + tmp.path().string() +
                           " --count 2 --seed 5 --config " + tmp.file("gen.json");
  REQUIRE(run(base + " --out " + tmp.file("a")) == 0);
  REQUIRE(run(base + " --out " + tmp.file("b")) == 0);
  for (const std::string name :
       {"vol_0000.nii", "vol_0001.nii", "triplet_0000_x1.nii", "manifest.json"})
    CHECK(testutil::files_identical(tmp.file("a/" + name), tmp.file("b/" + name)));

  const json manifest = read_json(tmp.file("a/manifest.json"));
  CHECK(manifest["config"]["thickness_min_mm"] == 2);
  CHECK(manifest["config"]["thickness_max_mm"] == 12);
  CHECK(manifest["cases"].size() == 2);
}

TEST_CASE("train writes a loadable model and report") {
  testutil::TempDir tmp("cli");
  write_labels_dir(tmp.path().string(), 1);
  write_tiny_config(tmp.file("cfg.json"), 2);
  REQUIRE(run("train --labels " + tmp.path().string() + " --out " + tmp.file("m.slabfill") +
              " --config " + tmp.file("cfg.json")) == 0);
  const auto params = load_model(tmp.file("m.slabfill"));
  CHECK(params.config.levels == 2);
  const json report = read_json(tmp.file("m.slabfill.report.json"));
  CHECK(report["steps"].size() == 2);
  CHECK(report["config_echo"]["training"]["batch_size"] == 2);
}

TEST_CASE("impute with aligned spacing reproduces the input bit-exactly") {
  testutil::TempDir tmp("cli");
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  Rng rng(9);
  auto params = init_network<float>(cfg, rng);
  for (auto& t : params.tensors)
    if (t.name.starts_with("head."))
      for (auto& v : t.v) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  save_model(params, tmp.file("m.slabfill"));

  IntensityVolume stack(VoxelGeometry({16, 5, 16}, {1.0, 2.0, 1.0}), 1);
  for (auto& v : stack.voxels) v = static_cast<float>(rng.uniform());
  write_nifti(stack, tmp.file("in.nii"));

  REQUIRE(run("impute --model " + tmp.file("m.slabfill") + " --input " + tmp.file("in.nii") +
              " --spacing 2.0 --out " + tmp.file("out.nii")) == 0);
  CHECK(testutil::files_identical(tmp.file("in.nii"), tmp.file("out.nii")));
}

TEST_CASE("impute handles three-channel stacks and sidecar coordinates") {
  testutil::TempDir tmp("cli");
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  Rng rng(10);
  save_model(init_network<float>(cfg, rng), tmp.file("m.slabfill"));

  IntensityVolume stack(VoxelGeometry({16, 4, 16}, {1.0, 1.0, 1.0}), 3);
  for (auto& v : stack.voxels) v = static_cast<float>(rng.uniform());
  write_nifti(stack, tmp.file("rgb.nii"));
  std::ofstream coords(tmp.file("coords.json"));
  coords << R"({"ap_coords_mm": [0, 4, 9, 15]})";
  coords.close();

  REQUIRE(run("impute --model " + tmp.file("m.slabfill") + " --input " + tmp.file("rgb.nii") +
              " --coords " + tmp.file("coords.json") + " --out " + tmp.file("out.nii")) == 0);
  const auto out = read_intensity_volume(tmp.file("out.nii"));
  CHECK(out.channels == 3);
  CHECK(out.geometry.dims[1] == 16);  // 0..15 at 1 mm
}

TEST_CASE("corrupted model files exit 4") {
  testutil::TempDir tmp("cli");
  std::ofstream f(tmp.file("m.slabfill"), std::ios::binary);
  f << "NOTAMODELxxxxxxxxxxxxxxxxxxx";
  f.close();
  IntensityVolume stack(VoxelGeometry({16, 4, 16}, {1.0, 1.0, 1.0}), 1);
  write_nifti(stack, tmp.file("in.nii"));
  CHECK(run("impute --model " + tmp.file("m.slabfill") + " --input " + tmp.file("in.nii") +
            " --out " + tmp.file("out.nii")) == 4);
}

TEST_CASE("dice on identical files reports all ones") {
  testutil::TempDir tmp("cli");
  write_nifti(testutil::make_phantom_labels({12, 16, 12}, 80), tmp.file("seg.nii"));
  REQUIRE(run("evaluate dice --pred " + tmp.file("seg.nii") + " --gold " +
              tmp.file("seg.nii") + " --json " + tmp.file("dice.json")) == 0);
  const json j = read_json(tmp.file("dice.json"));
  REQUIRE(!j["per_label"].empty());
  for (const auto& [label, value] : j["per_label"].items()) CHECK(value == 1.0);
}

TEST_CASE("oracle evaluation with a zero-residual model is degenerate") {
  testutil::TempDir tmp("cli");
  write_labels_dir(tmp.path().string(), 1);
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  Rng rng(11);
  save_model(init_network<float>(cfg, rng), tmp.file("m.slabfill"));
  std::ofstream cf(tmp.file("cfg.json"));
  cf << R"({"generator": {"slice_size": 16}})";
  cf.close();
  REQUIRE(run("evaluate oracle --model " + tmp.file("m.slabfill") + " --labels " +
              tmp.path().string() + " --thickness 8 --volumes 2 --seed 3 --config " +
              tmp.file("cfg.json") + " --json " + tmp.file("oracle.json")) == 0);
  const json j = read_json(tmp.file("oracle.json"));
  CHECK(j["wilcoxon"]["p_two_sided"] == 1.0);
  CHECK(j["wilcoxon"]["degenerate"] == true);
  CHECK(j["cases"].size() == 2);
}

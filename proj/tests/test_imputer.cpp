#include <catch2/catch_amalgamated.hpp>

#include "slabfill/imputer.hpp"
#include "slabfill/rng.hpp"
#include "testutil.hpp"

using namespace slabfill;

namespace {

SliceImage random_slice(int c, int h, int w, Rng& rng) {
  SliceImage s(c, h, w);
  for (auto& v : s.pixels) v = static_cast<float>(rng.uniform());
  return s;
}

ReconstructionStack random_stack(std::vector<double> coords, int c, int h, int w,
                                 uint64_t seed) {
  Rng rng(seed);
  ReconstructionStack st;
  st.ap_coords_mm = std::move(coords);
  for (size_t i = 0; i < st.ap_coords_mm.size(); ++i)
    st.slices.push_back(random_slice(c, h, w, rng));
  st.validate();
  return st;
}

Parameters<float> live_params(int levels, int base, uint64_t seed) {
  NetworkConfig cfg;
  cfg.levels = levels;
  cfg.base_channels = base;
  Rng rng(seed);
  auto p = init_network<float>(cfg, rng);
  for (auto& t : p.tensors)
    if (t.name.starts_with("head."))
      for (auto& v : t.v) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  return p;
}

} // namespace

TEST_CASE("bracket arithmetic and passthrough detection") {
  const std::vector<double> coords{0, 8, 16};
  const Bracket b = bracket_slices(coords, 5);
  CHECK_FALSE(b.passthrough);
  CHECK(b.i == 0);
  CHECK(b.j == 1);
  CHECK(b.d1 == Catch::Approx(5.0));
  CHECK(b.d2 == Catch::Approx(3.0));

  const Bracket pt = bracket_slices(coords, 8);
  CHECK(pt.passthrough);
  CHECK(pt.i == 1);

  const Bracket near = bracket_slices(coords, 8.0 + 5e-7);
  CHECK(near.passthrough);
  CHECK(near.i == 1);

  CHECK_THROWS_AS(bracket_slices(coords, -1.0), OutOfRange);
  CHECK_THROWS_AS(bracket_slices(coords, 16.5), OutOfRange);
}

TEST_CASE("plans cover the AP range without extrapolation") {
  auto st = random_stack({0, 8}, 1, 16, 16, 1);
  const auto p1 = plan(st, 1.0);
  REQUIRE(p1.target_coords_mm.size() == 9);
  CHECK(p1.target_coords_mm.front() == 0.0);
  CHECK(p1.target_coords_mm.back() == 8.0);
  CHECK(p1.brackets.front().passthrough);
  CHECK(p1.brackets.back().passthrough);

  const auto p8 = plan(st, 8.0);
  REQUIRE(p8.target_coords_mm.size() == 2);
  CHECK(p8.brackets[0].passthrough);
  CHECK(p8.brackets[1].passthrough);

  auto st75 = random_stack({0, 7.5}, 1, 16, 16, 2);
  const auto p75 = plan(st75, 1.0);
  REQUIRE(p75.target_coords_mm.size() == 8);  // 7.5 itself is excluded
  CHECK(p75.target_coords_mm.back() == 7.0);
}

TEST_CASE("stack validation rejects malformed stacks") {
  Rng rng(3);
  ReconstructionStack st;
  st.slices.push_back(random_slice(1, 8, 8, rng));
  st.ap_coords_mm = {0.0};
  CHECK_THROWS_AS(st.validate(), InvalidStack);  // fewer than 2 slices

  st.slices.push_back(random_slice(1, 8, 8, rng));
  st.ap_coords_mm = {0.0, 0.0};
  CHECK_THROWS_AS(st.validate(), InvalidStack);  // not strictly increasing

  st.ap_coords_mm = {0.0, 60.0};
  CHECK_THROWS_AS(st.validate(), InvalidStack);  // gap above 50 mm

  st.ap_coords_mm = {0.0, 8.0};
  st.slices[1] = random_slice(3, 8, 8, rng);
  CHECK_THROWS_AS(st.validate(), ChannelMismatch);
}

TEST_CASE("constant stacks impute to the same constant regardless of weights") {
  const auto params = live_params(2, 4, 11);
  ReconstructionStack st;
  st.ap_coords_mm = {0, 6, 12};
  for (int i = 0; i < 3; ++i) {
    SliceImage s(1, 16, 16);
    std::fill(s.pixels.begin(), s.pixels.end(), 0.37f);
    st.slices.push_back(s);
  }
  st.validate();
  const IntensityVolume out = impute_volume(params, st, 1.0);
  for (float v : out.voxels) CHECK(v == 0.37f);
}

TEST_CASE("zero-residual imputation equals the linear interpolation of the stack") {
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  Rng rng(12);
  const auto params = init_network<float>(cfg, rng);  // zero head
  const auto st = random_stack({0, 5, 9}, 1, 16, 16, 13);
  const IntensityVolume out = impute_volume(params, st, 1.0);
  const auto p = plan(st, 1.0);
  for (size_t k = 0; k < p.brackets.size(); ++k) {
    const auto& b = p.brackets[k];
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        const float got = out.at(0, c, static_cast<int>(k), r);
        if (b.passthrough) {
          CHECK(got == st.slices[b.i].at(0, r, c));
        } else {
          const double w1 = b.d2 / (b.d1 + b.d2), w2 = b.d1 / (b.d1 + b.d2);
          const double expected =
              w1 * st.slices[b.i].at(0, r, c) + w2 * st.slices[b.j].at(0, r, c);
          CHECK(got == Catch::Approx(expected).margin(2e-5));
        }
      }
  }
}

TEST_CASE("passthrough planes reproduce the inputs bit-exactly") {
  const auto params = live_params(2, 4, 14);
  const auto st = random_stack({0, 4, 10}, 1, 16, 16, 15);
  const IntensityVolume out = impute_volume(params, st, 2.0);  // targets 0,2,4,6,8,10
  const auto p = plan(st, 2.0);
  for (size_t k = 0; k < p.brackets.size(); ++k) {
    if (!p.brackets[k].passthrough) continue;
    const auto& src = st.slices[p.brackets[k].i];
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(out.at(0, c, static_cast<int>(k), r) == src.at(0, r, c));
  }
}

TEST_CASE("three-channel imputation equals per-channel restacking bit-exactly") {
  const auto params = live_params(2, 4, 16);
  const auto rgb = random_stack({0, 5, 11}, 3, 16, 16, 17);
  const IntensityVolume joint = impute_volume(params, rgb, 1.0);

  for (int c = 0; c < 3; ++c) {
    ReconstructionStack mono;
    mono.ap_coords_mm = rgb.ap_coords_mm;
    for (const auto& s : rgb.slices) {
      SliceImage m(1, s.height, s.width, s.pixel_spacing);
      std::copy_n(s.plane(c), s.plane_size(), m.plane(0));
      mono.slices.push_back(std::move(m));
    }
    mono.validate();
    const IntensityVolume single = impute_volume(params, mono, 1.0);
    for (int k = 0; k < joint.geometry.dims[1]; ++k)
      for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col)
          CHECK(joint.at(c, col, k, r) == single.at(0, col, k, r));
  }
}

TEST_CASE("output geometry never extends past the terminal slices") {
  const auto params = live_params(2, 4, 18);
  const auto st = random_stack({0, 7.5}, 1, 16, 16, 19);
  const IntensityVolume out = impute_volume(params, st, 1.0);
  CHECK(out.geometry.dims[1] == 8);  // 0..7; 7.5 is inside but not a target
  CHECK(out.geometry.spacing[1] == 1.0);
  CHECK(out.geometry.dims[0] == 16);
  CHECK(out.geometry.dims[2] == 16);
}

TEST_CASE("imputed voxels always stay in [0,1]") {
  auto params = live_params(2, 4, 20);
  for (auto& t : params.tensors)
    if (t.name.starts_with("head."))
      for (auto& v : t.v) v *= 50.f;  // force the clamp
  const auto st = random_stack({0, 6}, 1, 16, 16, 21);
  const IntensityVolume out = impute_volume(params, st, 1.0);
  for (float v : out.voxels) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("thread count does not change imputation results") {
  const auto params = live_params(2, 4, 22);
  const auto st = random_stack({0, 5, 9, 14}, 1, 16, 16, 23);
  const IntensityVolume a = impute_volume(params, st, 1.0, 1);
  const IntensityVolume b = impute_volume(params, st, 1.0, 2);
  CHECK(a.voxels == b.voxels);
}

TEST_CASE("zero-residual models reconstruct AP-linear volumes") {
  IntensityVolume vol(VoxelGeometry({16, 25, 16}, {1, 1, 1}), 1);
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 25; ++y)
      for (int x = 0; x < 16; ++x) vol.at(0, x, y, z) = 0.1f + 0.03f * y;
  ReconstructionStack st;
  for (int k = 0; k <= 24; k += 8) {
    st.ap_coords_mm.push_back(k);
    st.slices.push_back(extract_coronal_slice(vol, k));
  }
  st.validate();
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  Rng rng(30);
  const auto params = init_network<float>(cfg, rng);
  const IntensityVolume out = impute_volume(params, st, 1.0);
  REQUIRE(out.geometry.dims[1] == 25);
  for (int k = 0; k < 25; ++k)
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(out.at(0, c, k, r) == Catch::Approx(vol.at(0, c, k, r)).margin(1e-5));
}

TEST_CASE("stack_from_volume infers coordinates from spacing") {
  Rng rng(24);
  IntensityVolume vol(VoxelGeometry({8, 5, 8}, {1.0, 4.0, 1.0}), 1);
  for (auto& v : vol.voxels) v = static_cast<float>(rng.uniform());
  const auto st = stack_from_volume(vol);
  REQUIRE(st.slices.size() == 5);
  CHECK(st.ap_coords_mm == std::vector<double>{0, 4, 8, 12, 16});
  for (int k = 0; k < 5; ++k)
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c)
        CHECK(st.slices[k].at(0, r, c) == vol.at(0, c, k, r));

  const std::vector<double> wrong{0, 1};
  CHECK_THROWS_AS(stack_from_volume(vol, &wrong), InvalidStack);
}

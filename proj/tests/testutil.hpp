#ifndef SLABFILL_TESTUTIL_HPP
#define SLABFILL_TESTUTIL_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "slabfill/rng.hpp"
#include "slabfill/volume.hpp"

namespace testutil {

// Deterministic "anatomy-like" label volume: an ellipsoid partitioned into
// smooth curved regions plus a distinct core, on a 1 mm grid. Gives the
// synthesis chain structured boundaries to work with.
inline slabfill::LabelVolume make_phantom_labels(std::array<int, 3> dims, uint64_t seed,
                                                 int n_labels = 6) {
  slabfill::Rng rng(seed);
  const double f1 = rng.uniform(2.0, 4.0);
  const double f2 = rng.uniform(2.0, 4.0);
  const double f3 = rng.uniform(2.0, 4.0);
  const double p1 = rng.uniform(0.0, 6.283);
  const double p2 = rng.uniform(0.0, 6.283);
  const double p3 = rng.uniform(0.0, 6.283);
  slabfill::LabelVolume lv(slabfill::VoxelGeometry(dims, {1.0, 1.0, 1.0}));
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double u = 2.0 * x / (dims[0] - 1) - 1.0;
        const double v = 2.0 * y / (dims[1] - 1) - 1.0;
        const double w = 2.0 * z / (dims[2] - 1) - 1.0;
        const double r2 = (u * u) / 0.81 + (v * v) / 0.9 + (w * w) / 0.81;
        if (r2 > 1.0) continue;  // background 0
        const double s = std::sin(f1 * u + p1) + std::cos(f2 * v + p2) +
                         std::sin(f3 * w + p3 + 2.0 * u * v);
        int l = 1 + static_cast<int>(std::floor((s + 3.0) / 6.0 * (n_labels - 1)));
        l = std::clamp(l, 1, n_labels - 1);
        if (r2 < 0.22) l = n_labels;
        lv.at(x, y, z) = static_cast<uint8_t>(l);
      }
  return lv;
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("slabfill_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return sa == sb;
}

} // namespace testutil

#endif

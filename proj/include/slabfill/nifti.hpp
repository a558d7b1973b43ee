#ifndef SLABFILL_NIFTI_HPP
#define SLABFILL_NIFTI_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "slabfill/errors.hpp"
#include "slabfill/log.hpp"
#include "slabfill/volume.hpp"

namespace slabfill {

// Deliberately strict NIfTI-1 subset: single-file "n+1" layout, little-endian,
// datatype 2 (uint8) or 16 (float32), dim[0] in {3,4}. Anything else errors
// loudly instead of guessing.
namespace nifti {

constexpr int16_t kDatatypeUint8 = 2;
constexpr int16_t kDatatypeFloat32 = 16;

struct Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Header) == 348, "nifti_1 header must be 348 bytes");

inline Header make_header(const VoxelGeometry& g, int channels, int16_t datatype) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = channels > 1 ? 4 : 3;
  h.dim[1] = static_cast<int16_t>(g.dims[0]);
  h.dim[2] = static_cast<int16_t>(g.dims[1]);
  h.dim[3] = static_cast<int16_t>(g.dims[2]);
  h.dim[4] = static_cast<int16_t>(channels > 1 ? channels : 1);
  h.dim[5] = h.dim[6] = h.dim[7] = 1;
  h.datatype = datatype;
  h.bitpix = datatype == kDatatypeUint8 ? 8 : 32;
  h.pixdim[0] = 1.f;
  h.pixdim[1] = static_cast<float>(g.spacing[0]);
  h.pixdim[2] = static_cast<float>(g.spacing[1]);
  h.pixdim[3] = static_cast<float>(g.spacing[2]);
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.scl_inter = 0.f;
  h.xyzt_units = 2;  // mm
  std::strncpy(h.descrip, "slabfill", sizeof(h.descrip) - 1);
  h.sform_code = 1;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

inline void write_payload(std::ofstream& f, const Header& h, const void* data, size_t bytes,
                          const std::string& path) {
  f.write(reinterpret_cast<const char*>(&h), sizeof(Header));
  const char pad[4] = {0, 0, 0, 0};  // empty extension indicator
  f.write(pad, 4);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  f.flush();
  if (!f) throw IoFailure("write failed: " + path);
}

} // namespace nifti

inline void write_nifti(const IntensityVolume& vol, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  const auto h = nifti::make_header(vol.geometry, vol.channels, nifti::kDatatypeFloat32);
  nifti::write_payload(f, h, vol.voxels.data(), vol.voxels.size() * sizeof(float), path);
}

inline void write_nifti(const LabelVolume& vol, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  const auto h = nifti::make_header(vol.geometry, 1, nifti::kDatatypeUint8);
  nifti::write_payload(f, h, vol.voxels.data(), vol.voxels.size(), path);
}

using NiftiVolume = std::variant<IntensityVolume, LabelVolume>;

namespace nifti {

struct RawFile {
  Header header;
  VoxelGeometry geometry;
  int channels;
  std::vector<char> payload;
};

inline RawFile read_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);
  RawFile r{};
  f.read(reinterpret_cast<char*>(&r.header), sizeof(Header));
  if (f.gcount() != sizeof(Header))
    throw MalformedHeader("file shorter than a nifti-1 header: " + path);
  const Header& h = r.header;
  if (h.sizeof_hdr != 348)
    throw MalformedHeader("sizeof_hdr is " + std::to_string(h.sizeof_hdr) + ", expected 348");
  if (std::memcmp(h.magic, "n+1", 4) != 0)
    throw MalformedHeader("magic is not \"n+1\" (single-file layout required)");
  if (h.datatype != kDatatypeUint8 && h.datatype != kDatatypeFloat32)
    throw UnsupportedDatatype("datatype code " + std::to_string(h.datatype) +
                              " not supported (only 2 and 16)");
  if (h.dim[0] != 3 && h.dim[0] != 4)
    throw MalformedHeader("dim[0] is " + std::to_string(h.dim[0]) + ", expected 3 or 4");
  for (int a = 1; a <= 3; ++a) {
    if (h.dim[a] < 1) throw MalformedHeader("dim[" + std::to_string(a) + "] < 1");
    if (!(h.pixdim[a] > 0.f))
      throw MalformedHeader("pixdim[" + std::to_string(a) + "] must be positive");
  }
  r.geometry = VoxelGeometry({h.dim[1], h.dim[2], h.dim[3]},
                             {h.pixdim[1], h.pixdim[2], h.pixdim[3]});
  r.channels = h.dim[0] == 4 ? std::max<int>(1, h.dim[4]) : 1;

  if (h.sform_code != 1 || h.srow_x[1] != 0 || h.srow_x[2] != 0 || h.srow_y[0] != 0 ||
      h.srow_y[2] != 0 || h.srow_z[0] != 0 || h.srow_z[1] != 0)
    log_warn("non-diagonal or non-sform orientation in " + path +
             " ignored; axes taken as stored");

  const int64_t offset = static_cast<int64_t>(h.vox_offset);
  if (offset < 348) throw MalformedHeader("vox_offset < 348");
  f.seekg(offset, std::ios::beg);
  const int64_t count = r.geometry.voxel_count() * r.channels;
  const int64_t bytes = count * (h.datatype == kDatatypeUint8 ? 1 : 4);
  r.payload.resize(static_cast<size_t>(bytes));
  f.read(r.payload.data(), bytes);
  if (f.gcount() != bytes)
    throw TruncatedData("expected " + std::to_string(bytes) + " payload bytes, got " +
                        std::to_string(f.gcount()) + ": " + path);
  return r;
}

} // namespace nifti

// Datatype 2 single-channel files load as labels; everything else loads as
// intensities (uint8 mapped to [0,1] by /255, then scl applied if slope != 0).
inline NiftiVolume read_nifti(const std::string& path) {
  auto raw = nifti::read_raw(path);
  const auto& h = raw.header;
  if (h.datatype == nifti::kDatatypeUint8 && raw.channels == 1) {
    LabelVolume lv(raw.geometry);
    std::memcpy(lv.voxels.data(), raw.payload.data(), raw.payload.size());
    if (h.scl_slope != 0.f && (h.scl_slope != 1.f || h.scl_inter != 0.f))
      log_warn("scl_slope/scl_inter ignored for label volume: " + path);
    return lv;
  }
  IntensityVolume iv(raw.geometry, raw.channels);
  const int64_t n = static_cast<int64_t>(iv.voxels.size());
  if (h.datatype == nifti::kDatatypeUint8) {
    const auto* src = reinterpret_cast<const uint8_t*>(raw.payload.data());
    for (int64_t i = 0; i < n; ++i) iv.voxels[i] = src[i] / 255.f;
  } else {
    std::memcpy(iv.voxels.data(), raw.payload.data(), raw.payload.size());
  }
  if (h.scl_slope != 0.f && (h.scl_slope != 1.f || h.scl_inter != 0.f))
    for (auto& v : iv.voxels) v = v * h.scl_slope + h.scl_inter;
  return iv;
}

inline LabelVolume read_label_volume(const std::string& path) {
  auto v = read_nifti(path);
  if (!std::holds_alternative<LabelVolume>(v))
    throw UnsupportedDatatype("expected a single-channel 8-bit label volume: " + path);
  return std::get<LabelVolume>(std::move(v));
}

inline IntensityVolume read_intensity_volume(const std::string& path) {
  auto v = read_nifti(path);
  if (std::holds_alternative<IntensityVolume>(v))
    return std::get<IntensityVolume>(std::move(v));
  // single-channel uint8: reinterpret labels as intensities on [0,1]
  const auto& lv = std::get<LabelVolume>(v);
  IntensityVolume iv(lv.geometry, 1);
  for (size_t i = 0; i < lv.voxels.size(); ++i) iv.voxels[i] = lv.voxels[i] / 255.f;
  return iv;
}

} // namespace slabfill

#endif

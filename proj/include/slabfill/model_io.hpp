#ifndef SLABFILL_MODEL_IO_HPP
#define SLABFILL_MODEL_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "slabfill/errors.hpp"
#include "slabfill/unet.hpp"

namespace slabfill {

// Model container: 8-byte magic "SLABFILL", u32 format version, length-
// prefixed JSON of the NetworkConfig, then each tensor in canonical order as
// (u32 name length, name, u32 rank, u32 dims, float32 little-endian data).
namespace model_io {

constexpr char kMagic[8] = {'S', 'L', 'A', 'B', 'F', 'I', 'L', 'L'};
constexpr uint32_t kVersion = 1;

inline nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"group_norm_groups", c.group_norm_groups},
          {"leaky_slope", c.leaky_slope}};
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "levels") c.levels = value.get<int>();
    else if (key == "base_channels") c.base_channels = value.get<int>();
    else if (key == "group_norm_groups") c.group_norm_groups = value.get<int>();
    else if (key == "leaky_slope") c.leaky_slope = value.get<double>();
    else throw ConfigError("unknown network config key: " + key);
  }
  c.validate();
  return c;
}

template <typename V>
void write_pod(std::ofstream& f, const V& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& f) {
  V v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!f) throw IoFailure("model file ended unexpectedly");
  return v;
}

} // namespace model_io

inline void save_model(const Parameters<float>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  f.write(model_io::kMagic, 8);
  model_io::write_pod(f, model_io::kVersion);
  const std::string cfg = model_io::config_to_json(params.config).dump();
  model_io::write_pod(f, static_cast<uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const auto& t : params.tensors) {
    model_io::write_pod(f, static_cast<uint32_t>(t.name.size()));
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    model_io::write_pod(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) model_io::write_pod(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  }
  f.flush();
  if (!f) throw IoFailure("write failed: " + path);
}

inline Parameters<float> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, model_io::kMagic, 8) != 0)
    throw BadMagic("not a slabfill model file: " + path);
  const auto version = model_io::read_pod<uint32_t>(f);
  if (version != model_io::kVersion)
    throw VersionMismatch("model format version " + std::to_string(version) +
                          ", expected " + std::to_string(model_io::kVersion));
  const auto cfg_len = model_io::read_pod<uint32_t>(f);
  std::string cfg_str(cfg_len, '\0');
  f.read(cfg_str.data(), cfg_len);
  if (!f) throw IoFailure("model file ended unexpectedly");
  NetworkConfig config;
  try {
    config = model_io::config_from_json(nlohmann::json::parse(cfg_str));
  } catch (const nlohmann::json::exception& e) {
    throw BadMagic("model config block is not valid JSON: " + std::string(e.what()));
  }

  Parameters<float> params;
  params.config = config;
  params.stamp = unet_detail::next_stamp();
  const NetPlan plan = make_plan(config);
  params.tensors.reserve(plan.tensors.size());
  for (const auto& spec : plan.tensors) {
    const auto name_len = model_io::read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto rank = model_io::read_pod<uint32_t>(f);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(model_io::read_pod<uint32_t>(f));
    if (!f) throw IoFailure("model file ended unexpectedly");
    if (name != spec.name || shape != spec.shape)
      throw ShapeMismatchWithConfig("tensor " + name + " does not match the config-implied " +
                                    spec.name);
    Tensor<float> t;
    t.name = name;
    t.shape = shape;
    t.v.resize(static_cast<size_t>(t.size()));
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!f) throw IoFailure("model file ended unexpectedly");
    params.tensors.push_back(std::move(t));
  }
  return params;
}

} // namespace slabfill

#endif

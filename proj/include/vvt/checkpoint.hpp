#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vvt/backbone.hpp"

namespace vvt {

inline nlohmann::json variant_to_json(const VariantSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  for (const StageSpec& s : spec.stages)
    j["stages"].push_back({{"channels", s.channels},
                           {"patch", s.patch},
                           {"fr_ratio", s.fr_ratio},
                           {"heads", s.heads},
                           {"expansion", s.expansion},
                           {"depth", s.depth}});
  return j;
}

inline VariantSpec variant_from_json(const nlohmann::json& j) {
  VariantSpec spec;
  spec.name = j.at("name").get<std::string>();
  const auto& stages = j.at("stages");
  VVT_CHECK(stages.size() == 4, "variant must have four stages");
  for (int k = 0; k < 4; ++k) {
    const auto& s = stages[static_cast<size_t>(k)];
    spec.stages[static_cast<size_t>(k)] = {
        s.at("channels").get<int64_t>(),  s.at("patch").get<int64_t>(),
        s.at("fr_ratio").get<int64_t>(),  s.at("heads").get<int64_t>(),
        s.at("expansion").get<int64_t>(), s.at("depth").get<int64_t>()};
  }
  return spec;
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_to_json(cfg.spec);
  j["class_count"] = cfg.class_count;
  j["mode"] = mode_name(cfg.mode);
  j["fpc_enabled"] = cfg.fpc_enabled;
  j["post_norm"] = cfg.post_norm;
  j["patch_mode"] = cfg.patch_mode == PatchMode::point ? "point" : "overlap";
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.spec = variant_from_json(j.at("variant"));
  cfg.class_count = j.at("class_count").get<int64_t>();
  cfg.mode = parse_mode(j.at("mode").get<std::string>());
  cfg.fpc_enabled = j.at("fpc_enabled").get<bool>();
  cfg.post_norm = j.at("post_norm").get<bool>();
  cfg.patch_mode = j.at("patch_mode").get<std::string>() == "point"
                       ? PatchMode::point
                       : PatchMode::overlap;
  return cfg;
}

namespace detail {

inline void write_f32_le(std::ofstream& out, const float* data, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * 4));
  } else {
    for (size_t i = 0; i < count; ++i) {
      uint32_t bits;
      std::memcpy(&bits, &data[i], 4);
      const char bytes[4] = {static_cast<char>(bits & 0xff),
                             static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff),
                             static_cast<char>((bits >> 24) & 0xff)};
      out.write(bytes, 4);
    }
  }
}

inline void read_f32_le(std::ifstream& in, float* data, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(count * 4));
  } else {
    for (size_t i = 0; i < count; ++i) {
      unsigned char bytes[4];
      in.read(reinterpret_cast<char*>(bytes), 4);
      const uint32_t bits = static_cast<uint32_t>(bytes[0]) |
                            (static_cast<uint32_t>(bytes[1]) << 8) |
                            (static_cast<uint32_t>(bytes[2]) << 16) |
                            (static_cast<uint32_t>(bytes[3]) << 24);
      std::memcpy(&data[i], &bits, 4);
    }
  }
}

}  // namespace detail

/// Checkpoint container: a directory holding `manifest.json` (tensor name ->
/// shape, dtype, byte offset, file) and raw little-endian float32 blobs in
/// `tensors.bin`. Round trips are bit-exact.
inline void save_checkpoint(const std::string& dir, Model<float>& model) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string blob_name = "tensors.bin";
  std::ofstream blob(fs::path(dir) / blob_name, std::ios::binary);
  VVT_CHECK(blob.good(), "cannot write checkpoint blob in '" + dir + "'");

  nlohmann::json tensors;
  int64_t offset = 0;
  for_each_param(model.params, [&](const std::string& name, Tensor<float>& t) {
    detail::write_f32_le(blob, t.data(), static_cast<size_t>(t.numel()));
    tensors[name] = {{"shape", t.shape()},
                     {"dtype", "f32"},
                     {"offset", offset},
                     {"file", blob_name}};
    offset += t.numel() * 4;
  });
  blob.close();

  nlohmann::json manifest;
  manifest["format"] = "vvt-checkpoint";
  manifest["version"] = 1;
  manifest["model"] = model_config_to_json(model.config);
  manifest["tensors"] = tensors;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  VVT_CHECK(mf.good(), "cannot write manifest in '" + dir + "'");
  mf << manifest.dump(2) << '\n';
}

inline Model<float> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  VVT_CHECK(mf.good(), "cannot open checkpoint manifest in '" + dir + "'");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  VVT_CHECK(manifest.at("format") == "vvt-checkpoint" &&
                manifest.at("version").get<int>() == 1,
            "unrecognized checkpoint format");

  Model<float> model;
  model.config = model_config_from_json(manifest.at("model"));
  model.params = make_model_params<float>(model.config);

  const nlohmann::json& tensors = manifest.at("tensors");
  std::ifstream blob(fs::path(dir) / "tensors.bin", std::ios::binary);
  VVT_CHECK(blob.good(), "cannot open checkpoint blob in '" + dir + "'");
  for_each_param(model.params, [&](const std::string& name, Tensor<float>& t) {
    VVT_CHECK(tensors.contains(name),
              "checkpoint is missing tensor '" + name + "'");
    const nlohmann::json& meta = tensors.at(name);
    const auto shape = meta.at("shape").get<std::vector<int64_t>>();
    VVT_CHECK(shape == t.shape(), "checkpoint tensor '" + name +
                                      "' has unexpected shape");
    VVT_CHECK(meta.at("dtype") == "f32", "unsupported dtype for '" + name + "'");
    blob.seekg(meta.at("offset").get<int64_t>());
    detail::read_f32_le(blob, t.data(), static_cast<size_t>(t.numel()));
    VVT_CHECK(blob.good(), "checkpoint blob truncated at '" + name + "'");
  });
  return model;
}

}  // namespace vvt

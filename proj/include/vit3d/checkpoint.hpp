#pragma once

#include <filesystem>

#include "json.hpp"
#include "vit3d/vit.hpp"

namespace vit3d {

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
  nlohmann::json metadata = nlohmann::json::object();  // provenance, seed, epoch, ...
};

/// Layout, little-endian: "VTCK", u32 version (1), u64 metadata length, UTF-8
/// JSON metadata holding {"config": ..., "metadata": ...}, then for each tensor
/// in canonical order: u16 name length, name bytes, u8 rank, u32 dims, f32 payload.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore<float>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
std::vector<unsigned char> encode_checkpoint(const ModelConfig& cfg, const ParamStore<float>& params,
                                             const nlohmann::json& metadata);

// Throws CorruptCheckpointError on bad magic/version, truncation, or tensors that
// disagree with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& what = "checkpoint");

/// As load_checkpoint, then checks the stored config against `expected`:
/// HeadMismatchError when only n_classes differs, CheckpointMismatchError
/// naming both values for any other architectural difference.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Throws as above when `stored` cannot be used where `expected` is needed.
void check_compatible(const ModelConfig& stored, const ModelConfig& expected);

}  // namespace vit3d

#pragma once

#include "blendgan/image_io.hpp"
#include "blendgan/model.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace blendgan {

inline constexpr int kManifestVersion = 1;
inline constexpr int kCheckpointVersion = 1;

std::string sha256_hex(const std::uint8_t* data, std::size_t size);
inline std::string sha256_hex(const Bytes& b) { return sha256_hex(b.data(), b.size()); }

/// Per-level checkpoint: "BGCK", u32 version, u64 header length, JSON
/// header, raw little-endian tensor data, then the 32-byte SHA-256 of
/// everything before it.
Bytes encode_checkpoint(const ModelBundle& bundle, int level);

struct DecodedCheckpoint {
  int level = 0;
  std::int64_t iterations_done = 0;
  bool trained = false;
  std::map<std::string, torch::Tensor> tensors;
};

/// Throws CorruptionError (digest or structure) or VersionError; `origin`
/// names the source in messages.
DecodedCheckpoint decode_checkpoint(const Bytes& bytes, const std::string& origin);

/// Writes manifest.json, images/ and one scale_<i>.bgck per level.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir,
                 const std::string& project_id = "");

/// Verifies every digest before building the bundle; nothing is returned on
/// error. Missing files raise NotFound naming the path.
ModelBundle load_bundle(const std::filesystem::path& dir);

/// True when `dir` holds a manifest.
bool is_bundle_dir(const std::filesystem::path& dir);

}  // namespace blendgan

#pragma once

// Versioned binary parameter sets.
//
// Layout (little endian): magic "MCLIPCKP", u32 version, then length-prefixed
// strings kind, config_json, fingerprint; u64 metadata count with key/value
// string pairs; u64 tensor count with (name, u64 rows, u64 cols, rows*cols
// f64 in row-major order). Strings are u64 length + bytes.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace multiclip {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;         // "pretrain", "vqa", "sqa"
  std::string config_json;  // canonical model configuration
  std::string fingerprint;  // fingerprint(config_json)
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd* find(const std::string& name) const;
  // Tensors whose names start with prefix.
  std::vector<std::pair<std::string, Eigen::MatrixXd>> with_prefix(const std::string& prefix) const;
};

// 64-bit FNV-1a of the text, as 16 lowercase hex digits.
std::string fingerprint(const std::string& text);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Throws Load on I/O failure, a bad header, or when expected_fingerprint is
// given and differs from the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_fingerprint = std::nullopt);

}  // namespace multiclip

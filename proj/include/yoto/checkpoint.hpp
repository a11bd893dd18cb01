#pragma once

// Single-file checkpoint container:
//
//   "YOTO1"                       5 bytes magic
//   format version                u32 little-endian (currently 1)
//   header length                 u64 little-endian
//   header                        UTF-8 JSON: config, metadata, tensor index
//                                 {name: {shape, offset, length}}
//   payload                       little-endian f32, tensors in
//                                 lexicographic name order
//   checksum                      u64 little-endian: first 8 bytes of
//                                 SHA-256(header || payload), read as LE
//
// Files are written to a temporary sibling and renamed into place.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "yoto/encoder.hpp"

namespace yoto {

enum class Role { pretrained, finetuned, merged, vulvector };
std::string to_string(Role role);
Role parse_role(const std::string& text);

struct CheckpointMeta {
  Role role = Role::pretrained;
  std::optional<std::string> base_fingerprint;
  std::string lineage;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  // Tokens by id; carried so every stage tokenizes identically.
  std::vector<std::string> vocab;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelConfig config;
  NamedParams params;
  CheckpointMeta meta;

  // Role/metadata rules plus the parameter shape schema.
  void validate() const;
  NamedParams encoder_params() const;
  NamedParams head_params(const std::string& head_id) const;
};

// Hex SHA-256 over the encoder.* tensors in lexicographic order; each tensor
// contributes its name, a NUL byte, and its values as little-endian f32.
std::string fingerprint(const NamedParams& params);

inline constexpr std::uint32_t kContainerVersion = 1;

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TensorIndexEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};
// Reads only the fixed prefix and JSON header.
std::vector<TensorIndexEntry> read_tensor_index(const std::string& path);

// Hex SHA-256 of a file's bytes (used for manifests).
std::string file_digest(const std::string& path);
std::string sha256_hex(const std::string& bytes);

bool params_bitwise_equal(const NamedParams& a, const NamedParams& b);

}  // namespace yoto

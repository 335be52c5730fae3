#pragma once

#include <map>
#include <string>

#include "ctxbias/model.hpp"

namespace ctxbias {

// Binary container for named tensors plus a trailing key-value metadata
// block. Layout (all integers little-endian):
//   magic "CTXB" | u32 version | u64 tensor count
//   per tensor: u64 name length | name bytes | u64 rank | u64 dims... |
//               row-major f32 payload
//   u64 metadata byte length | "key=value\n" lines
// Save -> load -> save round-trips bit-identically.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  ParamMap tensors;
  std::map<std::string, std::string> metadata;

  std::string meta(const std::string& key) const {
    auto it = metadata.find(key);
    check(it != metadata.end(), "checkpoint: missing metadata key " + key);
    return it->second;
  }
  bool has_meta(const std::string& key) const { return metadata.count(key) != 0; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Serializes bytes into memory (save writes this atomically).
  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
};

// Packs a trained model into a checkpoint. `stage` and `config_hash` are
// recorded so downstream commands can verify preconditions.
Checkpoint make_checkpoint(const PolicyModel& model, const std::string& stage,
                           uint64_t config_hash, uint64_t seed, int step);

// Rebuilds the model; validates that the stored model_config parses and the
// parameter set matches what create() would produce.
PolicyModel model_from_checkpoint(const Checkpoint& ckpt);

// Writes `bytes` to `path` via temp file + rename.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace ctxbias

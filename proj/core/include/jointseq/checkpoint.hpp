#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "jointseq/model.hpp"
#include "jointseq/vocab.hpp"

namespace jointseq {

inline constexpr char kCheckpointMagic[9] = "JSQCKPT1";

// File layout: 8-byte magic, little-endian u64 manifest length, the JSON
// manifest, then every parameter tensor as raw little-endian doubles in the
// manifest's order.
struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  // Free-form JSON object text stored verbatim (run config, variant, ...).
  std::string extra = "{}";
};

struct Checkpoint {
  ModelParams params;
  UnifiedVocab vocab;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const UnifiedVocab& vocab, const CheckpointMeta& meta);

// Throws Error(kIoError) on unreadable or truncated files and
// Error(kManifestMismatch) when the manifest disagrees with the payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace jointseq

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "passmatch/encoders.hpp"

namespace passmatch {

// Self-describing binary container (msgpack): format version, matcher config,
// vocabulary, named weight tensors, and free-form string metadata. Weights
// round-trip bit-exactly.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Matcher& matcher, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& meta = {});

struct LoadedCheckpoint {
  std::unique_ptr<Matcher> matcher;
  std::map<std::string, std::string> meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the checkpoint bytes; pairs a vector index with the exact
// weights that produced it.
std::uint64_t checkpoint_fingerprint(const std::filesystem::path& path);

}  // namespace passmatch

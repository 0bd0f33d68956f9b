// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace passmatch {

// FNV-1a over raw bytes. Used for config hashes, checkpoint fingerprints and
// per-stage seed derivation; must stay stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes);

// Mixes a global seed with a stage name so pipeline stages draw from
// independent, individually reproducible streams.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

std::string hex64(std::uint64_t v);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool is_word_char(unsigned char c);

// Plain whitespace split; corpus statistics count tokens with this, not the
// model tokenizer.
std::vector<std::string> whitespace_tokens(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);

// Write-temp-then-rename so readers never observe partial files.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"
#include "passmatch/evalbench.hpp"
#include "passmatch/training.hpp"

namespace passmatch {

// ==================== Run configuration ====================

// Every tunable of the pipeline in one flat key-value file ("key = value",
// '#' comments). Unknown and duplicate keys are rejected so typos cannot
// silently fall back to defaults. List values are comma-separated.
struct RunConfig {
  std::uint64_t seed = 1;
  GeneratorParams gen;
  std::string label_gazetteer;  // path; empty -> must come from --gazetteer
  std::string label_rules;      // path; empty -> built-in heading rules
  MatcherConfig model;
  TrainConfig train;
  std::string index_metric = "dot";
  EvalConfig eval;
  LatencyConfig bench;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical echo: every key in a fixed order with its effective value.
// Feeding the echo back through parse_run_config reproduces the run.
std::string run_config_to_text(const RunConfig& cfg);

// Hash of the canonical text; stamped into every artifact the run produces.
std::uint64_t config_hash(const RunConfig& cfg);

// ==================== Commands ====================

// Shared run state: resolved config plus the provenance stamped on artifacts.
// command_line deliberately omits the --out directory so reruns into a
// different location stay byte-identical.
struct CommandContext {
  std::string command_line;
  RunConfig config;
  std::uint64_t seed = 1;  // effective global seed (--seed beats the config)
  std::filesystem::path out_dir;

  std::string meta_line() const;  // "cmd: ... | config: 0x... | seed: N"
};

int cmd_gen_corpus(const CommandContext& ctx);
int cmd_ingest(const CommandContext& ctx, const std::filesystem::path& input);
int cmd_stats(const std::filesystem::path& corpus_path);
int cmd_label(const CommandContext& ctx, const std::filesystem::path& corpus_path,
              const std::string& gazetteer_path, const std::string& rules_path);
int cmd_train(const CommandContext& ctx, const std::filesystem::path& corpus_path,
              const std::filesystem::path& labels_path, const std::string& arch);
int cmd_index(const CommandContext& ctx, const std::filesystem::path& corpus_path,
              const std::filesystem::path& checkpoint_path);
// arch (when non-empty) must match the checkpoint; index_path is used for
// cached bi-encoder scoring and rejected for other architectures.
int cmd_query(const CommandContext& ctx, const std::filesystem::path& corpus_path,
              const std::filesystem::path& checkpoint_path,
              const std::optional<std::filesystem::path>& index_path, const std::string& arch,
              const std::string& entity, const std::string& aspect, int k);
int cmd_eval(const CommandContext& ctx, const std::filesystem::path& corpus_path,
             const std::filesystem::path& labels_path,
             const std::vector<std::filesystem::path>& checkpoint_paths);
int cmd_bench(const CommandContext& ctx, const std::filesystem::path& corpus_path,
              const std::filesystem::path& labels_path,
              const std::vector<std::filesystem::path>& checkpoint_paths);

}  // namespace passmatch

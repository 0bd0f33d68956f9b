// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"

namespace passmatch {

// ==================== Entity gazetteer ====================

// Alias -> canonical surface map. Aliases and canonicals are stored lowercase;
// matching is case-insensitive on whole-word boundaries.
class Gazetteer {
 public:
  static Gazetteer from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
  // One entry per line: "alias<TAB>canonical", or a bare surface that maps to
  // itself. '#' lines and blank lines are skipped.
  static Gazetteer load(const std::filesystem::path& path);

  const std::map<std::string, std::string>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::string, std::string> entries_;  // alias -> canonical
};

struct EntityMention {
  int begin = 0;  // byte offsets into the original text
  int end = 0;
  std::string surface;    // as found, original casing
  std::string canonical;  // gazetteer canonical form, lowercase
};

// Greedy leftmost-longest scan: at each word start the longest matching alias
// wins and the scan resumes after it, so nested aliases never double-report.
std::vector<EntityMention> find_entities(const std::string& text, const Gazetteer& gazetteer);

// ==================== Aspect rules ====================

struct AspectRule {
  std::string pattern;
  std::regex regex;  // compiled case-insensitive
};

// Compiles patterns in order; the position of a bad pattern is reported
// 1-based in the exception message.
std::vector<AspectRule> compile_aspect_rules(const std::vector<std::string>& patterns);
// One pattern per line; '#' lines and blank lines are skipped. Bad patterns
// are reported with their line number.
std::vector<AspectRule> load_aspect_rules(const std::filesystem::path& path);
// Patterns covering the built-in clinical section headings.
std::vector<AspectRule> default_aspect_rules();

// Lowercase, punctuation stripped, whitespace collapsed and trimmed.
std::string normalize_aspect(const std::string& raw);

// First rule that matches the heading wins; capture group 1 if the pattern
// has one, else the whole match, normalized. std::nullopt when nothing
// matches.
std::optional<std::string> match_aspect(const std::string& heading,
                                        const std::vector<AspectRule>& rules);

// ==================== Corpus annotation ====================

struct Label {
  std::string passage_id;             // "doc#section"
  std::vector<std::string> entities;  // canonical, sorted, deduplicated
  std::string aspect;                 // normalized
};

struct AnnotateReport {
  std::vector<Label> labels;
  int n_passages = 0;
  int n_skipped_no_aspect = 0;  // heading matched no rule
  int n_skipped_no_entity = 0;  // no gazetteer hit in the passage text
};

// Labels every passage whose heading yields an aspect and whose text contains
// at least one entity; the rest are skipped and counted. labels.size() +
// skips always equals n_passages.
AnnotateReport annotate_corpus(const Corpus& corpus, const Gazetteer& gazetteer,
                               const std::vector<AspectRule>& rules);

// ==================== Label JSONL ====================

std::string labels_to_jsonl(const std::vector<Label>& labels, const std::string& meta_line = "");
std::vector<Label> parse_labels(const std::string& content, const std::string& origin);
void write_labels(const std::vector<Label>& labels, const std::filesystem::path& path,
                  const std::string& meta_line = "");
std::vector<Label> read_labels(const std::filesystem::path& path);

}  // namespace passmatch

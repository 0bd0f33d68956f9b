// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace passmatch {

struct Section {
  std::string heading;
  std::vector<std::string> sentences;

  bool operator==(const Section&) const = default;
};

struct Document {
  std::string id;
  std::string title;
  std::vector<Section> sections;

  bool operator==(const Document&) const = default;
};

// One retrieval unit per section: its sentences joined by single spaces.
// sentence_spans are [begin, end) offsets into text.
struct Passage {
  std::string doc_id;
  int section_index = 0;
  std::string text;
  std::vector<std::pair<int, int>> sentence_spans;

  std::string id() const { return doc_id + "#" + std::to_string(section_index); }
  std::vector<std::string> sentences() const;
};

class Corpus {
 public:
  Corpus() = default;
  // Validates ids (non-empty, unique) and that every document has a section.
  // Sections without sentences stay in the document but yield no passage.
  static Corpus from_documents(std::vector<Document> docs);

  const std::vector<Document>& documents() const { return docs_; }
  const std::vector<Passage>& passages() const { return passages_; }
  const Passage& passage(int i) const { return passages_.at(static_cast<std::size_t>(i)); }
  int n_passages() const { return static_cast<int>(passages_.size()); }

  // Index of a passage by its "doc#section" id; -1 when absent.
  int find_passage(const std::string& passage_id) const;
  const Document* find_document(const std::string& doc_id) const;

  bool operator==(const Corpus& other) const { return docs_ == other.docs_; }

 private:
  std::vector<Document> docs_;
  std::vector<Passage> passages_;
  std::map<std::string, int> passage_index_;
  std::map<std::string, int> doc_index_;
};

struct CorpusStats {
  int n_docs = 0;
  int n_passages = 0;
  double avg_sentences_per_doc = 0;
  double avg_sentences_per_passage = 0;
  double avg_tokens_per_passage = 0;   // whitespace tokens
  double avg_tokens_per_sentence = 0;  // whitespace tokens
};

CorpusStats compute_stats(const Corpus& corpus);

// ==================== JSONL ====================

// One document object per line: {"id", "title", "sections": [{"heading",
// "sentences"}]}. Lines starting with '#' are metadata comments and are
// skipped. A section may carry "text" instead of "sentences"; it is split by
// segment_sentences on ingest. Empty input yields an empty corpus.
Corpus ingest_jsonl(const std::filesystem::path& path);
Corpus parse_jsonl(const std::string& content, const std::string& origin);

// Byte-stable emission; meta_line (if non-empty) is written first as a '#'
// comment so artifact files carry their provenance.
std::string corpus_to_jsonl(const Corpus& corpus, const std::string& meta_line = "");
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path,
                 const std::string& meta_line = "");

// ==================== Sentence segmentation ====================

// Splits raw text on [.!?] followed by whitespace and an uppercase letter,
// with a stop-list of common abbreviations so "Dr. Smith" stays intact.
std::vector<std::string> segment_sentences(const std::string& text);

// ==================== Synthetic generation ====================

struct AspectTemplates {
  // Sentence templates with an {entity} slot.
  std::vector<std::string> entity_sentences;
  // Filler templates; may use a {distractor} slot.
  std::vector<std::string> filler_sentences;
};

struct GeneratorParams {
  int n_docs = 32;
  int sections_per_doc_min = 2;
  int sections_per_doc_max = 4;
  int sentences_per_section_min = 2;
  int sentences_per_section_max = 4;
  double mention_probability = 0.9;        // P(section mentions >= 1 entity)
  double extra_entity_probability = 0.15;  // P(a second, distinct entity)
  double anonymize_probability = 0.0;      // P(distractor slot -> [**...**])
  std::vector<std::string> entities;       // defaults curated when empty
  std::vector<std::string> aspects;
  std::vector<std::string> distractors;
  std::map<std::string, AspectTemplates> templates;  // keyed by aspect

  // Fills empty vocabulary fields with the built-in curated sets.
  void apply_defaults();
  // Rejects empty vocabularies, inverted ranges, probabilities outside [0,1],
  // aspects without templates, and entity surfaces leaking into template
  // literals or distractors (which would corrupt planted labels).
  void validate() const;
};

struct PlantedLabel {
  std::string doc_id;
  int section_index = 0;
  std::vector<std::string> entities;  // sorted, lowercase
  std::string aspect;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<PlantedLabel> planted;  // sections that carry entity + aspect
};

// Deterministic under (params, seed): identical inputs give byte-identical
// corpora.
SyntheticCorpus generate_synthetic(GeneratorParams params, std::uint64_t seed);

}  // namespace passmatch

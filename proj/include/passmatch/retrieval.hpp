// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"
#include "passmatch/encoders.hpp"
#include "passmatch/tensor.hpp"

namespace passmatch {

// ==================== Lexical index ====================

struct Posting {
  int passage = 0;  // corpus position
  int tf = 0;
};

// Term -> postings plus the per-passage statistics BM25 and TF-IDF need.
// Immutable once built.
class InvertedIndex {
 public:
  static InvertedIndex build(const Corpus& corpus);

  int n_passages() const { return static_cast<int>(lengths_.size()); }
  double avgdl() const { return avgdl_; }
  int doc_length(int passage) const;
  int document_frequency(const std::string& term) const;
  int term_frequency(const std::string& term, int passage) const;
  // nullptr when the term occurs nowhere; postings sorted by passage.
  const std::vector<Posting>* postings(const std::string& term) const;
  // ln((N - df + 0.5)/(df + 0.5) + 1); unseen terms get the df=0 value.
  double idf(const std::string& term) const;
  // Euclidean norm of the passage's ln(1+tf)*idf weight vector.
  double tfidf_norm(int passage) const;

 private:
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<int> lengths_;
  std::vector<double> tfidf_norms_;
  double avgdl_ = 0;
};

// Okapi BM25 of the query token list against one passage; repeated query
// tokens contribute repeatedly. Terms missing from the passage add nothing.
double bm25_score(const std::vector<std::string>& query_terms, int passage,
                  const InvertedIndex& index, double k1 = 1.2, double b = 0.75);

// Cosine similarity of ln(1+tf)*idf weight vectors; query-only terms still
// widen the query norm.
double tfidf_score(const std::vector<std::string>& query_terms, int passage,
                   const InvertedIndex& index);

// ==================== Ranked lists ====================

struct ScoredPassage {
  std::string id;
  double score = 0;
};

// Descending score, ties by ascending id: every ranking is a total order.
using RankedList = std::vector<ScoredPassage>;
void sort_ranked(RankedList& list);

// ==================== Vector index ====================

struct VectorIndex {
  std::string metric = "dot";  // dot | cosine
  std::vector<std::string> ids;
  Tensor matrix;  // [N x d], one row per id
  // Fingerprint of the checkpoint whose weights produced the rows; query-time
  // encoders must present the same value.
  std::uint64_t fingerprint = 0;
};

// Encodes every passage once through the bi-encoder passage tower.
VectorIndex build_vector_index(const Corpus& corpus, BiMatcher& matcher,
                               const std::string& metric = "dot",
                               std::uint64_t fingerprint = 0);

// Binary, versioned: header (metric, dtype, d, N, fingerprint), id table,
// row-major matrix.
void save_vector_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_vector_index(const std::filesystem::path& path);

// Exact top-k by full scan. k is clamped to the index size.
RankedList knn(const VectorIndex& index, const Tensor& query_vec, int k);

// ==================== Candidate selection ====================

struct CandidateSet {
  std::vector<std::string> ids;
  bool gold_present = false;
};

// mode "bm25": top-n passages by BM25 over "entity aspect" (gold presence
// reported, never forced). mode "random": uniform sample without replacement,
// with one gold id swapped in when the draw missed them all — recall over the
// candidates is undefined otherwise. n >= corpus returns every passage.
CandidateSet select_candidates(const Query& query, const Corpus& corpus,
                               const InvertedIndex& index, const std::string& mode,
                               const std::set<std::string>& gold_ids, int n,
                               std::uint64_t seed);

// ==================== Re-ranking ====================

// Scores every candidate with score_pair; any architecture.
RankedList rerank(Matcher& matcher, const Corpus& corpus, const Query& query,
                  const std::vector<std::string>& candidate_ids);

// Bi-encoder against cached index rows: one query-tower pass per query.
// Throws when matcher_fingerprint does not match the index.
RankedList rerank_bi_cached(BiMatcher& matcher, const VectorIndex& index, const Query& query,
                            const std::vector<std::string>& candidate_ids,
                            std::uint64_t matcher_fingerprint);

// Cached passage token states for the poly-encoder latency path.
struct PolyCache {
  std::vector<std::string> ids;
  std::vector<Tensor> token_states;  // [T_i x d] per passage
  std::uint64_t fingerprint = 0;
};

PolyCache build_poly_cache(const Corpus& corpus, PolyMatcher& matcher,
                           std::uint64_t fingerprint = 0);
RankedList rerank_poly_cached(PolyMatcher& matcher, const PolyCache& cache, const Query& query,
                              const std::vector<std::string>& candidate_ids,
                              std::uint64_t matcher_fingerprint);

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"
#include "passmatch/encoders.hpp"
#include "passmatch/labeler.hpp"
#include "passmatch/retrieval.hpp"

namespace passmatch {

// ==================== Recall ====================

// An evaluation query with the set of passage ids that count as correct.
struct EvalQuery {
  Query query;
  std::set<std::string> gold_ids;
};

// Groups labels by (entity, aspect): every labeled passage mentioning that
// entity under that aspect is a gold answer. Output is sorted by query so the
// labeling pipeline doubles as a deterministic gold-query generator.
std::vector<EvalQuery> derive_queries(const std::vector<Label>& labels);

// 1 iff any gold id ranks in the top k; an empty list scores 0.
int recall_at_k(const RankedList& ranked, const std::set<std::string>& gold_ids, int k);

// ==================== Evaluation ====================

struct EvalConfig {
  std::string candidate_mode = "bm25";  // or "random"
  int n_candidates = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalReport {
  std::string architecture;
  double recall_at_1 = 0;
  double recall_at_5 = 0;
  int n_queries = 0;  // evaluated
  int n_skipped = 0;  // no gold id present in the corpus
};

// Scores one (query, candidate passage) pair; higher ranks earlier.
using PairScorer = std::function<double(const Query&, const Passage&)>;

// select_candidates -> score -> recall, averaged over the queries whose gold
// exists in the corpus. Pure function of (corpus, queries, scorer, config).
EvalReport evaluate_with_scorer(const Corpus& corpus, const std::vector<EvalQuery>& queries,
                                const PairScorer& scorer, const EvalConfig& cfg = {});

// Same protocol with the matcher's pair score (gradient recording suspended).
EvalReport evaluate(Matcher& matcher, const Corpus& corpus,
                    const std::vector<EvalQuery>& queries, const EvalConfig& cfg = {});

// ==================== Cross-domain grid ====================

struct EvalDomain {
  std::string tag;
  Corpus corpus;
  std::vector<EvalQuery> queries;
};

struct CrossDomainCell {
  std::string train_corpus;
  std::string eval_corpus;
  std::string architecture;
  bool present = false;  // false when the checkpoint was missing
  EvalReport report;
};

// Maps (train tag, architecture) to a checkpoint path; std::nullopt or a
// missing file marks the grid row absent without aborting the run.
using CheckpointResolver = std::function<std::optional<std::filesystem::path>(
    const std::string& train_tag, const std::string& architecture)>;

std::vector<CrossDomainCell> cross_domain_run(const std::vector<std::string>& train_tags,
                                              const std::vector<std::string>& architectures,
                                              const std::vector<EvalDomain>& eval_domains,
                                              const CheckpointResolver& resolver,
                                              const EvalConfig& cfg = {});

// Header `train_corpus,eval_corpus,architecture,r_at_1,r_at_5,n_queries`;
// absent cells carry "absent" in the recall columns. meta_line (if non-empty)
// is emitted first as a '#' comment.
std::string cross_domain_csv(const std::vector<CrossDomainCell>& cells,
                             const std::string& meta_line = "");

// ==================== Latency benchmark ====================

struct LatencyRow {
  std::string architecture;
  int n_passages = 0;
  double median_s = 0;
  double p95_s = 0;
};

struct LatencyConfig {
  std::vector<int> passage_counts = {128, 256, 512, 1024, 2048};
  int n_queries = 10;
  int warmup = 5;

  void validate() const;
};

struct BenchMatchers {
  BiMatcher* bi = nullptr;  // null entries are skipped
  PolyMatcher* poly = nullptr;
  CrossMatcher* cross = nullptr;
};

// A prefix of the corpus containing exactly n passages (the last document is
// trimmed to the sections needed). Passage ids are preserved.
Corpus head_passages(const Corpus& corpus, int n);

// Per-query wall-clock over each corpus prefix, median and p95 after warmup.
// The dense index / token cache is built outside the timed region; the cross
// encoder is timed end to end, encoding every candidate per query.
std::vector<LatencyRow> latency_bench(const BenchMatchers& matchers, const Corpus& corpus,
                                      const std::vector<Query>& queries,
                                      const LatencyConfig& cfg = {});

// Least-squares fit of ln(median_s) against ln(n_passages) for one
// architecture's rows: how the cost curve bends on a log-log plot.
struct LogLogFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

LogLogFit loglog_fit(const std::vector<LatencyRow>& rows, const std::string& architecture);

// "# cpu: ... | threads: N | scalar: 64-bit" — absolute timings depend on the
// machine, so reports carry it.
std::string machine_specs_line();

// Header `architecture,n_passages,median_s,p95_s` after '#' meta lines.
std::string latency_csv(const std::vector<LatencyRow>& rows,
                        const std::vector<std::string>& meta_lines = {});

}  // namespace passmatch

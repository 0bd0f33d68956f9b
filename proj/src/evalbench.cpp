// SPDX-License-Identifier: Apache-2.0
#include "passmatch/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "passmatch/checkpoint.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

// ==================== Recall ====================

std::vector<EvalQuery> derive_queries(const std::vector<Label>& labels) {
  std::map<Query, std::set<std::string>> gold;
  for (const Label& label : labels) {
    for (const std::string& entity : label.entities) {
      gold[Query{entity, label.aspect}].insert(label.passage_id);
    }
  }
  std::vector<EvalQuery> out;
  out.reserve(gold.size());
  for (auto& [query, ids] : gold) out.push_back({query, std::move(ids)});
  return out;
}

int recall_at_k(const RankedList& ranked, const std::set<std::string>& gold_ids, int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1, got " + std::to_string(k));
  const int lim = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int i = 0; i < lim; ++i) {
    if (gold_ids.count(ranked[static_cast<std::size_t>(i)].id)) return 1;
  }
  return 0;
}

// ==================== Evaluation ====================

void EvalConfig::validate() const {
  if (candidate_mode != "bm25" && candidate_mode != "random") {
    throw std::invalid_argument("evaluate: candidate_mode must be bm25 or random, got '" +
                                candidate_mode + "'");
  }
  if (n_candidates < 1) throw std::invalid_argument("evaluate: n_candidates must be >= 1");
}

EvalReport evaluate_with_scorer(const Corpus& corpus, const std::vector<EvalQuery>& queries,
                                const PairScorer& scorer, const EvalConfig& cfg) {
  cfg.validate();
  if (!scorer) throw std::invalid_argument("evaluate: scorer is empty");
  const InvertedIndex index = InvertedIndex::build(corpus);

  EvalReport report;
  long hits1 = 0, hits5 = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const EvalQuery& eq = queries[qi];
    if (eq.gold_ids.empty()) throw std::invalid_argument("evaluate: query without gold ids");
    bool gold_in_corpus = false;
    for (const std::string& g : eq.gold_ids) {
      if (corpus.find_passage(g) >= 0) gold_in_corpus = true;
    }
    if (!gold_in_corpus) {
      ++report.n_skipped;
      continue;
    }
    const std::uint64_t q_seed =
        derive_seed(cfg.seed, "candidates/" + std::to_string(qi));
    const CandidateSet candidates = select_candidates(eq.query, corpus, index,
                                                      cfg.candidate_mode, eq.gold_ids,
                                                      cfg.n_candidates, q_seed);
    RankedList ranked;
    ranked.reserve(candidates.ids.size());
    for (const std::string& id : candidates.ids) {
      const int p = corpus.find_passage(id);
      ranked.push_back({id, scorer(eq.query, corpus.passage(p))});
    }
    sort_ranked(ranked);
    hits1 += recall_at_k(ranked, eq.gold_ids, 1);
    hits5 += recall_at_k(ranked, eq.gold_ids, 5);
    ++report.n_queries;
  }
  if (report.n_queries > 0) {
    report.recall_at_1 = static_cast<double>(hits1) / static_cast<double>(report.n_queries);
    report.recall_at_5 = static_cast<double>(hits5) / static_cast<double>(report.n_queries);
  }
  return report;
}

EvalReport evaluate(Matcher& matcher, const Corpus& corpus,
                    const std::vector<EvalQuery>& queries, const EvalConfig& cfg) {
  Tape::Pause pause;
  EvalReport report = evaluate_with_scorer(
      corpus, queries,
      [&matcher](const Query& q, const Passage& p) {
        return static_cast<double>(matcher.score_pair(q, p).item());
      },
      cfg);
  report.architecture = matcher.config().architecture;
  return report;
}

// ==================== Cross-domain grid ====================

std::vector<CrossDomainCell> cross_domain_run(const std::vector<std::string>& train_tags,
                                              const std::vector<std::string>& architectures,
                                              const std::vector<EvalDomain>& eval_domains,
                                              const CheckpointResolver& resolver,
                                              const EvalConfig& cfg) {
  if (!resolver) throw std::invalid_argument("cross_domain_run: resolver is empty");
  std::vector<CrossDomainCell> cells;
  for (const std::string& train : train_tags) {
    for (const std::string& arch : architectures) {
      const std::optional<std::filesystem::path> path = resolver(train, arch);
      std::unique_ptr<Matcher> matcher;
      if (path && std::filesystem::exists(*path)) {
        matcher = load_checkpoint(*path).matcher;
      }
      for (const EvalDomain& domain : eval_domains) {
        CrossDomainCell cell;
        cell.train_corpus = train;
        cell.eval_corpus = domain.tag;
        cell.architecture = arch;
        if (matcher) {
          cell.present = true;
          cell.report = evaluate(*matcher, domain.corpus, domain.queries, cfg);
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

namespace {

std::string format_fraction(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

std::string cross_domain_csv(const std::vector<CrossDomainCell>& cells,
                             const std::string& meta_line) {
  std::string out;
  if (!meta_line.empty()) out += "# " + meta_line + "\n";
  out += "train_corpus,eval_corpus,architecture,r_at_1,r_at_5,n_queries\n";
  for (const CrossDomainCell& c : cells) {
    out += c.train_corpus + "," + c.eval_corpus + "," + c.architecture + ",";
    if (c.present) {
      out += format_fraction(c.report.recall_at_1) + "," +
             format_fraction(c.report.recall_at_5) + "," + std::to_string(c.report.n_queries);
    } else {
      out += "absent,absent,0";
    }
    out += "\n";
  }
  return out;
}

// ==================== Latency benchmark ====================

void LatencyConfig::validate() const {
  if (passage_counts.empty()) throw std::invalid_argument("latency_bench: no passage counts");
  for (std::size_t i = 1; i < passage_counts.size(); ++i) {
    if (passage_counts[i] <= passage_counts[i - 1]) {
      throw std::invalid_argument("latency_bench: passage counts must increase strictly");
    }
  }
  if (passage_counts.front() < 2) {
    throw std::invalid_argument("latency_bench: passage counts must be >= 2");
  }
  if (n_queries < 1) throw std::invalid_argument("latency_bench: n_queries must be >= 1");
  if (warmup < 0) throw std::invalid_argument("latency_bench: warmup must be >= 0");
}

Corpus head_passages(const Corpus& corpus, int n) {
  if (n < 1) throw std::invalid_argument("head_passages: n must be >= 1");
  if (n > corpus.n_passages()) {
    throw std::invalid_argument("head_passages: corpus has " +
                                std::to_string(corpus.n_passages()) + " passages, wanted " +
                                std::to_string(n));
  }
  std::vector<Document> docs;
  int kept = 0;
  for (const Document& doc : corpus.documents()) {
    if (kept == n) break;
    Document trimmed;
    trimmed.id = doc.id;
    trimmed.title = doc.title;
    for (const Section& section : doc.sections) {
      if (kept == n) break;
      trimmed.sections.push_back(section);
      if (!section.sentences.empty()) ++kept;  // empty sections yield no passage
    }
    docs.push_back(std::move(trimmed));
  }
  return Corpus::from_documents(std::move(docs));
}

namespace {

struct TimedStats {
  double median_s = 0;
  double p95_s = 0;
};

TimedStats summarize(std::vector<double> seconds) {
  std::sort(seconds.begin(), seconds.end());
  const std::size_t n = seconds.size();
  TimedStats stats;
  stats.median_s = n % 2 == 1 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);
  const std::size_t p95 =
      std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1);
  stats.p95_s = seconds[p95];
  return stats;
}

// Runs fn once per warmup + measured query, cycling through the query list,
// and keeps the measured wall-clock times.
template <typename Fn>
TimedStats time_queries(const std::vector<Query>& queries, const LatencyConfig& cfg, Fn&& fn) {
  using clock = std::chrono::steady_clock;
  const std::size_t nq = queries.size();
  for (int i = 0; i < cfg.warmup; ++i) fn(queries[static_cast<std::size_t>(i) % nq]);
  std::vector<double> seconds;
  seconds.reserve(static_cast<std::size_t>(cfg.n_queries));
  for (int i = 0; i < cfg.n_queries; ++i) {
    const Query& q = queries[static_cast<std::size_t>(i) % nq];
    const auto t0 = clock::now();
    fn(q);
    const auto t1 = clock::now();
    seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return summarize(std::move(seconds));
}

}  // namespace

std::vector<LatencyRow> latency_bench(const BenchMatchers& matchers, const Corpus& corpus,
                                      const std::vector<Query>& queries,
                                      const LatencyConfig& cfg) {
  cfg.validate();
  if (queries.empty()) throw std::invalid_argument("latency_bench: no queries");
  if (corpus.n_passages() < cfg.passage_counts.back()) {
    throw std::invalid_argument("latency_bench: corpus has " +
                                std::to_string(corpus.n_passages()) +
                                " passages, largest count is " +
                                std::to_string(cfg.passage_counts.back()));
  }

  std::vector<LatencyRow> rows;
  Tape::Pause pause;
  for (const int count : cfg.passage_counts) {
    const Corpus slice = head_passages(corpus, count);
    std::vector<std::string> all_ids;
    all_ids.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < slice.n_passages(); ++i) all_ids.push_back(slice.passage(i).id());

    if (matchers.bi != nullptr) {
      const VectorIndex index = build_vector_index(slice, *matchers.bi);
      TimedStats stats = time_queries(queries, cfg, [&](const Query& q) {
        knn(index, matchers.bi->embed_query(q), 5);
      });
      rows.push_back({"bi", count, stats.median_s, stats.p95_s});
    }
    if (matchers.poly != nullptr) {
      const PolyCache cache = build_poly_cache(slice, *matchers.poly);
      TimedStats stats = time_queries(queries, cfg, [&](const Query& q) {
        rerank_poly_cached(*matchers.poly, cache, q, all_ids, cache.fingerprint);
      });
      rows.push_back({"poly", count, stats.median_s, stats.p95_s});
    }
    if (matchers.cross != nullptr) {
      TimedStats stats = time_queries(queries, cfg, [&](const Query& q) {
        rerank(*matchers.cross, slice, q, all_ids);
      });
      rows.push_back({"cross", count, stats.median_s, stats.p95_s});
    }
  }
  return rows;
}

LogLogFit loglog_fit(const std::vector<LatencyRow>& rows, const std::string& architecture) {
  std::vector<double> xs, ys;
  for (const LatencyRow& row : rows) {
    if (row.architecture != architecture) continue;
    if (row.n_passages < 1 || row.median_s <= 0) continue;
    xs.push_back(std::log(static_cast<double>(row.n_passages)));
    ys.push_back(std::log(row.median_s));
  }
  if (xs.size() < 2) {
    throw std::invalid_argument("loglog_fit: need at least 2 rows for '" + architecture + "'");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  LogLogFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

std::string machine_specs_line() {
  std::string model = "unknown cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const std::size_t colon = line.find(':');
      if (colon != std::string::npos) model = trim(line.substr(colon + 1));
      break;
    }
  }
  return "cpu: " + model + " | threads: " + std::to_string(std::thread::hardware_concurrency()) +
         " | scalar: " + std::to_string(sizeof(Scalar) * 8) + "-bit";
}

std::string latency_csv(const std::vector<LatencyRow>& rows,
                        const std::vector<std::string>& meta_lines) {
  std::string out;
  for (const std::string& meta : meta_lines) {
    if (!meta.empty()) out += "# " + meta + "\n";
  }
  out += "architecture,n_passages,median_s,p95_s\n";
  std::ostringstream os;
  os << std::scientific << std::setprecision(6);
  for (const LatencyRow& row : rows) {
    os.str("");
    os << row.median_s << "," << row.p95_s;
    out += row.architecture + "," + std::to_string(row.n_passages) + "," + os.str() + "\n";
  }
  return out;
}

}  // namespace passmatch

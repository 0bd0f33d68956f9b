// SPDX-License-Identifier: Apache-2.0
#include "passmatch/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "passmatch/util.hpp"

namespace passmatch {

// ==================== Lexical index ====================

InvertedIndex InvertedIndex::build(const Corpus& corpus) {
  InvertedIndex idx;
  idx.lengths_.resize(static_cast<std::size_t>(corpus.n_passages()), 0);
  long total = 0;
  for (int i = 0; i < corpus.n_passages(); ++i) {
    std::map<std::string, int> counts;
    const std::vector<std::string> toks = word_tokens(corpus.passage(i).text);
    for (const std::string& t : toks) ++counts[t];
    idx.lengths_[static_cast<std::size_t>(i)] = static_cast<int>(toks.size());
    total += static_cast<long>(toks.size());
    for (const auto& [term, tf] : counts) {
      idx.postings_[term].push_back({i, tf});  // i ascends: postings stay sorted
    }
  }
  idx.avgdl_ = idx.lengths_.empty()
                   ? 0.0
                   : static_cast<double>(total) / static_cast<double>(idx.lengths_.size());

  idx.tfidf_norms_.assign(idx.lengths_.size(), 0.0);
  for (const auto& [term, posts] : idx.postings_) {
    const double w_idf = idx.idf(term);
    for (const Posting& p : posts) {
      const double w = std::log(1.0 + static_cast<double>(p.tf)) * w_idf;
      idx.tfidf_norms_[static_cast<std::size_t>(p.passage)] += w * w;
    }
  }
  for (double& n : idx.tfidf_norms_) n = std::sqrt(n);
  return idx;
}

int InvertedIndex::doc_length(int passage) const {
  return lengths_.at(static_cast<std::size_t>(passage));
}

int InvertedIndex::document_frequency(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
}

int InvertedIndex::term_frequency(const std::string& term, int passage) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return 0;
  const auto& posts = it->second;
  auto pit = std::lower_bound(posts.begin(), posts.end(), passage,
                              [](const Posting& p, int v) { return p.passage < v; });
  if (pit == posts.end() || pit->passage != passage) return 0;
  return pit->tf;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

double InvertedIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(lengths_.size());
  const double df = static_cast<double>(document_frequency(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double InvertedIndex::tfidf_norm(int passage) const {
  return tfidf_norms_.at(static_cast<std::size_t>(passage));
}

double bm25_score(const std::vector<std::string>& query_terms, int passage,
                  const InvertedIndex& index, double k1, double b) {
  if (index.n_passages() == 0) return 0.0;
  const double dl = static_cast<double>(index.doc_length(passage));
  const double avgdl = index.avgdl();
  double score = 0;
  for (const std::string& term : query_terms) {
    const double tf = static_cast<double>(index.term_frequency(term, passage));
    if (tf == 0) continue;
    score += index.idf(term) * tf * (k1 + 1.0) /
             (tf + k1 * (1.0 - b + b * dl / avgdl));
  }
  return score;
}

double tfidf_score(const std::vector<std::string>& query_terms, int passage,
                   const InvertedIndex& index) {
  if (index.n_passages() == 0) return 0.0;
  std::map<std::string, int> q_counts;
  for (const std::string& t : query_terms) ++q_counts[t];
  double dot = 0, q_norm2 = 0;
  for (const auto& [term, tfq] : q_counts) {
    const double w_idf = index.idf(term);
    const double wq = std::log(1.0 + static_cast<double>(tfq)) * w_idf;
    q_norm2 += wq * wq;
    const int tfd = index.term_frequency(term, passage);
    if (tfd > 0) dot += wq * std::log(1.0 + static_cast<double>(tfd)) * w_idf;
  }
  const double d_norm = index.tfidf_norm(passage);
  if (q_norm2 == 0 || d_norm == 0) return 0.0;
  return dot / (std::sqrt(q_norm2) * d_norm);
}

// ==================== Ranked lists ====================

void sort_ranked(RankedList& list) {
  std::sort(list.begin(), list.end(), [](const ScoredPassage& a, const ScoredPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

// ==================== Vector index ====================

VectorIndex build_vector_index(const Corpus& corpus, BiMatcher& matcher,
                               const std::string& metric, std::uint64_t fingerprint) {
  if (metric != "dot" && metric != "cosine") {
    throw std::invalid_argument("build_vector_index: metric must be dot or cosine, got '" +
                                metric + "'");
  }
  VectorIndex index;
  index.metric = metric;
  index.fingerprint = fingerprint;
  const int n = corpus.n_passages();
  if (n == 0) throw std::invalid_argument("build_vector_index: empty corpus");
  const int d = matcher.config().encoder.d_model;
  std::vector<Scalar> rows;
  rows.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  Tape::Pause pause;
  for (int i = 0; i < n; ++i) {
    const Passage& p = corpus.passage(i);
    index.ids.push_back(p.id());
    Tensor v = matcher.embed_passage(p);
    auto span = v.data();
    rows.insert(rows.end(), span.begin(), span.end());
  }
  index.matrix = Tensor::from_vector({n, d}, std::move(rows));
  return index;
}

namespace {

void append_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

struct ByteReader {
  const std::string& raw;
  std::size_t pos = 0;
  const std::string origin;

  void need(std::size_t n) const {
    if (pos + n > raw.size()) {
      throw std::runtime_error("vector index " + origin + ": truncated file");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, raw.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, raw.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = raw.substr(pos, n);
    pos += n;
    return s;
  }
};

constexpr char kIndexMagic[4] = {'P', 'M', 'V', 'I'};
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

void save_vector_index(const VectorIndex& index, const std::filesystem::path& path) {
  const int n = static_cast<int>(index.ids.size());
  if (index.matrix.rank() != 2 || index.matrix.rows() != n) {
    throw std::invalid_argument("save_vector_index: id/matrix row count mismatch");
  }
  std::string out;
  out.append(kIndexMagic, 4);
  append_u32(out, kIndexVersion);
  out.push_back(index.metric == "cosine" ? 1 : 0);
  out.push_back(static_cast<char>(sizeof(Scalar)));
  append_u32(out, static_cast<std::uint32_t>(index.matrix.cols()));
  append_u64(out, static_cast<std::uint64_t>(n));
  append_u64(out, index.fingerprint);
  for (const std::string& id : index.ids) {
    append_u32(out, static_cast<std::uint32_t>(id.size()));
    out.append(id);
  }
  auto span = index.matrix.data();
  out.append(reinterpret_cast<const char*>(span.data()), span.size_bytes());
  atomic_write_file(path, out);
}

VectorIndex load_vector_index(const std::filesystem::path& path) {
  const std::string raw = read_text_file(path);
  ByteReader r{raw, 0, path.string()};
  if (r.bytes(4) != std::string(kIndexMagic, 4)) {
    throw std::runtime_error("vector index " + path.string() + ": bad magic, not an index file");
  }
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion) {
    throw std::runtime_error("vector index " + path.string() + ": unsupported version " +
                             std::to_string(version));
  }
  const char metric_code = r.bytes(1)[0];
  const char dtype = r.bytes(1)[0];
  if (dtype != static_cast<char>(sizeof(Scalar))) {
    throw std::runtime_error("vector index " + path.string() + ": scalar width " +
                             std::to_string(static_cast<int>(dtype)) + " does not match build (" +
                             std::to_string(sizeof(Scalar)) + ")");
  }
  const int d = static_cast<int>(r.u32());
  const std::uint64_t n = r.u64();
  VectorIndex index;
  index.metric = metric_code == 1 ? "cosine" : "dot";
  index.fingerprint = r.u64();
  index.ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t len = r.u32();
    index.ids.push_back(r.bytes(len));
  }
  const std::size_t count = static_cast<std::size_t>(n) * static_cast<std::size_t>(d);
  r.need(count * sizeof(Scalar));
  std::vector<Scalar> values(count);
  std::memcpy(values.data(), raw.data() + r.pos, count * sizeof(Scalar));
  r.pos += count * sizeof(Scalar);
  if (r.pos != raw.size()) {
    throw std::runtime_error("vector index " + path.string() + ": trailing bytes");
  }
  index.matrix = Tensor::from_vector({static_cast<int>(n), d}, std::move(values));
  return index;
}

RankedList knn(const VectorIndex& index, const Tensor& query_vec, int k) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1, got " + std::to_string(k));
  if (query_vec.rank() != 1 || query_vec.dim(0) != index.matrix.cols()) {
    throw std::invalid_argument("knn: query vector dimension mismatch");
  }
  const bool cosine_metric = index.metric == "cosine";
  const int n = index.matrix.rows();
  const int d = index.matrix.cols();
  auto q = query_vec.data();
  auto m = index.matrix.data();
  RankedList scored;
  scored.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Scalar* row = m.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    double dot = 0, nq = 0, nr = 0;
    for (int j = 0; j < d; ++j) {
      dot += static_cast<double>(q[static_cast<std::size_t>(j)]) * static_cast<double>(row[j]);
      nq += static_cast<double>(q[static_cast<std::size_t>(j)]) *
            static_cast<double>(q[static_cast<std::size_t>(j)]);
      nr += static_cast<double>(row[j]) * static_cast<double>(row[j]);
    }
    double s = dot;
    if (cosine_metric) s = (nq == 0 || nr == 0) ? 0.0 : dot / (std::sqrt(nq) * std::sqrt(nr));
    scored.push_back({index.ids[static_cast<std::size_t>(i)], s});
  }
  sort_ranked(scored);
  if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(k));
  return scored;
}

// ==================== Candidate selection ====================

CandidateSet select_candidates(const Query& query, const Corpus& corpus,
                               const InvertedIndex& index, const std::string& mode,
                               const std::set<std::string>& gold_ids, int n,
                               std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("select_candidates: n must be >= 1");
  const int total = corpus.n_passages();
  CandidateSet out;

  if (mode == "bm25") {
    const std::vector<std::string> terms = word_tokens(query.entity + " " + query.aspect);
    RankedList scored;
    scored.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
      scored.push_back({corpus.passage(i).id(), bm25_score(terms, i, index)});
    }
    sort_ranked(scored);
    if (static_cast<int>(scored.size()) > n) scored.resize(static_cast<std::size_t>(n));
    for (const ScoredPassage& s : scored) out.ids.push_back(s.id);
  } else if (mode == "random") {
    std::vector<int> order(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed);
    const int take = std::min(n, total);
    for (int i = 0; i < take; ++i) {
      const int j = std::uniform_int_distribution<int>(i, total - 1)(rng);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < take; ++i) {
      out.ids.push_back(corpus.passage(order[static_cast<std::size_t>(i)]).id());
    }
    bool any_gold = false;
    for (const std::string& id : out.ids) {
      if (gold_ids.count(id)) any_gold = true;
    }
    if (!any_gold) {
      // Swap one gold in (when the corpus has one): recall over the candidate
      // set is meaningless if the answer cannot appear.
      for (const std::string& g : gold_ids) {
        if (corpus.find_passage(g) >= 0) {
          out.ids.back() = g;
          break;
        }
      }
    }
  } else {
    throw std::invalid_argument("select_candidates: mode must be bm25 or random, got '" +
                                mode + "'");
  }

  for (const std::string& id : out.ids) {
    if (gold_ids.count(id)) out.gold_present = true;
  }
  return out;
}

// ==================== Re-ranking ====================

namespace {

const Passage& passage_by_id(const Corpus& corpus, const std::string& id) {
  const int idx = corpus.find_passage(id);
  if (idx < 0) {
    throw std::invalid_argument("rerank: candidate '" + id + "' is not in the corpus");
  }
  return corpus.passage(idx);
}

}  // namespace

RankedList rerank(Matcher& matcher, const Corpus& corpus, const Query& query,
                  const std::vector<std::string>& candidate_ids) {
  if (candidate_ids.empty()) throw std::invalid_argument("rerank: no candidates");
  Tape::Pause pause;
  RankedList out;
  out.reserve(candidate_ids.size());
  for (const std::string& id : candidate_ids) {
    const Passage& p = passage_by_id(corpus, id);
    out.push_back({id, static_cast<double>(matcher.score_pair(query, p).item())});
  }
  sort_ranked(out);
  return out;
}

RankedList rerank_bi_cached(BiMatcher& matcher, const VectorIndex& index, const Query& query,
                            const std::vector<std::string>& candidate_ids,
                            std::uint64_t matcher_fingerprint) {
  if (candidate_ids.empty()) throw std::invalid_argument("rerank: no candidates");
  if (index.fingerprint != matcher_fingerprint) {
    throw std::runtime_error("rerank: index fingerprint " + hex64(index.fingerprint) +
                             " does not match the matcher checkpoint " +
                             hex64(matcher_fingerprint) + "; rebuild the index");
  }
  std::unordered_map<std::string, int> row_of;
  row_of.reserve(index.ids.size());
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    row_of.emplace(index.ids[i], static_cast<int>(i));
  }
  Tape::Pause pause;
  const Tensor q = matcher.embed_query(query);
  auto qs = q.data();
  auto m = index.matrix.data();
  const int d = index.matrix.cols();
  const bool cosine_metric = index.metric == "cosine";
  RankedList out;
  out.reserve(candidate_ids.size());
  for (const std::string& id : candidate_ids) {
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw std::invalid_argument("rerank: candidate '" + id + "' is not in the index");
    }
    const Scalar* row =
        m.data() + static_cast<std::size_t>(it->second) * static_cast<std::size_t>(d);
    double dot = 0, nq = 0, nr = 0;
    for (int j = 0; j < d; ++j) {
      dot += static_cast<double>(qs[static_cast<std::size_t>(j)]) * static_cast<double>(row[j]);
      nq += static_cast<double>(qs[static_cast<std::size_t>(j)]) *
            static_cast<double>(qs[static_cast<std::size_t>(j)]);
      nr += static_cast<double>(row[j]) * static_cast<double>(row[j]);
    }
    double s = dot;
    if (cosine_metric) s = (nq == 0 || nr == 0) ? 0.0 : dot / (std::sqrt(nq) * std::sqrt(nr));
    out.push_back({id, s});
  }
  sort_ranked(out);
  return out;
}

PolyCache build_poly_cache(const Corpus& corpus, PolyMatcher& matcher,
                           std::uint64_t fingerprint) {
  PolyCache cache;
  cache.fingerprint = fingerprint;
  Tape::Pause pause;
  for (int i = 0; i < corpus.n_passages(); ++i) {
    const Passage& p = corpus.passage(i);
    cache.ids.push_back(p.id());
    cache.token_states.push_back(matcher.passage_tokens(p.text));
  }
  return cache;
}

RankedList rerank_poly_cached(PolyMatcher& matcher, const PolyCache& cache, const Query& query,
                              const std::vector<std::string>& candidate_ids,
                              std::uint64_t matcher_fingerprint) {
  if (candidate_ids.empty()) throw std::invalid_argument("rerank: no candidates");
  if (cache.fingerprint != matcher_fingerprint) {
    throw std::runtime_error("rerank: poly cache fingerprint " + hex64(cache.fingerprint) +
                             " does not match the matcher checkpoint " +
                             hex64(matcher_fingerprint) + "; rebuild the cache");
  }
  std::unordered_map<std::string, int> row_of;
  row_of.reserve(cache.ids.size());
  for (std::size_t i = 0; i < cache.ids.size(); ++i) {
    row_of.emplace(cache.ids[i], static_cast<int>(i));
  }
  Tape::Pause pause;
  const Tensor q = matcher.embed_query(query);
  RankedList out;
  out.reserve(candidate_ids.size());
  for (const std::string& id : candidate_ids) {
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw std::invalid_argument("rerank: candidate '" + id + "' is not in the cache");
    }
    const Tensor& toks = cache.token_states[static_cast<std::size_t>(it->second)];
    out.push_back({id, static_cast<double>(matcher.combine(q, toks).item())});
  }
  sort_ranked(out);
  return out;
}

}  // namespace passmatch

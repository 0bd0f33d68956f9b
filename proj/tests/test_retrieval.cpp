// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "passmatch/corpus.hpp"
#include "passmatch/encoders.hpp"
#include "passmatch/retrieval.hpp"
#include "passmatch/util.hpp"

using namespace passmatch;
namespace fs = std::filesystem;

namespace {

// Five passages with hand-picked token overlap for the lexical oracles.
Corpus toy_corpus() {
  Document d1, d2, d3;
  d1.id = "d1";
  d1.sections = {{"Notes", {"the heart rate was stable.", "heart failure was ruled out."}},
                 {"Plan", {"monitor heart rate overnight.", "repeat labs tomorrow."}}};
  d2.id = "d2";
  d2.sections = {{"Notes", {"chronic kidney disease stage three.", "baseline labs drawn."}},
                 {"Plan", {"renal diet education provided.", "follow up in clinic."}}};
  d3.id = "d3";
  d3.sections = {{"Notes", {"no acute distress observed today.", "patient ambulating well."}}};
  return Corpus::from_documents({d1, d2, d3});
}

std::vector<std::vector<std::string>> token_lists(const Corpus& c) {
  std::vector<std::vector<std::string>> out;
  for (int i = 0; i < c.n_passages(); ++i) out.push_back(word_tokens(c.passage(i).text));
  return out;
}

MatcherConfig small_config(const std::string& arch, std::uint64_t seed) {
  MatcherConfig cfg;
  cfg.architecture = arch;
  cfg.encoder.d_model = 8;
  cfg.encoder.n_heads = 2;
  cfg.encoder.n_layers = 1;
  cfg.encoder.ffn_dim = 8;
  cfg.encoder.max_len = 32;
  cfg.encoder.seed = seed;
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("passmatch-retr-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

// ==================== inverted index ====================

TEST_CASE("inverted index counts terms, lengths, and document frequencies") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  REQUIRE(idx.n_passages() == 5);

  // "heart" occurs twice in d1#0, once in d1#1, nowhere else.
  CHECK(idx.document_frequency("heart") == 2);
  CHECK(idx.term_frequency("heart", 0) == 2);
  CHECK(idx.term_frequency("heart", 1) == 1);
  CHECK(idx.term_frequency("heart", 2) == 0);
  CHECK(idx.document_frequency("nowhere-term") == 0);
  CHECK(idx.term_frequency("nowhere-term", 0) == 0);

  const auto lists = token_lists(c);
  double total = 0;
  for (int i = 0; i < 5; ++i) {
    CHECK(idx.doc_length(i) == static_cast<int>(lists[static_cast<std::size_t>(i)].size()));
    total += static_cast<double>(lists[static_cast<std::size_t>(i)].size());
  }
  CHECK(idx.avgdl() == doctest::Approx(total / 5.0).epsilon(1e-12));

  const auto* posts = idx.postings("heart");
  REQUIRE(posts != nullptr);
  for (std::size_t i = 1; i < posts->size(); ++i) {
    CHECK((*posts)[i - 1].passage < (*posts)[i].passage);  // sorted by passage
  }
}

// ==================== bm25 ====================

TEST_CASE("bm25 ignores terms the passage lacks") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  const double base = bm25_score({"heart"}, 0, idx);
  CHECK(base > 0);
  CHECK(bm25_score({"heart", "zzz-not-present"}, 0, idx) == base);
  CHECK(bm25_score({"kidney"}, 0, idx) == 0.0);  // in corpus but not this passage
}

TEST_CASE("bm25 with b=0 reduces to the pure saturation formula") {
  Document d;
  d.id = "solo";
  d.sections = {{"Notes", {"alpha alpha beta gamma.", "alpha beta again."}}};
  Corpus c = Corpus::from_documents({d});
  InvertedIndex idx = InvertedIndex::build(c);
  const double k1 = 1.2;
  const double tf = 3.0;  // "alpha" in passage 0
  const double idf = std::log((1.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0);
  const double want = idf * tf * (k1 + 1.0) / (tf + k1);
  CHECK(bm25_score({"alpha"}, 0, idx, k1, 0.0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("bm25 matches the brute-force oracle on the toy corpus") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  const auto lists = token_lists(c);
  const std::vector<std::vector<std::string>> queries = {
      {"heart", "rate"},
      {"chronic", "kidney", "disease"},
      {"labs"},
      {"heart", "heart"},  // repeated query terms stack
      {"stable", "baseline", "unseen-word"},
  };
  for (const auto& q : queries) {
    for (int p = 0; p < c.n_passages(); ++p) {
      CAPTURE(p);
      const double got = bm25_score(q, p, idx);
      const double want = oracles::bm25(q, lists, static_cast<std::size_t>(p));
      CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("an extra occurrence of a query term never lowers bm25") {
  // Same lengths, same df, only tf differs: score must not decrease.
  Document a, b;
  a.id = "a";
  a.sections = {{"Notes", {"heart filler filler filler."}}};
  b.id = "b";
  b.sections = {{"Notes", {"heart heart filler filler."}}};
  Document pad;
  pad.id = "pad";
  pad.sections = {{"Notes", {"other words entirely here."}}};
  Corpus c1 = Corpus::from_documents({a, pad});
  Corpus c2 = Corpus::from_documents({b, pad});
  const double s1 = bm25_score({"heart"}, 0, InvertedIndex::build(c1));
  const double s2 = bm25_score({"heart"}, 0, InvertedIndex::build(c2));
  CHECK(s2 >= s1);
}

// ==================== tf-idf ====================

TEST_CASE("tfidf cosine is 1 for identical texts and 0 when nothing overlaps") {
  Document a, b;
  a.id = "a";
  a.sections = {{"Notes", {"alpha beta gamma delta."}}};
  b.id = "b";
  b.sections = {{"Notes", {"epsilon zeta eta theta."}}};
  Corpus c = Corpus::from_documents({a, b});
  InvertedIndex idx = InvertedIndex::build(c);
  const auto self = word_tokens(c.passage(0).text);
  CHECK(tfidf_score(self, 0, idx) == doctest::Approx(1.0).epsilon(1e-12));
  // the two passages share the sentence-final "." token, so compare against a
  // query with no overlap at all
  CHECK(tfidf_score({"epsilon", "zeta"}, 0, idx) == 0.0);
  CHECK(tfidf_score({"totally", "absent"}, 1, idx) == 0.0);
}

TEST_CASE("tfidf matches the brute-force oracle on the toy corpus") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  const auto lists = token_lists(c);
  const std::vector<std::vector<std::string>> queries = {
      {"heart", "rate", "stable"},
      {"kidney", "diet"},
      {"labs", "labs", "tomorrow"},
      {"absent-token", "heart"},
  };
  for (const auto& q : queries) {
    for (int p = 0; p < c.n_passages(); ++p) {
      CAPTURE(p);
      const double got = tfidf_score(q, p, idx);
      const double want = oracles::tfidf_cosine(q, lists, static_cast<std::size_t>(p));
      CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

// ==================== vector index ====================

TEST_CASE("vector index rows equal direct passage embeddings") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 5), v);
  auto* bi = dynamic_cast<BiMatcher*>(m.get());
  REQUIRE(bi != nullptr);

  VectorIndex idx = build_vector_index(c, *bi, "dot", 99);
  CHECK(idx.ids.size() == 5);
  CHECK(idx.matrix.rows() == 5);
  CHECK(idx.matrix.cols() == 8);
  CHECK(idx.fingerprint == 99);

  Tape::Pause pause;
  for (int i = 0; i < 5; ++i) {
    Tensor direct = bi->embed_passage(c.passage(i));
    for (int j = 0; j < 8; ++j) {
      CHECK(idx.matrix.at(i, j) == direct.at(j));  // bitwise
    }
  }

  VectorIndex again = build_vector_index(c, *bi, "dot", 99);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 8; ++j) CHECK(again.matrix.at(i, j) == idx.matrix.at(i, j));
  }
}

TEST_CASE("single passage index is one row") {
  Document d;
  d.id = "solo";
  d.sections = {{"Notes", {"just one passage here.", "nothing else."}}};
  Corpus c = Corpus::from_documents({d});
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 2), v);
  VectorIndex idx = build_vector_index(c, *dynamic_cast<BiMatcher*>(m.get()));
  CHECK(idx.ids == std::vector<std::string>{"solo#0"});
  CHECK(idx.matrix.rows() == 1);
}

TEST_CASE("knn matches the brute-force oracle on random data") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist(0.0, 1.0);
  const int n = 20, d = 5;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::vector<Scalar> flat;
  for (int i = 0; i < n; ++i) {
    ids.push_back("p#" + std::to_string(i));
    std::vector<double> row;
    for (int j = 0; j < d; ++j) {
      row.push_back(dist(rng));
      flat.push_back(static_cast<Scalar>(row.back()));
    }
    rows.push_back(row);
  }
  std::vector<double> q;
  std::vector<Scalar> qs;
  for (int j = 0; j < d; ++j) {
    q.push_back(dist(rng));
    qs.push_back(static_cast<Scalar>(q.back()));
  }

  for (const std::string metric : {"dot", "cosine"}) {
    CAPTURE(metric);
    VectorIndex idx;
    idx.metric = metric;
    idx.ids = ids;
    idx.matrix = Tensor::from_vector({n, d}, flat);
    RankedList got = knn(idx, Tensor::from_vector({d}, qs), 7);
    auto want = oracles::knn(q, ids, rows, 7, metric == "cosine");
    REQUIRE(got.size() == 7);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("knn self-query under cosine ranks the row first with score 1") {
  const int n = 4, d = 3;
  std::vector<Scalar> flat = {1, 2, 3, -4, 0, 1, 2, 2, -1, 0.5, -3, 2};
  VectorIndex idx;
  idx.metric = "cosine";
  idx.ids = {"a", "b", "c", "d"};
  idx.matrix = Tensor::from_vector({n, d}, flat);
  RankedList top = knn(idx, Tensor::from_values({-4, 0, 1}), n);
  CHECK(top[0].id == "b");
  CHECK(top[0].score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(top.size() == 4);

  RankedList clamped = knn(idx, Tensor::from_values({-4, 0, 1}), 100);
  CHECK(clamped.size() == 4);  // k beyond N returns N
  CHECK_THROWS_AS(knn(idx, Tensor::from_values({-4, 0, 1}), 0), std::invalid_argument);
}

TEST_CASE("equal scores break ties by ascending id") {
  VectorIndex idx;
  idx.metric = "dot";
  idx.ids = {"zz", "aa", "mm"};
  idx.matrix = Tensor::from_vector({3, 2}, {1, 0, 1, 0, 1, 0});  // identical rows
  RankedList top = knn(idx, Tensor::from_values({1, 1}), 3);
  CHECK(top[0].id == "aa");
  CHECK(top[1].id == "mm");
  CHECK(top[2].id == "zz");
}

TEST_CASE("vector index survives a save/load round trip bit for bit") {
  TempDir tmp;
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 7), v);
  auto* bi = dynamic_cast<BiMatcher*>(m.get());
  VectorIndex idx = build_vector_index(c, *bi, "cosine", fnv1a64("ckpt-bytes"));
  fs::path path = tmp.path / "toy.pmvi";
  save_vector_index(idx, path);
  VectorIndex back = load_vector_index(path);
  CHECK(back.metric == idx.metric);
  CHECK(back.ids == idx.ids);
  CHECK(back.fingerprint == idx.fingerprint);
  REQUIRE(back.matrix.shape() == idx.matrix.shape());
  for (int i = 0; i < idx.matrix.rows(); ++i) {
    for (int j = 0; j < idx.matrix.cols(); ++j) {
      CHECK(back.matrix.at(i, j) == idx.matrix.at(i, j));
    }
  }

  SUBCASE("bad magic") {
    fs::path bad = tmp.path / "bad.pmvi";
    atomic_write_file(bad, "NOPE this is not an index");
    CHECK_THROWS_WITH_AS(load_vector_index(bad), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("truncation") {
    const std::string raw = read_text_file(path);
    fs::path bad = tmp.path / "short.pmvi";
    atomic_write_file(bad, raw.substr(0, raw.size() - 17));
    CHECK_THROWS_WITH_AS(load_vector_index(bad), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("version bump") {
    std::string raw = read_text_file(path);
    raw[4] = 9;  // version field follows the 4-byte magic
    fs::path bad = tmp.path / "vers.pmvi";
    atomic_write_file(bad, raw);
    CHECK_THROWS_WITH_AS(load_vector_index(bad), doctest::Contains("unsupported version"),
                         std::runtime_error);
  }
}

// ==================== candidate selection ====================

TEST_CASE("small corpora return every passage as candidate") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  Query q{"heart", "notes"};
  CandidateSet cs = select_candidates(q, c, idx, "bm25", {"d1#0"}, 64, 1);
  CHECK(cs.ids.size() == 5);
  CHECK(cs.gold_present);

  CandidateSet rs = select_candidates(q, c, idx, "random", {"d1#0"}, 64, 1);
  CHECK(rs.ids.size() == 5);
  CHECK(rs.gold_present);
  CHECK_THROWS_AS(select_candidates(q, c, idx, "fuzzy", {}, 4, 1), std::invalid_argument);
}

TEST_CASE("bm25 candidates are the top scorers; gold presence is reported not forced") {
  Corpus c = toy_corpus();
  InvertedIndex idx = InvertedIndex::build(c);
  Query q{"heart", "rate"};
  CandidateSet cs = select_candidates(q, c, idx, "bm25", {"d3#0"}, 2, 1);
  REQUIRE(cs.ids.size() == 2);
  // d3#0 shares no query term, so it cannot be in the top 2.
  CHECK_FALSE(cs.gold_present);
  const std::vector<std::string> qt = {"heart", "rate"};
  const double s0 = bm25_score(qt, c.find_passage(cs.ids[0]), idx);
  const double s1 = bm25_score(qt, c.find_passage(cs.ids[1]), idx);
  CHECK(s0 >= s1);
  for (int p = 0; p < c.n_passages(); ++p) {
    const std::string id = c.passage(p).id();
    if (id == cs.ids[0] || id == cs.ids[1]) continue;
    CHECK(bm25_score(qt, p, idx) <= s1);
  }

  CandidateSet repeat = select_candidates(q, c, idx, "bm25", {"d3#0"}, 2, 99);
  CHECK(repeat.ids == cs.ids);  // seed plays no role in bm25 mode
}

TEST_CASE("random candidates are distinct, seeded, and always include a gold") {
  GeneratorParams gp;
  gp.n_docs = 10;
  gp.apply_defaults();
  Corpus c = generate_synthetic(gp, 5).corpus;
  REQUIRE(c.n_passages() > 8);
  InvertedIndex idx = InvertedIndex::build(c);
  Query q{"anything", "at all"};
  const std::string gold = c.passage(c.n_passages() - 1).id();

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CandidateSet cs = select_candidates(q, c, idx, "random", {gold}, 4, seed);
    REQUIRE(cs.ids.size() == 4);
    std::set<std::string> uniq(cs.ids.begin(), cs.ids.end());
    CHECK(uniq.size() == 4);
    CHECK(cs.gold_present);  // injected when the draw misses it
    CHECK(uniq.count(gold) == 1);
  }

  CandidateSet a = select_candidates(q, c, idx, "random", {gold}, 4, 123);
  CandidateSet b = select_candidates(q, c, idx, "random", {gold}, 4, 123);
  CHECK(a.ids == b.ids);

  // a gold that is not in the corpus cannot be injected
  CandidateSet ghost = select_candidates(q, c, idx, "random", {"ghost#7"}, 4, 9);
  CHECK_FALSE(ghost.gold_present);
}

// ==================== re-ranking ====================

TEST_CASE("bi rerank equals knn restricted to the full corpus") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 11), v);
  auto* bi = dynamic_cast<BiMatcher*>(m.get());
  VectorIndex idx = build_vector_index(c, *bi, "dot", 0);

  std::vector<std::string> all_ids = idx.ids;
  Query q{"heart", "notes"};
  RankedList via_pairs = rerank(*m, c, q, all_ids);
  Tape::Pause pause;
  RankedList via_knn = knn(idx, bi->embed_query(q), c.n_passages());
  RankedList via_cache = rerank_bi_cached(*bi, idx, q, all_ids, 0);
  REQUIRE(via_pairs.size() == via_knn.size());
  for (std::size_t i = 0; i < via_pairs.size(); ++i) {
    CHECK(via_pairs[i].id == via_knn[i].id);
    CHECK(via_pairs[i].score == via_knn[i].score);  // same accumulation order
    CHECK(via_cache[i].id == via_knn[i].id);
    CHECK(via_cache[i].score == via_knn[i].score);
  }
}

TEST_CASE("a single candidate is rank one regardless of score") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  for (const std::string arch : {"bi", "poly", "cross", "cdv"}) {
    CAPTURE(arch);
    auto m = make_matcher(small_config(arch, 13), v);
    RankedList r = rerank(*m, c, Query{"kidney", "plan"}, {"d2#1"});
    REQUIRE(r.size() == 1);
    CHECK(r[0].id == "d2#1");
  }
}

TEST_CASE("rerank rejects empty candidate lists and unknown ids") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 13), v);
  CHECK_THROWS_AS(rerank(*m, c, Query{"x", "y"}, {}), std::invalid_argument);
  CHECK_THROWS_WITH_AS(rerank(*m, c, Query{"x", "y"}, {"ghost#0"}),
                       doctest::Contains("not in the corpus"), std::invalid_argument);
}

TEST_CASE("fingerprint mismatches are refused") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("bi", 11), v);
  auto* bi = dynamic_cast<BiMatcher*>(m.get());
  VectorIndex idx = build_vector_index(c, *bi, "dot", 1111);
  CHECK_THROWS_WITH_AS(rerank_bi_cached(*bi, idx, Query{"a", "b"}, {"d1#0"}, 2222),
                       doctest::Contains("fingerprint"), std::runtime_error);

  auto pm = make_matcher(small_config("poly", 11), v);
  auto* poly = dynamic_cast<PolyMatcher*>(pm.get());
  PolyCache cache = build_poly_cache(c, *poly, 1111);
  CHECK_THROWS_WITH_AS(rerank_poly_cached(*poly, cache, Query{"a", "b"}, {"d1#0"}, 2222),
                       doctest::Contains("fingerprint"), std::runtime_error);
}

TEST_CASE("cached poly scores equal pairwise poly scores") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("poly", 19), v);
  auto* poly = dynamic_cast<PolyMatcher*>(m.get());
  PolyCache cache = build_poly_cache(c, *poly, 0);
  Query q{"kidney", "notes"};
  std::vector<std::string> ids;
  for (int i = 0; i < c.n_passages(); ++i) ids.push_back(c.passage(i).id());

  RankedList cached = rerank_poly_cached(*poly, cache, q, ids, 0);
  RankedList direct = rerank(*m, c, q, ids);
  REQUIRE(cached.size() == direct.size());
  for (std::size_t i = 0; i < cached.size(); ++i) {
    CHECK(cached[i].id == direct[i].id);
    CHECK(cached[i].score == direct[i].score);  // same graph either way
  }
}

TEST_CASE("cross rerank is deterministic") {
  Corpus c = toy_corpus();
  Vocab v = Vocab::build(c);
  auto m = make_matcher(small_config("cross", 23), v);
  std::vector<std::string> ids = {"d1#0", "d2#0", "d3#0"};
  Query q{"heart failure", "notes"};
  RankedList a = rerank(*m, c, q, ids);
  RankedList b = rerank(*m, c, q, ids);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].score == b[i].score);
  }
  // no duplicate ids in any ranked list
  std::set<std::string> uniq;
  for (const auto& s : a) uniq.insert(s.id);
  CHECK(uniq.size() == a.size());
}

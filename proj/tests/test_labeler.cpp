// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "passmatch/corpus.hpp"
#include "passmatch/labeler.hpp"
#include "passmatch/util.hpp"

using namespace passmatch;

namespace {

// Independent reference: enumerate every boundary-clean alias occurrence,
// then sweep by (start asc, length desc) keeping non-overlapping hits. The
// production scanner must agree with this on arbitrary text.
std::vector<EntityMention> find_entities_brute(const std::string& text, const Gazetteer& g) {
  const std::string hay = to_lower(text);
  struct Hit {
    std::size_t begin, end;
    std::string alias, canonical;
  };
  std::vector<Hit> hits;
  for (const auto& [alias, canonical] : g.entries()) {
    std::size_t pos = 0;
    while ((pos = hay.find(alias, pos)) != std::string::npos) {
      const std::size_t end = pos + alias.size();
      const bool l = pos == 0 || !is_word_char(static_cast<unsigned char>(hay[pos - 1]));
      const bool r = end == hay.size() || !is_word_char(static_cast<unsigned char>(hay[end]));
      if (l && r) hits.push_back({pos, end, alias, canonical});
      ++pos;
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.begin != b.begin) return a.begin < b.begin;
    if (a.end != b.end) return a.end > b.end;
    return a.alias < b.alias;
  });
  std::vector<EntityMention> out;
  std::size_t covered = 0;
  for (const Hit& h : hits) {
    if (h.begin < covered) continue;
    EntityMention m;
    m.begin = static_cast<int>(h.begin);
    m.end = static_cast<int>(h.end);
    m.surface = text.substr(h.begin, h.end - h.begin);
    m.canonical = h.canonical;
    out.push_back(std::move(m));
    covered = h.end;
  }
  return out;
}

bool same_mentions(const std::vector<EntityMention>& a, const std::vector<EntityMention>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].begin != b[i].begin || a[i].end != b[i].end || a[i].surface != b[i].surface ||
        a[i].canonical != b[i].canonical)
      return false;
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("passmatch_labeler_" + name);
}

}  // namespace

TEST_CASE("longest alias wins at a shared start") {
  Gazetteer g = Gazetteer::from_pairs({{"heart", "heart"}, {"heart failure", "heart failure"}});
  auto got = find_entities("chronic heart failure noted", g);
  REQUIRE(got.size() == 1);
  CHECK(got[0].canonical == "heart failure");
  CHECK(got[0].begin == 8);
  CHECK(got[0].end == 21);
  CHECK(got[0].surface == "heart failure");
}

TEST_CASE("scan resumes after a match and finds later shorter aliases") {
  Gazetteer g = Gazetteer::from_pairs({{"heart", "heart"}, {"heart failure", "heart failure"}});
  auto got = find_entities("heart failure and heart rate", g);
  REQUIRE(got.size() == 2);
  CHECK(got[0].canonical == "heart failure");
  CHECK(got[1].canonical == "heart");
  CHECK(got[1].begin == 18);
}

TEST_CASE("matches respect word boundaries and casing") {
  Gazetteer g = Gazetteer::from_pairs({{"heart", "heart"}});
  CHECK(find_entities("a hearty meal", g).empty());
  CHECK(find_entities("sweetheart", g).empty());
  auto got = find_entities("Heart rate is fine; heart, too.", g);
  REQUIRE(got.size() == 2);
  CHECK(got[0].surface == "Heart");
  CHECK(got[0].canonical == "heart");
  CHECK(got[1].surface == "heart");
}

TEST_CASE("aliases map to canonical forms") {
  Gazetteer g = Gazetteer::from_pairs({{"chf", "heart failure"}, {"htn", "hypertension"}});
  auto got = find_entities("CHF with poorly controlled HTN", g);
  REQUIRE(got.size() == 2);
  CHECK(got[0].surface == "CHF");
  CHECK(got[0].canonical == "heart failure");
  CHECK(got[1].canonical == "hypertension");
}

TEST_CASE("gazetteer construction and file loading") {
  CHECK_THROWS_AS(Gazetteer::from_pairs({{"", "x"}}), std::invalid_argument);
  CHECK_THROWS_AS(Gazetteer::from_pairs({{"a", "x"}, {"a", "y"}}), std::invalid_argument);
  CHECK_NOTHROW(Gazetteer::from_pairs({{"a", "x"}, {"A", "x"}}));  // same mapping twice

  const auto path = temp_file("gaz.tsv");
  atomic_write_file(path, "# comment\nchf\theart failure\n\nasthma\nHTN\thypertension\n");
  Gazetteer g = Gazetteer::load(path);
  CHECK(g.entries().size() == 3);
  CHECK(g.entries().at("chf") == "heart failure");
  CHECK(g.entries().at("asthma") == "asthma");  // bare surface maps to itself
  CHECK(g.entries().at("htn") == "hypertension");
  std::filesystem::remove(path);
}

TEST_CASE("scanner agrees with the brute-force reference on random text") {
  Gazetteer g = Gazetteer::from_pairs({{"heart", "heart"},
                                       {"heart failure", "heart failure"},
                                       {"kidney", "kidney"},
                                       {"chronic kidney disease", "chronic kidney disease"},
                                       {"ckd", "chronic kidney disease"}});
  const std::vector<std::string> vocab = {"the",    "heart",   "failure", "rate", "chronic",
                                          "kidney", "disease", "ckd",     "and",  "stable"};
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<std::size_t> pick_word(0, vocab.size() - 1);
  std::uniform_int_distribution<int> pick_len(3, 12);
  std::uniform_int_distribution<int> coin(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int len = pick_len(rng);
    for (int w = 0; w < len; ++w) {
      if (!text.empty()) text += ' ';
      text += vocab[pick_word(rng)];
      if (coin(rng) == 0) text += ',';
    }
    if (coin(rng) < 5) text += '.';
    CAPTURE(text);
    CHECK(same_mentions(find_entities(text, g), find_entities_brute(text, g)));
  }
}

TEST_CASE("aspect normalization and matching") {
  CHECK(normalize_aspect("CHIEF COMPLAINT:") == "chief complaint");
  CHECK(normalize_aspect("  Family   History ") == "family history");
  CHECK(normalize_aspect("Labs/Results") == "labs results");
  CHECK(normalize_aspect("::") == "");

  const auto rules = default_aspect_rules();
  REQUIRE(match_aspect("CHIEF COMPLAINT:", rules).has_value());
  CHECK(*match_aspect("CHIEF COMPLAINT:", rules) == "chief complaint");
  CHECK(*match_aspect("Family History", rules) == "family history");
  CHECK(*match_aspect("Physical Exam:", rules) == "physical exam");
  CHECK_FALSE(match_aspect("Billing Codes", rules).has_value());
  CHECK_FALSE(match_aspect("", rules).has_value());

  // Without a capture group the whole match is used; first rule wins.
  auto custom = compile_aspect_rules({"^vitals\\b", "^(vital signs)"});
  CHECK(*match_aspect("Vitals today", custom) == "vitals");
  auto ordered = compile_aspect_rules({"^(v)", "^(vitals)"});
  CHECK(*match_aspect("vitals", ordered) == "v");
}

TEST_CASE("bad aspect patterns are reported with their position") {
  CHECK_THROWS_WITH_AS(compile_aspect_rules({"^ok$", "(unclosed"}), doctest::Contains("rule 2"),
                       std::invalid_argument);
  const auto path = temp_file("rules.txt");
  atomic_write_file(path, "# comment\n^ok$\n(unclosed\n");
  CHECK_THROWS_WITH_AS(load_aspect_rules(path), doctest::Contains("line 3"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("a clinical passage is labeled from heading and text") {
  Document d;
  d.id = "note-1";
  d.sections = {{"CHIEF COMPLAINT:", {"Double vision, no nausea or vomiting."}},
                {"Assessment", {"Symptoms improved overnight."}}};
  Corpus c = Corpus::from_documents({d});
  Gazetteer g = Gazetteer::from_pairs({{"double vision", "double vision"}});
  AnnotateReport rep = annotate_corpus(c, g, default_aspect_rules());
  REQUIRE(rep.labels.size() == 1);
  CHECK(rep.labels[0].passage_id == "note-1#0");
  CHECK(rep.labels[0].aspect == "chief complaint");
  REQUIRE(rep.labels[0].entities.size() == 1);
  CHECK(rep.labels[0].entities[0] == "double vision");
  CHECK(rep.n_passages == 2);
  CHECK(rep.n_skipped_no_aspect == 1);  // "Assessment" matches no default rule
  CHECK(rep.n_skipped_no_entity == 0);
}

TEST_CASE("annotation recovers planted labels exactly") {
  GeneratorParams params;
  params.n_docs = 40;
  params.apply_defaults();
  SyntheticCorpus sc = generate_synthetic(params, 21);

  std::vector<std::pair<std::string, std::string>> identity;
  for (const std::string& e : params.entities) identity.emplace_back(e, e);
  Gazetteer g = Gazetteer::from_pairs(identity);

  AnnotateReport rep = annotate_corpus(sc.corpus, g, default_aspect_rules());

  std::map<std::string, std::pair<std::vector<std::string>, std::string>> expected;
  for (const PlantedLabel& p : sc.planted)
    expected[p.doc_id + "#" + std::to_string(p.section_index)] = {p.entities, p.aspect};

  REQUIRE(rep.labels.size() == expected.size());
  for (const Label& lbl : rep.labels) {
    auto it = expected.find(lbl.passage_id);
    REQUIRE(it != expected.end());
    CHECK(lbl.entities == it->second.first);
    CHECK(lbl.aspect == it->second.second);
  }
  CHECK(rep.n_skipped_no_aspect == 0);
  CHECK(static_cast<std::size_t>(rep.n_skipped_no_entity) ==
        static_cast<std::size_t>(rep.n_passages) - expected.size());
  CHECK(static_cast<int>(rep.labels.size()) + rep.n_skipped_no_aspect + rep.n_skipped_no_entity ==
        rep.n_passages);
}

TEST_CASE("label jsonl round trip") {
  std::vector<Label> labels = {{"d1#0", {"asthma"}, "chief complaint"},
                               {"d2#3", {"heart failure", "hypertension"}, "medications"}};
  const std::string text = labels_to_jsonl(labels, "stage=label");
  CHECK(text.rfind("# stage=label\n", 0) == 0);
  std::vector<Label> back = parse_labels(text, "mem");
  REQUIRE(back.size() == 2);
  CHECK(back[0].passage_id == "d1#0");
  CHECK(back[1].entities == labels[1].entities);
  CHECK(labels_to_jsonl(back, "stage=label") == text);

  CHECK_THROWS_WITH_AS(parse_labels("{\"passage_id\":\"x\"}\n", "f"), doctest::Contains("line 1"),
                       std::runtime_error);
  CHECK_THROWS_AS(
      parse_labels("{\"aspect\":\"a\",\"entities\":[],\"passage_id\":\"x\"}\n", "f"),
      std::runtime_error);
  CHECK(parse_labels("# nothing\n", "f").empty());

  const auto path = temp_file("labels.jsonl");
  write_labels(labels, path, "stage=label");
  CHECK(read_labels(path).size() == 2);
  std::filesystem::remove(path);
}

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "doctest.h"
#include "passmatch/corpus.hpp"
#include "passmatch/util.hpp"

using namespace passmatch;

namespace {

Document make_doc(std::string id, std::vector<Section> sections) {
  Document d;
  d.id = std::move(id);
  d.title = "t-" + d.id;
  d.sections = std::move(sections);
  return d;
}

// Case-insensitive whole-word containment, used to confirm planted entities
// really appear in the generated text.
bool mentions(const std::string& text, const std::string& surface) {
  const std::string hay = to_lower(text);
  std::size_t pos = 0;
  while ((pos = hay.find(surface, pos)) != std::string::npos) {
    const bool l = pos == 0 || !is_word_char(static_cast<unsigned char>(hay[pos - 1]));
    const std::size_t end = pos + surface.size();
    const bool r = end == hay.size() || !is_word_char(static_cast<unsigned char>(hay[end]));
    if (l && r) return true;
    ++pos;
  }
  return false;
}

std::string normalized_heading(const std::string& heading) {
  std::string h = to_lower(heading);
  if (!h.empty() && h.back() == ':') h.pop_back();
  return trim(h);
}

}  // namespace

TEST_CASE("passages join section sentences and keep recoverable spans") {
  Section body{"Findings", {"First sentence here.", "Second one."}};
  Section heading_only{"Empty", {}};
  Corpus c = Corpus::from_documents({make_doc("d1", {heading_only, body})});

  REQUIRE(c.n_passages() == 1);
  const Passage& p = c.passage(0);
  CHECK(p.doc_id == "d1");
  CHECK(p.section_index == 1);
  CHECK(p.id() == "d1#1");
  CHECK(p.text == "First sentence here. Second one.");
  const auto sents = p.sentences();
  REQUIRE(sents.size() == 2);
  CHECK(sents[0] == "First sentence here.");
  CHECK(sents[1] == "Second one.");

  CHECK(c.find_passage("d1#1") == 0);
  CHECK(c.find_passage("d1#0") == -1);
  CHECK(c.find_passage("nope#0") == -1);
  REQUIRE(c.find_document("d1") != nullptr);
  CHECK(c.find_document("d1")->title == "t-d1");
  CHECK(c.find_document("absent") == nullptr);
}

TEST_CASE("document validation") {
  Section s{"H", {"One."}};
  CHECK_THROWS_AS(Corpus::from_documents({make_doc("", {s})}), std::invalid_argument);
  CHECK_THROWS_AS(Corpus::from_documents({make_doc("a", {s}), make_doc("a", {s})}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Corpus::from_documents({make_doc("a", {})}), std::invalid_argument);
  // Heading-only sections are allowed as long as the document has sections.
  CHECK_NOTHROW(Corpus::from_documents({make_doc("a", {Section{"H", {}}})}));
}

TEST_CASE("corpus stats on a hand-checked corpus") {
  // Two sentences of three whitespace tokens each.
  Section s{"H", {"alpha beta gamma.", "delta epsilon zeta."}};
  Corpus c = Corpus::from_documents({make_doc("d", {s})});
  CorpusStats st = compute_stats(c);
  CHECK(st.n_docs == 1);
  CHECK(st.n_passages == 1);
  CHECK(st.avg_sentences_per_doc == doctest::Approx(2.0));
  CHECK(st.avg_sentences_per_passage == doctest::Approx(2.0));
  CHECK(st.avg_tokens_per_passage == doctest::Approx(6.0));
  CHECK(st.avg_tokens_per_sentence == doctest::Approx(3.0));

  CorpusStats empty = compute_stats(Corpus{});
  CHECK(empty.n_docs == 0);
  CHECK(empty.n_passages == 0);
  CHECK(empty.avg_sentences_per_doc == 0.0);
  CHECK(empty.avg_tokens_per_sentence == 0.0);
}

TEST_CASE("jsonl round trip is object- and byte-stable") {
  Corpus c = Corpus::from_documents({
      make_doc("a", {Section{"Chief Complaint:", {"Short of breath.", "Two days."}}}),
      make_doc("b", {Section{"MEDICATIONS:", {"List reviewed."}},
                     Section{"Allergies", {"None known."}}}),
  });
  const std::string first = corpus_to_jsonl(c);
  Corpus back = parse_jsonl(first, "mem");
  CHECK(back == c);
  CHECK(corpus_to_jsonl(back) == first);

  // Metadata comment lines are written first and skipped on parse.
  const std::string with_meta = corpus_to_jsonl(c, "cmd=test seed=1");
  CHECK(with_meta.rfind("# cmd=test seed=1\n", 0) == 0);
  CHECK(parse_jsonl(with_meta, "mem") == c);

  CHECK(parse_jsonl("", "mem").documents().empty());
  CHECK(parse_jsonl("# only a comment\n\n", "mem").documents().empty());
}

TEST_CASE("jsonl ingest accepts raw section text and reports bad lines") {
  const std::string content =
      "{\"id\":\"x\",\"title\":\"\",\"sections\":[{\"heading\":\"H\","
      "\"text\":\"First point made. Second point follows.\"}]}\n";
  Corpus c = parse_jsonl(content, "mem");
  REQUIRE(c.n_passages() == 1);
  CHECK(c.passage(0).sentences().size() == 2);

  CHECK_THROWS_WITH_AS(parse_jsonl("{not json}\n", "f.jsonl"),
                       doctest::Contains("f.jsonl line 1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_jsonl("{\"id\":\"x\",\"sections\":[]}\n"
                                   "{\"title\":\"no id\",\"sections\":[]}\n",
                                   "f.jsonl"),
                       doctest::Contains("line 2"), std::runtime_error);
  CHECK_THROWS_AS(parse_jsonl("{\"id\":\"x\",\"sections\":\"not array\"}\n", "mem"),
                  std::runtime_error);
}

TEST_CASE("sentence segmentation") {
  auto got = segment_sentences("Dr. Smith arrived today. The exam was clean.");
  REQUIRE(got.size() == 2);
  CHECK(got[0] == "Dr. Smith arrived today.");
  CHECK(got[1] == "The exam was clean.");

  got = segment_sentences("Pain worsened! Was it new? Yes.");
  REQUIRE(got.size() == 3);
  CHECK(got[1] == "Was it new?");

  // Decimal points and lowercase continuations do not split.
  got = segment_sentences("Dose was 3.5 mg daily. No change was made.");
  REQUIRE(got.size() == 2);
  CHECK(got[0] == "Dose was 3.5 mg daily.");

  got = segment_sentences("Trailing text without punctuation");
  REQUIRE(got.size() == 1);
  CHECK(got[0] == "Trailing text without punctuation");

  CHECK(segment_sentences("").empty());
  CHECK(segment_sentences("   ").empty());
}

TEST_CASE("synthetic generation is deterministic under (params, seed)") {
  GeneratorParams params;
  params.n_docs = 12;
  SyntheticCorpus a = generate_synthetic(params, 42);
  SyntheticCorpus b = generate_synthetic(params, 42);
  CHECK(corpus_to_jsonl(a.corpus) == corpus_to_jsonl(b.corpus));
  REQUIRE(a.planted.size() == b.planted.size());
  for (std::size_t i = 0; i < a.planted.size(); ++i) {
    CHECK(a.planted[i].doc_id == b.planted[i].doc_id);
    CHECK(a.planted[i].section_index == b.planted[i].section_index);
    CHECK(a.planted[i].entities == b.planted[i].entities);
    CHECK(a.planted[i].aspect == b.planted[i].aspect);
  }
  SyntheticCorpus c = generate_synthetic(params, 43);
  CHECK(corpus_to_jsonl(a.corpus) != corpus_to_jsonl(c.corpus));
}

TEST_CASE("planted labels match the generated text and headings") {
  GeneratorParams params;
  params.n_docs = 24;
  SyntheticCorpus sc = generate_synthetic(params, 7);
  CHECK_FALSE(sc.planted.empty());

  for (const PlantedLabel& lbl : sc.planted) {
    const int pi = sc.corpus.find_passage(lbl.doc_id + "#" + std::to_string(lbl.section_index));
    REQUIRE(pi >= 0);
    const Passage& p = sc.corpus.passage(pi);
    for (const std::string& e : lbl.entities) CHECK(mentions(p.text, e));
    CHECK(std::is_sorted(lbl.entities.begin(), lbl.entities.end()));
    const Document* doc = sc.corpus.find_document(lbl.doc_id);
    REQUIRE(doc != nullptr);
    const std::string& heading = doc->sections[static_cast<std::size_t>(lbl.section_index)].heading;
    CHECK(normalized_heading(heading) == lbl.aspect);
    // The label-bearing heading itself never gets pasted into the body text.
    CHECK(p.text.find(heading) == std::string::npos);
  }
}

TEST_CASE("mention probability controls the labeled-section rate") {
  GeneratorParams params;
  params.n_docs = 2500;
  params.sections_per_doc_min = 4;
  params.sections_per_doc_max = 4;
  params.sentences_per_section_min = 2;
  params.sentences_per_section_max = 2;
  params.mention_probability = 0.5;
  SyntheticCorpus sc = generate_synthetic(params, 99);
  const double total = 2500.0 * 4.0;
  const double rate = static_cast<double>(sc.planted.size()) / total;
  CHECK(rate > 0.48);
  CHECK(rate < 0.52);
}

TEST_CASE("extra entity probability yields two distinct entities") {
  GeneratorParams params;
  params.n_docs = 10;
  params.mention_probability = 1.0;
  params.extra_entity_probability = 1.0;
  SyntheticCorpus sc = generate_synthetic(params, 5);
  CHECK_FALSE(sc.planted.empty());
  for (const PlantedLabel& lbl : sc.planted) {
    REQUIRE(lbl.entities.size() == 2);
    CHECK(lbl.entities[0] != lbl.entities[1]);
  }
}

TEST_CASE("anonymize mode rewrites distractor slots only") {
  GeneratorParams params;
  params.n_docs = 16;
  params.anonymize_probability = 1.0;
  SyntheticCorpus sc = generate_synthetic(params, 11);

  bool saw_span = false;
  for (const Passage& p : sc.corpus.passages())
    if (p.text.find("[**") != std::string::npos) saw_span = true;
  CHECK(saw_span);

  // Entity mentions survive anonymization, so planted labels stay recoverable.
  for (const PlantedLabel& lbl : sc.planted) {
    const int pi = sc.corpus.find_passage(lbl.doc_id + "#" + std::to_string(lbl.section_index));
    REQUIRE(pi >= 0);
    for (const std::string& e : lbl.entities) CHECK(mentions(sc.corpus.passage(pi).text, e));
  }
}

TEST_CASE("generator parameter validation") {
  GeneratorParams ok;
  ok.apply_defaults();
  CHECK_NOTHROW(ok.validate());

  GeneratorParams p = ok;
  p.n_docs = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  p = ok;
  p.sections_per_doc_max = p.sections_per_doc_min - 1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  p = ok;
  p.mention_probability = 1.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  p = ok;
  p.entities.clear();
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  // A custom aspect without templates is rejected rather than silently empty.
  p = ok;
  p.aspects.push_back("billing");
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  // Entity surfaces hiding in fixed text would corrupt planted labels.
  p = ok;
  p.distractors.push_back("asthma");
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("default generator settings produce a usable corpus") {
  SyntheticCorpus sc = generate_synthetic(GeneratorParams{}, 3);
  CHECK(sc.corpus.documents().size() == 32);
  CorpusStats st = compute_stats(sc.corpus);
  CHECK(st.n_passages > 0);
  CHECK(st.avg_tokens_per_sentence > 1.0);
  CHECK_FALSE(sc.planted.empty());

  // Several distinct entities and aspects should appear.
  std::set<std::string> ents, asps;
  for (const PlantedLabel& lbl : sc.planted) {
    ents.insert(lbl.entities.begin(), lbl.entities.end());
    asps.insert(lbl.aspect);
  }
  CHECK(ents.size() >= 8);
  CHECK(asps.size() == 8);
}

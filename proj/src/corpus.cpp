// SPDX-License-Identifier: Apache-2.0
#include "passmatch/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

using nlohmann::json;

std::vector<std::string> Passage::sentences() const {
  std::vector<std::string> out;
  out.reserve(sentence_spans.size());
  for (const auto& [b, e] : sentence_spans)
    out.push_back(text.substr(static_cast<std::size_t>(b), static_cast<std::size_t>(e - b)));
  return out;
}

Corpus Corpus::from_documents(std::vector<Document> docs) {
  Corpus c;
  c.docs_ = std::move(docs);
  for (std::size_t d = 0; d < c.docs_.size(); ++d) {
    const Document& doc = c.docs_[d];
    if (doc.id.empty()) throw std::invalid_argument("corpus: document without id");
    if (!c.doc_index_.emplace(doc.id, static_cast<int>(d)).second)
      throw std::invalid_argument("corpus: duplicate document id '" + doc.id + "'");
    if (doc.sections.empty())
      throw std::invalid_argument("corpus: document '" + doc.id + "' has no sections");
    for (std::size_t s = 0; s < doc.sections.size(); ++s) {
      const Section& sec = doc.sections[s];
      if (sec.sentences.empty()) continue;  // heading-only section, no passage
      Passage p;
      p.doc_id = doc.id;
      p.section_index = static_cast<int>(s);
      for (const std::string& sent : sec.sentences) {
        if (!p.text.empty()) p.text += ' ';
        const int begin = static_cast<int>(p.text.size());
        p.text += sent;
        p.sentence_spans.emplace_back(begin, static_cast<int>(p.text.size()));
      }
      c.passage_index_.emplace(p.id(), static_cast<int>(c.passages_.size()));
      c.passages_.push_back(std::move(p));
    }
  }
  return c;
}

int Corpus::find_passage(const std::string& passage_id) const {
  auto it = passage_index_.find(passage_id);
  return it == passage_index_.end() ? -1 : it->second;
}

const Document* Corpus::find_document(const std::string& doc_id) const {
  auto it = doc_index_.find(doc_id);
  return it == doc_index_.end() ? nullptr : &docs_[static_cast<std::size_t>(it->second)];
}

CorpusStats compute_stats(const Corpus& corpus) {
  CorpusStats s;
  s.n_docs = static_cast<int>(corpus.documents().size());
  s.n_passages = corpus.n_passages();
  long total_sentences = 0, total_tokens = 0;
  for (const Passage& p : corpus.passages()) {
    total_sentences += static_cast<long>(p.sentence_spans.size());
    for (const std::string& sent : p.sentences())
      total_tokens += static_cast<long>(whitespace_tokens(sent).size());
  }
  if (s.n_docs > 0) s.avg_sentences_per_doc = static_cast<double>(total_sentences) / s.n_docs;
  if (s.n_passages > 0) {
    s.avg_sentences_per_passage = static_cast<double>(total_sentences) / s.n_passages;
    s.avg_tokens_per_passage = static_cast<double>(total_tokens) / s.n_passages;
  }
  if (total_sentences > 0)
    s.avg_tokens_per_sentence = static_cast<double>(total_tokens) / total_sentences;
  return s;
}

// ==================== JSONL ====================

namespace {
Document parse_document(const json& j, const std::string& where) {
  if (!j.is_object()) throw std::runtime_error(where + ": document is not an object");
  Document d;
  if (!j.contains("id") || !j.at("id").is_string())
    throw std::runtime_error(where + ": missing string field 'id'");
  d.id = j.at("id").get<std::string>();
  d.title = j.value("title", std::string());
  if (!j.contains("sections") || !j.at("sections").is_array())
    throw std::runtime_error(where + ": missing array field 'sections'");
  for (const json& js : j.at("sections")) {
    Section sec;
    sec.heading = js.value("heading", std::string());
    if (js.contains("sentences")) {
      for (const json& sent : js.at("sentences")) {
        if (!sent.is_string()) throw std::runtime_error(where + ": sentence is not a string");
        sec.sentences.push_back(sent.get<std::string>());
      }
    } else if (js.contains("text") && js.at("text").is_string()) {
      sec.sentences = segment_sentences(js.at("text").get<std::string>());
    }
    d.sections.push_back(std::move(sec));
  }
  return d;
}
}  // namespace

Corpus parse_jsonl(const std::string& content, const std::string& origin) {
  std::vector<Document> docs;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = origin + " line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(t);
    } catch (const json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    docs.push_back(parse_document(j, where));
  }
  return Corpus::from_documents(std::move(docs));
}

Corpus ingest_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_text_file(path), path.string());
}

std::string corpus_to_jsonl(const Corpus& corpus, const std::string& meta_line) {
  std::string out;
  if (!meta_line.empty()) out += "# " + meta_line + "\n";
  for (const Document& d : corpus.documents()) {
    json j;
    j["id"] = d.id;
    j["title"] = d.title;
    json sections = json::array();
    for (const Section& s : d.sections) {
      json js;
      js["heading"] = s.heading;
      js["sentences"] = s.sentences;
      sections.push_back(std::move(js));
    }
    j["sections"] = std::move(sections);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const Corpus& corpus, const std::filesystem::path& path,
                 const std::string& meta_line) {
  atomic_write_file(path, corpus_to_jsonl(corpus, meta_line));
}

// ==================== Sentence segmentation ====================

namespace {
const std::set<std::string>& abbreviations() {
  static const std::set<std::string> abbr = {"dr",  "mr",  "mrs", "ms", "st", "jr", "sr",
                                             "vs",  "etc", "fig", "eg", "ie", "no", "al",
                                             "approx"};
  return abbr;
}

std::string word_before(const std::string& text, std::size_t pos) {
  std::size_t e = pos;
  std::size_t b = e;
  while (b > 0 && std::isalpha(static_cast<unsigned char>(text[b - 1]))) --b;
  return to_lower(std::string_view(text).substr(b, e - b));
}
}  // namespace

std::vector<std::string> segment_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto flush = [&](std::size_t end) {
    const std::string s = trim(std::string_view(text).substr(start, end - start));
    if (!s.empty()) out.push_back(s);
  };
  while (i < n) {
    const char c = text[i];
    if (c == '.' || c == '!' || c == '?') {
      if (c == '.' && abbreviations().count(word_before(text, i))) {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
      std::size_t k = j;
      while (k < n && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      if (k > j && k < n && std::isupper(static_cast<unsigned char>(text[k]))) {
        flush(j);
        start = k;
        i = k;
        continue;
      }
      i = j;
      continue;
    }
    ++i;
  }
  flush(n);
  return out;
}

// ==================== Synthetic generation ====================

namespace {

std::vector<std::string> default_entities() {
  return {"cardiomyopathy", "hypertension",  "pneumonia",      "asthma",
          "sepsis",         "anemia",        "migraine",       "gastritis",
          "pancreatitis",   "cellulitis",    "hypothyroidism", "osteoarthritis",
          "heart failure",  "atrial fibrillation", "diabetes mellitus",
          "chronic kidney disease"};
}

std::vector<std::string> default_aspects() {
  return {"chief complaint", "history of present illness", "family history", "medications",
          "allergies",       "physical exam",              "laboratory results",
          "social history"};
}

std::vector<std::string> default_distractors() {
  return {"stable",    "routine",    "followup",   "tolerated", "unremarkable", "improved",
          "monitored", "overnight",  "baseline",   "ambulating", "afebrile",    "comfortable",
          "scheduled", "reviewed",   "continued",  "outpatient"};
}

std::map<std::string, AspectTemplates> default_templates() {
  std::map<std::string, AspectTemplates> t;
  t["chief complaint"] = {
      {"Patient presents with {entity} today.", "Admitted with worsening {entity}.",
       "Arrived reporting {entity} symptoms."},
      {"Onset was sudden and remains {distractor}.", "Presenting concern began earlier this week.",
       "Triage noted the complaint as {distractor}."}};
  t["history of present illness"] = {
      {"Course of {entity} progressed gradually before admission.",
       "Reports {entity} episodes over the preceding month.",
       "Timeline suggests {entity} developed slowly."},
      {"Interval history is otherwise {distractor}.", "The narrative covers several prior visits.",
       "Progression has been {distractor} since onset."}};
  t["family history"] = {
      {"Mother has a documented history of {entity}.", "Father was treated for {entity}.",
       "A sibling carries a diagnosis of {entity}."},
      {"No other relatives report similar conditions.", "Remaining family members are {distractor}.",
       "Grandparents lived without notable illness."}};
  t["medications"] = {
      {"Started on therapy targeting {entity}.", "Home regimen adjusted for {entity} control.",
       "Dosing was titrated to manage {entity}."},
      {"Refills were {distractor} at discharge.", "Medication list was reconciled and {distractor}.",
       "No adverse drug events were recorded."}};
  t["allergies"] = {
      {"Prior reaction occurred during treatment of {entity}.",
       "Sensitivities complicate management of {entity}.",
       "Allergy testing ordered in the context of {entity}."},
      {"No known drug allergies were reported.", "Skin response remained {distractor} after exposure.",
       "Allergy band placed per protocol."}};
  t["physical exam"] = {
      {"Examination findings are consistent with {entity}.", "On exam, signs of {entity} were noted.",
       "Inspection and palpation suggest {entity}."},
      {"Vital signs were {distractor} throughout.", "General appearance is {distractor}.",
       "Auscultation was otherwise clear."}};
  t["laboratory results"] = {
      {"Laboratory panel supports a diagnosis of {entity}.", "Values trend with known {entity}.",
       "Serology is compatible with {entity}."},
      {"Repeat draws were {distractor} this morning.", "Remaining assays returned within range.",
       "Specimen quality was {distractor}."}};
  t["social history"] = {
      {"Lifestyle factors relevant to {entity} were discussed.",
       "Occupational exposure may aggravate {entity}.", "Habits were reviewed given {entity} risk."},
      {"Lives independently and remains {distractor}.", "Denies tobacco and alcohol use.",
       "Employment status is {distractor}."}};
  return t;
}

// Case-insensitive surface search with word boundaries on both ends.
bool contains_surface(const std::string& text_lower, const std::string& surface) {
  std::size_t pos = 0;
  while ((pos = text_lower.find(surface, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(text_lower[pos - 1]));
    const std::size_t end = pos + surface.size();
    const bool right_ok =
        end == text_lower.size() || !is_word_char(static_cast<unsigned char>(text_lower[end]));
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

std::string fill_slot(std::string tpl, const std::string& slot, const std::string& value) {
  const std::size_t pos = tpl.find(slot);
  if (pos != std::string::npos) tpl.replace(pos, slot.size(), value);
  return tpl;
}

std::string title_case(const std::string& s) {
  std::string out = s;
  bool boundary = true;
  for (char& c : out) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      c = boundary ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
      boundary = false;
    } else {
      boundary = true;
    }
  }
  return out;
}

std::string upper_case(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

const std::vector<std::string>& anonymized_spans() {
  static const std::vector<std::string> spans = {"[**Name**]", "[**Location**]", "[**Hospital**]",
                                                 "[**2150-06-12**]"};
  return spans;
}

}  // namespace

void GeneratorParams::apply_defaults() {
  if (entities.empty()) entities = default_entities();
  if (aspects.empty()) aspects = default_aspects();
  if (distractors.empty()) distractors = default_distractors();
  const auto defaults = default_templates();
  for (const std::string& a : aspects) {
    if (templates.count(a)) continue;
    auto it = defaults.find(a);
    if (it != defaults.end()) templates[a] = it->second;
  }
}

void GeneratorParams::validate() const {
  if (n_docs <= 0) throw std::invalid_argument("generator: n_docs must be positive");
  if (sections_per_doc_min < 1 || sections_per_doc_max < sections_per_doc_min)
    throw std::invalid_argument("generator: invalid sections_per_doc range");
  if (sentences_per_section_min < 1 || sentences_per_section_max < sentences_per_section_min)
    throw std::invalid_argument("generator: invalid sentences_per_section range");
  for (double p : {mention_probability, extra_entity_probability, anonymize_probability})
    if (p < 0 || p > 1)
      throw std::invalid_argument("generator: probabilities must lie in [0, 1]");
  if (entities.empty()) throw std::invalid_argument("generator: entity vocabulary is empty");
  if (aspects.empty()) throw std::invalid_argument("generator: aspect list is empty");
  if (distractors.empty()) throw std::invalid_argument("generator: distractor vocabulary is empty");
  for (const std::string& e : entities)
    if (trim(e).empty()) throw std::invalid_argument("generator: blank entity surface");
  for (const std::string& a : aspects) {
    auto it = templates.find(a);
    if (it == templates.end() || it->second.entity_sentences.empty() ||
        it->second.filler_sentences.empty())
      throw std::invalid_argument("generator: aspect '" + a + "' lacks sentence templates");
    for (const std::string& tpl : it->second.entity_sentences)
      if (tpl.find("{entity}") == std::string::npos)
        throw std::invalid_argument("generator: entity template without {entity} slot in '" + a +
                                    "'");
  }
  // Entity surfaces must not leak into fixed text, else planted labels would
  // disagree with what a gazetteer recovers.
  std::vector<std::string> literals = distractors;
  for (const auto& [aspect, tpls] : templates) {
    (void)aspect;
    for (const auto& list : {tpls.entity_sentences, tpls.filler_sentences})
      for (std::string tpl : list) {
        tpl = fill_slot(tpl, "{entity}", " ");
        tpl = fill_slot(tpl, "{distractor}", " ");
        literals.push_back(tpl);
      }
  }
  for (const std::string& entity : entities) {
    const std::string surface = to_lower(trim(entity));
    for (const std::string& lit : literals)
      if (contains_surface(to_lower(lit), surface))
        throw std::invalid_argument("generator: entity '" + surface +
                                    "' appears in template or distractor text");
  }
}

SyntheticCorpus generate_synthetic(GeneratorParams params, std::uint64_t seed) {
  params.apply_defaults();
  params.validate();
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };

  SyntheticCorpus out;
  std::vector<Document> docs;
  for (int d = 0; d < params.n_docs; ++d) {
    Document doc;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%04d", d);
    doc.id = idbuf;
    doc.title = "Note " + std::to_string(d);
    const int n_sections = std::uniform_int_distribution<int>(
        params.sections_per_doc_min, params.sections_per_doc_max)(rng);
    for (int s = 0; s < n_sections; ++s) {
      Section sec;
      const std::string& aspect = pick(params.aspects);
      switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
        case 0: sec.heading = title_case(aspect); break;
        case 1: sec.heading = upper_case(aspect) + ":"; break;
        default: sec.heading = title_case(aspect) + ":"; break;
      }
      int n_sentences = std::uniform_int_distribution<int>(
          params.sentences_per_section_min, params.sentences_per_section_max)(rng);

      const bool mention = std::bernoulli_distribution(params.mention_probability)(rng);
      std::vector<std::string> section_entities;
      if (mention) {
        section_entities.push_back(to_lower(trim(pick(params.entities))));
        if (params.entities.size() > 1 &&
            std::bernoulli_distribution(params.extra_entity_probability)(rng)) {
          std::string second = to_lower(trim(pick(params.entities)));
          while (second == section_entities[0]) second = to_lower(trim(pick(params.entities)));
          section_entities.push_back(second);
        }
      }
      n_sentences = std::max(n_sentences, static_cast<int>(section_entities.size()));

      // Seeded positions for the entity-bearing sentences.
      std::vector<int> order(static_cast<std::size_t>(n_sentences));
      for (int i = 0; i < n_sentences; ++i) order[static_cast<std::size_t>(i)] = i;
      for (int i = n_sentences - 1; i > 0; --i) {
        const int j = std::uniform_int_distribution<int>(0, i)(rng);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      std::set<int> entity_slots(order.begin(),
                                 order.begin() + static_cast<long>(section_entities.size()));

      const AspectTemplates& tpls = params.templates.at(aspect);
      std::size_t next_entity = 0;
      for (int i = 0; i < n_sentences; ++i) {
        std::string sentence;
        if (entity_slots.count(i)) {
          sentence = fill_slot(pick(tpls.entity_sentences), "{entity}",
                               section_entities[next_entity++]);
        } else {
          std::string tpl = pick(tpls.filler_sentences);
          if (tpl.find("{distractor}") != std::string::npos) {
            std::string filler = pick(params.distractors);
            if (params.anonymize_probability > 0 &&
                std::bernoulli_distribution(params.anonymize_probability)(rng))
              filler = pick(anonymized_spans());
            tpl = fill_slot(tpl, "{distractor}", filler);
          }
          sentence = tpl;
        }
        sec.sentences.push_back(std::move(sentence));
      }

      if (!section_entities.empty()) {
        PlantedLabel lbl;
        lbl.doc_id = doc.id;
        lbl.section_index = s;
        lbl.entities = section_entities;
        std::sort(lbl.entities.begin(), lbl.entities.end());
        lbl.aspect = aspect;
        out.planted.push_back(std::move(lbl));
      }
      doc.sections.push_back(std::move(sec));
    }
    docs.push_back(std::move(doc));
  }
  out.corpus = Corpus::from_documents(std::move(docs));
  return out;
}

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#include "passmatch/labeler.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

using nlohmann::json;

// ==================== Gazetteer ====================

Gazetteer Gazetteer::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  Gazetteer g;
  for (const auto& [alias, canonical] : pairs) {
    const std::string a = to_lower(trim(alias));
    const std::string c = to_lower(trim(canonical));
    if (a.empty() || c.empty())
      throw std::invalid_argument("gazetteer: blank alias or canonical form");
    auto [it, inserted] = g.entries_.emplace(a, c);
    if (!inserted && it->second != c)
      throw std::invalid_argument("gazetteer: alias '" + a + "' maps to both '" + it->second +
                                  "' and '" + c + "'");
  }
  return g;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t tab = t.find('\t');
    std::string alias = tab == std::string::npos ? t : trim(t.substr(0, tab));
    std::string canonical = tab == std::string::npos ? t : trim(t.substr(tab + 1));
    if (alias.empty() || canonical.empty())
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) +
                               ": blank alias or canonical form");
    pairs.emplace_back(std::move(alias), std::move(canonical));
  }
  return from_pairs(pairs);
}

std::vector<EntityMention> find_entities(const std::string& text, const Gazetteer& gazetteer) {
  std::vector<EntityMention> out;
  if (gazetteer.empty() || text.empty()) return out;
  const std::string hay = to_lower(text);
  const std::size_t n = hay.size();

  // Aliases by descending length so the first boundary-clean hit at a given
  // start is also the longest one.
  std::vector<const std::pair<const std::string, std::string>*> by_len;
  by_len.reserve(gazetteer.entries().size());
  for (const auto& e : gazetteer.entries()) by_len.push_back(&e);
  std::sort(by_len.begin(), by_len.end(), [](const auto* a, const auto* b) {
    if (a->first.size() != b->first.size()) return a->first.size() > b->first.size();
    return a->first < b->first;
  });

  std::size_t i = 0;
  while (i < n) {
    if (!is_word_char(static_cast<unsigned char>(hay[i])) ||
        (i > 0 && is_word_char(static_cast<unsigned char>(hay[i - 1])))) {
      ++i;
      continue;
    }
    const EntityMention* hit = nullptr;
    EntityMention m;
    for (const auto* entry : by_len) {
      const std::string& alias = entry->first;
      if (alias.size() > n - i) continue;
      if (hay.compare(i, alias.size(), alias) != 0) continue;
      const std::size_t end = i + alias.size();
      if (end < n && is_word_char(static_cast<unsigned char>(hay[end]))) continue;
      m.begin = static_cast<int>(i);
      m.end = static_cast<int>(end);
      m.surface = text.substr(i, alias.size());
      m.canonical = entry->second;
      hit = &m;
      break;
    }
    if (hit) {
      i = static_cast<std::size_t>(m.end);
      out.push_back(std::move(m));
    } else {
      ++i;
    }
  }
  return out;
}

// ==================== Aspect rules ====================

std::vector<AspectRule> compile_aspect_rules(const std::vector<std::string>& patterns) {
  std::vector<AspectRule> rules;
  rules.reserve(patterns.size());
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    AspectRule r;
    r.pattern = patterns[i];
    try {
      r.regex = std::regex(r.pattern, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw std::invalid_argument("aspect rule " + std::to_string(i + 1) + " ('" + r.pattern +
                                  "'): " + e.what());
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

std::vector<AspectRule> load_aspect_rules(const std::filesystem::path& path) {
  std::vector<AspectRule> rules;
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    AspectRule r;
    r.pattern = t;
    try {
      r.regex = std::regex(t, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": " +
                               e.what());
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

std::vector<AspectRule> default_aspect_rules() {
  return compile_aspect_rules({
      "^\\s*(chief complaint)\\s*:?\\s*$",
      "^\\s*(history of present illness)\\s*:?\\s*$",
      "^\\s*(family history)\\s*:?\\s*$",
      "^\\s*(medications)\\s*:?\\s*$",
      "^\\s*(allergies)\\s*:?\\s*$",
      "^\\s*(physical exam)\\s*:?\\s*$",
      "^\\s*(laboratory results)\\s*:?\\s*$",
      "^\\s*(social history)\\s*:?\\s*$",
  });
}

std::string normalize_aspect(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      out += static_cast<char>(std::tolower(u));
    else if (!out.empty() && out.back() != ' ')
      out += ' ';
  }
  return trim(out);
}

std::optional<std::string> match_aspect(const std::string& heading,
                                        const std::vector<AspectRule>& rules) {
  for (const AspectRule& r : rules) {
    std::smatch m;
    if (!std::regex_search(heading, m, r.regex)) continue;
    const std::string raw = (m.size() > 1 && m[1].matched) ? m[1].str() : m[0].str();
    const std::string normalized = normalize_aspect(raw);
    if (!normalized.empty()) return normalized;
  }
  return std::nullopt;
}

// ==================== Annotation ====================

AnnotateReport annotate_corpus(const Corpus& corpus, const Gazetteer& gazetteer,
                               const std::vector<AspectRule>& rules) {
  AnnotateReport report;
  report.n_passages = corpus.n_passages();
  for (const Passage& p : corpus.passages()) {
    const Document* doc = corpus.find_document(p.doc_id);
    const std::string& heading =
        doc->sections[static_cast<std::size_t>(p.section_index)].heading;
    const std::optional<std::string> aspect = match_aspect(heading, rules);
    if (!aspect) {
      ++report.n_skipped_no_aspect;
      continue;
    }
    std::set<std::string> canon;
    for (const EntityMention& m : find_entities(p.text, gazetteer)) canon.insert(m.canonical);
    if (canon.empty()) {
      ++report.n_skipped_no_entity;
      continue;
    }
    Label lbl;
    lbl.passage_id = p.id();
    lbl.entities.assign(canon.begin(), canon.end());
    lbl.aspect = *aspect;
    report.labels.push_back(std::move(lbl));
  }
  return report;
}

// ==================== Label JSONL ====================

std::string labels_to_jsonl(const std::vector<Label>& labels, const std::string& meta_line) {
  std::string out;
  if (!meta_line.empty()) out += "# " + meta_line + "\n";
  for (const Label& lbl : labels) {
    json j;
    j["passage_id"] = lbl.passage_id;
    j["entities"] = lbl.entities;
    j["aspect"] = lbl.aspect;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Label> parse_labels(const std::string& content, const std::string& origin) {
  std::vector<Label> labels;
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
    if (!j.is_object() || !j.contains("passage_id") || !j.contains("entities") ||
        !j.contains("aspect"))
      throw std::runtime_error(where + ": label needs passage_id, entities and aspect");
    Label lbl;
    lbl.passage_id = j.at("passage_id").get<std::string>();
    for (const json& e : j.at("entities")) lbl.entities.push_back(e.get<std::string>());
    lbl.aspect = j.at("aspect").get<std::string>();
    if (lbl.entities.empty()) throw std::runtime_error(where + ": label without entities");
    labels.push_back(std::move(lbl));
  }
  return labels;
}

void write_labels(const std::vector<Label>& labels, const std::filesystem::path& path,
                  const std::string& meta_line) {
  atomic_write_file(path, labels_to_jsonl(labels, meta_line));
}

std::vector<Label> read_labels(const std::filesystem::path& path) {
  return parse_labels(read_text_file(path), path.string());
}

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#include "passmatch/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "passmatch/checkpoint.hpp"
#include "passmatch/labeler.hpp"
#include "passmatch/retrieval.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

namespace fs = std::filesystem;

// ==================== Config parsing ====================

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round trip
  (void)ec;
  return std::string(buf, end);
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += items[i];
  }
  return out;
}

std::string join_counts(const std::vector<int>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(items[i]);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const std::string trimmed = trim(item);
    if (!trimmed.empty()) out.push_back(trimmed);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key,
                            const std::string& value) {
  throw std::invalid_argument(where + ": bad value for '" + key + "': '" + value + "'");
}

int parse_int(const std::string& where, const std::string& key, const std::string& value) {
  int v = 0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) bad_value(where, key, value);
  return v;
}

std::uint64_t parse_u64(const std::string& where, const std::string& key,
                        const std::string& value) {
  std::uint64_t v = 0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) bad_value(where, key, value);
  return v;
}

double parse_double(const std::string& where, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(where, key, value);
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(where, key, value);
  } catch (const std::out_of_range&) {
    bad_value(where, key, value);
  }
}

bool parse_bool(const std::string& where, const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(where, key, value);
}

std::vector<int> parse_counts(const std::string& where, const std::string& key,
                              const std::string& value) {
  std::vector<int> out;
  for (const std::string& item : split_list(value)) out.push_back(parse_int(where, key, item));
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(where + ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty config key");
    if (!seen.insert(key).second) {
      throw std::invalid_argument(where + ": duplicate config key '" + key + "'");
    }

    if (key == "seed") cfg.seed = parse_u64(where, key, value);
    else if (key == "gen.n_docs") cfg.gen.n_docs = parse_int(where, key, value);
    else if (key == "gen.sections_min") cfg.gen.sections_per_doc_min = parse_int(where, key, value);
    else if (key == "gen.sections_max") cfg.gen.sections_per_doc_max = parse_int(where, key, value);
    else if (key == "gen.sentences_min")
      cfg.gen.sentences_per_section_min = parse_int(where, key, value);
    else if (key == "gen.sentences_max")
      cfg.gen.sentences_per_section_max = parse_int(where, key, value);
    else if (key == "gen.mention_probability")
      cfg.gen.mention_probability = parse_double(where, key, value);
    else if (key == "gen.extra_entity_probability")
      cfg.gen.extra_entity_probability = parse_double(where, key, value);
    else if (key == "gen.anonymize_probability")
      cfg.gen.anonymize_probability = parse_double(where, key, value);
    else if (key == "gen.entities") cfg.gen.entities = split_list(value);
    else if (key == "gen.aspects") cfg.gen.aspects = split_list(value);
    else if (key == "gen.distractors") cfg.gen.distractors = split_list(value);
    else if (key == "label.gazetteer") cfg.label_gazetteer = value;
    else if (key == "label.rules") cfg.label_rules = value;
    else if (key == "model.architecture") cfg.model.architecture = value;
    else if (key == "model.shared_weights")
      cfg.model.shared_weights = parse_bool(where, key, value);
    else if (key == "model.cdv_rnn") cfg.model.cdv_rnn = value;
    else if (key == "model.d_model") cfg.model.encoder.d_model = parse_int(where, key, value);
    else if (key == "model.n_heads") cfg.model.encoder.n_heads = parse_int(where, key, value);
    else if (key == "model.n_layers") cfg.model.encoder.n_layers = parse_int(where, key, value);
    else if (key == "model.ffn_dim") cfg.model.encoder.ffn_dim = parse_int(where, key, value);
    else if (key == "model.max_len") cfg.model.encoder.max_len = parse_int(where, key, value);
    else if (key == "model.init_scale")
      cfg.model.encoder.init_scale = parse_double(where, key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = parse_int(where, key, value);
    else if (key == "train.epochs") cfg.train.epochs = parse_int(where, key, value);
    else if (key == "train.learning_rate")
      cfg.train.learning_rate = parse_double(where, key, value);
    else if (key == "train.weight_decay") cfg.train.weight_decay = parse_double(where, key, value);
    else if (key == "train.stop_loss") cfg.train.stop_loss = parse_double(where, key, value);
    else if (key == "train.cdv_freeze_epochs")
      cfg.train.cdv_freeze_epochs = parse_int(where, key, value);
    else if (key == "train.cdv_plateau_switch")
      cfg.train.cdv_plateau_switch = parse_bool(where, key, value);
    else if (key == "index.metric") cfg.index_metric = value;
    else if (key == "eval.candidate_mode") cfg.eval.candidate_mode = value;
    else if (key == "eval.n_candidates") cfg.eval.n_candidates = parse_int(where, key, value);
    else if (key == "bench.passage_counts")
      cfg.bench.passage_counts = parse_counts(where, key, value);
    else if (key == "bench.n_queries") cfg.bench.n_queries = parse_int(where, key, value);
    else if (key == "bench.warmup") cfg.bench.warmup = parse_int(where, key, value);
    else throw std::invalid_argument(where + ": unknown config key '" + key + "'");
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_text_file(path), path.string());
}

std::string run_config_to_text(const RunConfig& cfg) {
  std::string out;
  auto kv = [&out](const std::string& key, const std::string& value) {
    out += key + " = " + value + "\n";
  };
  kv("seed", std::to_string(cfg.seed));
  kv("gen.n_docs", std::to_string(cfg.gen.n_docs));
  kv("gen.sections_min", std::to_string(cfg.gen.sections_per_doc_min));
  kv("gen.sections_max", std::to_string(cfg.gen.sections_per_doc_max));
  kv("gen.sentences_min", std::to_string(cfg.gen.sentences_per_section_min));
  kv("gen.sentences_max", std::to_string(cfg.gen.sentences_per_section_max));
  kv("gen.mention_probability", format_double(cfg.gen.mention_probability));
  kv("gen.extra_entity_probability", format_double(cfg.gen.extra_entity_probability));
  kv("gen.anonymize_probability", format_double(cfg.gen.anonymize_probability));
  kv("gen.entities", join_list(cfg.gen.entities));
  kv("gen.aspects", join_list(cfg.gen.aspects));
  kv("gen.distractors", join_list(cfg.gen.distractors));
  kv("label.gazetteer", cfg.label_gazetteer);
  kv("label.rules", cfg.label_rules);
  kv("model.architecture", cfg.model.architecture);
  kv("model.shared_weights", cfg.model.shared_weights ? "true" : "false");
  kv("model.cdv_rnn", cfg.model.cdv_rnn);
  kv("model.d_model", std::to_string(cfg.model.encoder.d_model));
  kv("model.n_heads", std::to_string(cfg.model.encoder.n_heads));
  kv("model.n_layers", std::to_string(cfg.model.encoder.n_layers));
  kv("model.ffn_dim", std::to_string(cfg.model.encoder.ffn_dim));
  kv("model.max_len", std::to_string(cfg.model.encoder.max_len));
  kv("model.init_scale", format_double(cfg.model.encoder.init_scale));
  kv("train.batch_size", std::to_string(cfg.train.batch_size));
  kv("train.epochs", std::to_string(cfg.train.epochs));
  kv("train.learning_rate", format_double(cfg.train.learning_rate));
  kv("train.weight_decay", format_double(cfg.train.weight_decay));
  kv("train.stop_loss", format_double(cfg.train.stop_loss));
  kv("train.cdv_freeze_epochs", std::to_string(cfg.train.cdv_freeze_epochs));
  kv("train.cdv_plateau_switch", cfg.train.cdv_plateau_switch ? "true" : "false");
  kv("index.metric", cfg.index_metric);
  kv("eval.candidate_mode", cfg.eval.candidate_mode);
  kv("eval.n_candidates", std::to_string(cfg.eval.n_candidates));
  kv("bench.passage_counts", join_counts(cfg.bench.passage_counts));
  kv("bench.n_queries", std::to_string(cfg.bench.n_queries));
  kv("bench.warmup", std::to_string(cfg.bench.warmup));
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(run_config_to_text(cfg)); }

// ==================== Command plumbing ====================

std::string CommandContext::meta_line() const {
  return "cmd: " + command_line + " | config: " + hex64(config_hash(config)) +
         " | seed: " + std::to_string(seed);
}

namespace {

// Deletes the artifacts a failed command managed to write; a finished command
// commits and keeps them. Earlier stages' files in a shared --out directory
// are untouched because only recorded paths are removed.
class ArtifactLog {
 public:
  ~ArtifactLog() {
    if (committed_) return;
    for (const fs::path& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void write(const fs::path& path, std::string_view content) {
    atomic_write_file(path, content);
    paths_.push_back(path);
  }
  void record(const fs::path& path) { paths_.push_back(path); }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

// Creates --out and echoes the resolved config so every run directory states
// exactly what produced it.
void echo_config(const CommandContext& ctx, const std::string& command, ArtifactLog& log) {
  fs::create_directories(ctx.out_dir);
  RunConfig resolved = ctx.config;
  resolved.seed = ctx.seed;
  log.write(ctx.out_dir / ("config." + command + ".txt"),
            "# " + ctx.meta_line() + "\n" + run_config_to_text(resolved));
}

std::unique_ptr<Matcher> load_matcher(const fs::path& path) {
  if (!fs::exists(path)) {
    throw std::invalid_argument("checkpoint '" + path.string() +
                                "' does not exist; train a model first");
  }
  return load_checkpoint(path).matcher;
}

Corpus load_corpus(const fs::path& path) {
  if (!fs::exists(path)) {
    throw std::invalid_argument("corpus '" + path.string() + "' does not exist");
  }
  return ingest_jsonl(path);
}

std::string snippet_of(const std::string& text, std::size_t limit = 56) {
  if (text.size() <= limit) return text;
  std::size_t cut = text.rfind(' ', limit);
  if (cut == std::string::npos || cut == 0) cut = limit;
  return text.substr(0, cut) + "...";
}

}  // namespace

// ==================== Commands ====================

int cmd_gen_corpus(const CommandContext& ctx) {
  ArtifactLog log;
  echo_config(ctx, "gen-corpus", log);

  GeneratorParams gp = ctx.config.gen;
  gp.apply_defaults();
  const SyntheticCorpus sc = generate_synthetic(gp, derive_seed(ctx.seed, "gen-corpus"));

  log.write(ctx.out_dir / "corpus.jsonl", corpus_to_jsonl(sc.corpus, ctx.meta_line()));

  std::vector<Label> planted;
  planted.reserve(sc.planted.size());
  for (const PlantedLabel& p : sc.planted) {
    planted.push_back({p.doc_id + "#" + std::to_string(p.section_index), p.entities, p.aspect});
  }
  log.write(ctx.out_dir / "planted_labels.jsonl", labels_to_jsonl(planted, ctx.meta_line()));

  // Identity gazetteer over the generator's entity list, ready for `label`.
  std::string gaz = "# " + ctx.meta_line() + "\n";
  for (const std::string& e : gp.entities) gaz += e + "\n";
  log.write(ctx.out_dir / "gazetteer.tsv", gaz);

  log.commit();
  std::printf("gen-corpus: %d documents, %d passages, %zu planted labels -> %s\n",
              static_cast<int>(sc.corpus.documents().size()), sc.corpus.n_passages(),
              sc.planted.size(), ctx.out_dir.string().c_str());
  return 0;
}

int cmd_ingest(const CommandContext& ctx, const fs::path& input) {
  ArtifactLog log;
  echo_config(ctx, "ingest", log);
  const Corpus corpus = load_corpus(input);
  log.write(ctx.out_dir / "corpus.jsonl", corpus_to_jsonl(corpus, ctx.meta_line()));
  log.commit();
  std::printf("ingest: %d documents, %d passages -> %s\n",
              static_cast<int>(corpus.documents().size()), corpus.n_passages(),
              ctx.out_dir.string().c_str());
  return 0;
}

int cmd_stats(const fs::path& corpus_path) {
  const Corpus corpus = load_corpus(corpus_path);
  const CorpusStats stats = compute_stats(corpus);
  std::printf("documents                  %d\n", stats.n_docs);
  std::printf("passages                   %d\n", stats.n_passages);
  std::printf("sentences per document     %.2f\n", stats.avg_sentences_per_doc);
  std::printf("sentences per passage      %.2f\n", stats.avg_sentences_per_passage);
  std::printf("tokens per passage         %.2f\n", stats.avg_tokens_per_passage);
  std::printf("tokens per sentence        %.2f\n", stats.avg_tokens_per_sentence);
  return 0;
}

int cmd_label(const CommandContext& ctx, const fs::path& corpus_path,
              const std::string& gazetteer_path, const std::string& rules_path) {
  ArtifactLog log;
  echo_config(ctx, "label", log);
  const Corpus corpus = load_corpus(corpus_path);

  const std::string gaz_path =
      !gazetteer_path.empty() ? gazetteer_path : ctx.config.label_gazetteer;
  if (gaz_path.empty()) {
    throw std::invalid_argument(
        "label: no gazetteer (pass --gazetteer or set label.gazetteer in the config)");
  }
  const Gazetteer gazetteer = Gazetteer::load(gaz_path);

  const std::string rule_path = !rules_path.empty() ? rules_path : ctx.config.label_rules;
  const std::vector<AspectRule> rules =
      rule_path.empty() ? default_aspect_rules() : load_aspect_rules(rule_path);

  const AnnotateReport report = annotate_corpus(corpus, gazetteer, rules);
  log.write(ctx.out_dir / "labels.jsonl", labels_to_jsonl(report.labels, ctx.meta_line()));
  log.commit();
  std::printf("label: %zu labels over %d passages (%d without aspect, %d without entity) -> %s\n",
              report.labels.size(), report.n_passages, report.n_skipped_no_aspect,
              report.n_skipped_no_entity, ctx.out_dir.string().c_str());
  return 0;
}

int cmd_train(const CommandContext& ctx, const fs::path& corpus_path, const fs::path& labels_path,
              const std::string& arch) {
  ArtifactLog log;
  echo_config(ctx, "train", log);
  const Corpus corpus = load_corpus(corpus_path);
  if (!fs::exists(labels_path)) {
    throw std::invalid_argument("labels '" + labels_path.string() + "' do not exist");
  }
  const std::vector<Label> labels = read_labels(labels_path);

  MatcherConfig mc = ctx.config.model;
  if (!arch.empty()) mc.architecture = arch;
  mc.encoder.seed = derive_seed(ctx.seed, "init");
  std::unique_ptr<Matcher> matcher = make_matcher(mc, Vocab::build(corpus));

  TrainConfig tc = ctx.config.train;
  tc.architecture = mc.architecture;
  tc.seed = derive_seed(ctx.seed, "train");

  TrainHooks hooks;
  hooks.checkpoint_path = ctx.out_dir / ("model_" + mc.architecture + ".ckpt");
  hooks.extra_meta = {{"command", ctx.command_line},
                      {"config", hex64(config_hash(ctx.config))},
                      {"seed", std::to_string(ctx.seed)}};
  log.record(hooks.checkpoint_path);

  const TrainReport report = train(*matcher, corpus, labels, tc, hooks);
  log.write(ctx.out_dir / ("train_" + mc.architecture + ".csv"),
            trace_to_csv(report.trace, "# " + ctx.meta_line()));
  log.commit();
  std::printf("train: %s, %zu labels, %d epochs, %ld steps, final loss %.6f%s -> %s\n",
              mc.architecture.c_str(), labels.size(),
              report.trace.empty() ? 0 : report.trace.back().epoch, report.total_steps,
              report.final_loss, report.stopped_early ? " (stopped early)" : "",
              ctx.out_dir.string().c_str());
  return 0;
}

int cmd_index(const CommandContext& ctx, const fs::path& corpus_path,
              const fs::path& checkpoint_path) {
  ArtifactLog log;
  echo_config(ctx, "index", log);
  const Corpus corpus = load_corpus(corpus_path);
  std::unique_ptr<Matcher> matcher = load_matcher(checkpoint_path);
  auto* bi = dynamic_cast<BiMatcher*>(matcher.get());
  if (bi == nullptr) {
    throw std::invalid_argument("index: dense passage caching needs the bi architecture; '" +
                                matcher->config().architecture +
                                "' passages cannot be embedded independently");
  }
  const std::uint64_t fingerprint = checkpoint_fingerprint(checkpoint_path);
  const VectorIndex index = build_vector_index(corpus, *bi, ctx.config.index_metric, fingerprint);
  const fs::path index_path = ctx.out_dir / "index.pmvi";
  save_vector_index(index, index_path);
  log.record(index_path);
  log.write(ctx.out_dir / "index.pmvi.meta",
            "# " + ctx.meta_line() + "\nmetric = " + index.metric +
                "\npassages = " + std::to_string(corpus.n_passages()) +
                "\ncheckpoint_fingerprint = " + hex64(fingerprint) + "\n");
  log.commit();
  std::printf("index: %d passages, d=%d, metric=%s -> %s\n", corpus.n_passages(),
              index.matrix.cols(), index.metric.c_str(), index_path.string().c_str());
  return 0;
}

int cmd_query(const CommandContext& ctx, const fs::path& corpus_path,
              const fs::path& checkpoint_path, const std::optional<fs::path>& index_path,
              const std::string& arch, const std::string& entity, const std::string& aspect,
              int k) {
  if (k < 1) throw std::invalid_argument("query: --k must be >= 1");
  const Corpus corpus = load_corpus(corpus_path);
  std::unique_ptr<Matcher> matcher = load_matcher(checkpoint_path);
  if (!arch.empty() && matcher->config().architecture != arch) {
    throw std::invalid_argument("query: checkpoint architecture '" +
                                matcher->config().architecture + "' does not match --arch '" +
                                arch + "'");
  }
  const Query query{entity, aspect};

  const InvertedIndex lexical = InvertedIndex::build(corpus);
  const int n = std::min(ctx.config.eval.n_candidates, corpus.n_passages());
  const CandidateSet candidates =
      select_candidates(query, corpus, lexical, ctx.config.eval.candidate_mode, {}, n,
                        derive_seed(ctx.seed, "query"));

  RankedList ranked;
  if (index_path) {
    auto* bi = dynamic_cast<BiMatcher*>(matcher.get());
    if (bi == nullptr) {
      throw std::invalid_argument("query: --index only applies to the bi architecture");
    }
    const VectorIndex index = load_vector_index(*index_path);
    ranked = rerank_bi_cached(*bi, index, query, candidates.ids,
                              checkpoint_fingerprint(checkpoint_path));
  } else {
    ranked = rerank(*matcher, corpus, query, candidates.ids);
  }
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<std::size_t>(k));

  std::printf("query: entity='%s' aspect='%s' arch=%s candidates=%zu\n", entity.c_str(),
              aspect.c_str(), matcher->config().architecture.c_str(), candidates.ids.size());
  std::printf("%4s  %10s  %-14s %-22s %s\n", "rank", "score", "passage", "heading", "snippet");
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const Passage& p = corpus.passage(corpus.find_passage(ranked[i].id));
    const Document* doc = corpus.find_document(p.doc_id);
    const std::string heading =
        doc ? doc->sections[static_cast<std::size_t>(p.section_index)].heading : "";
    std::printf("%4zu  %10.4f  %-14s %-22s %s\n", i + 1, ranked[i].score, ranked[i].id.c_str(),
                heading.c_str(), snippet_of(p.text).c_str());
  }
  return 0;
}

int cmd_eval(const CommandContext& ctx, const fs::path& corpus_path, const fs::path& labels_path,
             const std::vector<fs::path>& checkpoint_paths) {
  if (checkpoint_paths.empty()) {
    throw std::invalid_argument("eval: pass at least one --checkpoint");
  }
  ArtifactLog log;
  echo_config(ctx, "eval", log);
  const Corpus corpus = load_corpus(corpus_path);
  if (!fs::exists(labels_path)) {
    throw std::invalid_argument("labels '" + labels_path.string() + "' do not exist");
  }
  const std::vector<EvalQuery> queries = derive_queries(read_labels(labels_path));

  EvalConfig ec = ctx.config.eval;
  ec.seed = derive_seed(ctx.seed, "eval");
  std::vector<CrossDomainCell> cells;
  for (const fs::path& ckpt : checkpoint_paths) {
    std::unique_ptr<Matcher> matcher = load_matcher(ckpt);
    CrossDomainCell cell;
    cell.train_corpus = ckpt.stem().string();
    cell.eval_corpus = corpus_path.stem().string();
    cell.architecture = matcher->config().architecture;
    cell.present = true;
    cell.report = evaluate(*matcher, corpus, queries, ec);
    std::printf("eval: %s on %s: R@1 %.4f  R@5 %.4f  (%d queries, %d skipped)\n",
                cell.architecture.c_str(), cell.eval_corpus.c_str(), cell.report.recall_at_1,
                cell.report.recall_at_5, cell.report.n_queries, cell.report.n_skipped);
    cells.push_back(std::move(cell));
  }
  log.write(ctx.out_dir / "eval.csv", cross_domain_csv(cells, ctx.meta_line()));
  log.commit();
  std::printf("eval: wrote %s\n", (ctx.out_dir / "eval.csv").string().c_str());
  return 0;
}

int cmd_bench(const CommandContext& ctx, const fs::path& corpus_path, const fs::path& labels_path,
              const std::vector<fs::path>& checkpoint_paths) {
  if (checkpoint_paths.empty()) {
    throw std::invalid_argument("bench: pass at least one --checkpoint");
  }
  ArtifactLog log;
  echo_config(ctx, "bench", log);
  const Corpus corpus = load_corpus(corpus_path);
  if (!fs::exists(labels_path)) {
    throw std::invalid_argument("labels '" + labels_path.string() + "' do not exist");
  }
  std::vector<Query> queries;
  for (const EvalQuery& eq : derive_queries(read_labels(labels_path))) {
    queries.push_back(eq.query);
  }
  if (queries.empty()) throw std::invalid_argument("bench: the label file yields no queries");

  std::vector<std::unique_ptr<Matcher>> owners;
  BenchMatchers matchers;
  for (const fs::path& ckpt : checkpoint_paths) {
    owners.push_back(load_matcher(ckpt));
    Matcher* m = owners.back().get();
    const std::string& arch = m->config().architecture;
    if (auto* bi = dynamic_cast<BiMatcher*>(m)) {
      if (matchers.bi) throw std::invalid_argument("bench: two checkpoints with architecture bi");
      matchers.bi = bi;
    } else if (auto* poly = dynamic_cast<PolyMatcher*>(m)) {
      if (matchers.poly)
        throw std::invalid_argument("bench: two checkpoints with architecture poly");
      matchers.poly = poly;
    } else if (auto* cross = dynamic_cast<CrossMatcher*>(m)) {
      if (matchers.cross)
        throw std::invalid_argument("bench: two checkpoints with architecture cross");
      matchers.cross = cross;
    } else {
      throw std::invalid_argument("bench: latency covers bi, poly and cross, not '" + arch + "'");
    }
  }

  const std::vector<LatencyRow> rows =
      latency_bench(matchers, corpus, queries, ctx.config.bench);
  log.write(ctx.out_dir / "latency.csv",
            latency_csv(rows, {ctx.meta_line(), machine_specs_line()}));
  log.commit();
  for (const LatencyRow& row : rows) {
    std::printf("bench: %-5s n=%-5d median %.6fs  p95 %.6fs\n", row.architecture.c_str(),
                row.n_passages, row.median_s, row.p95_s);
  }
  std::printf("bench: wrote %s\n", (ctx.out_dir / "latency.csv").string().c_str());
  return 0;
}

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "passmatch/cli.hpp"

using namespace passmatch;

namespace {

std::string quote_arg(const std::string& s) {
  if (!s.empty() && s.find_first_of(" \t'\"") == std::string::npos) return s;
  return "'" + s + "'";
}

// Flags shared by every artifact-producing subcommand.
struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;

  void wire(CLI::App* cmd, bool with_out = true) {
    cmd->add_option("--config", config_path, "run configuration file (key = value lines)")
        ->check(CLI::ExistingFile);
    seed_opt = cmd->add_option("--seed", seed, "global seed (overrides the config)");
    if (with_out) {
      cmd->add_option("--out", out, "output directory for this stage")->required();
    }
  }

  bool has_seed() const { return seed_opt != nullptr && seed_opt->count() > 0; }

  // The provenance string stamped on artifacts; --out is omitted and file
  // arguments are reduced to their basenames so identical runs into
  // different directories produce identical files.
  std::string describe(const std::string& command) const {
    std::string line = "passmatch " + command;
    if (!config_path.empty()) {
      line += " --config " + quote_arg(std::filesystem::path(config_path).filename().string());
    }
    if (has_seed()) line += " --seed " + std::to_string(seed);
    return line;
  }

  CommandContext context(const std::string& command_line) const {
    CommandContext ctx;
    ctx.command_line = command_line;
    ctx.config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    ctx.seed = has_seed() ? seed : ctx.config.seed;
    ctx.out_dir = out;
    return ctx;
  }
};

// File arguments enter the provenance line by basename (see describe()).
std::string opt(const std::string& flag, const std::string& value) {
  if (value.empty()) return "";
  return " " + flag + " " + quote_arg(std::filesystem::path(value).filename().string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rule-labeled answer-passage retrieval: generate, label, train, index, query"};
  app.require_subcommand(1);
  int rc = 0;

  // ---- gen-corpus ----
  CommonFlags gen_flags;
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic heading-structured corpus");
  gen_flags.wire(gen);
  gen->callback([&] {
    rc = cmd_gen_corpus(gen_flags.context(gen_flags.describe("gen-corpus")));
  });

  // ---- ingest ----
  CommonFlags ing_flags;
  std::string ing_input;
  auto* ing = app.add_subcommand("ingest", "normalize a JSONL document dump into a corpus");
  ing_flags.wire(ing);
  ing->add_option("--input", ing_input, "JSONL documents to ingest")->required();
  ing->callback([&] {
    rc = cmd_ingest(ing_flags.context(ing_flags.describe("ingest") + opt("--input", ing_input)),
                    ing_input);
  });

  // ---- stats ----
  std::string stats_corpus;
  auto* stats = app.add_subcommand("stats", "print corpus size and length statistics");
  stats->add_option("--corpus", stats_corpus, "corpus JSONL file")->required();
  stats->callback([&] { rc = cmd_stats(stats_corpus); });

  // ---- label ----
  CommonFlags lab_flags;
  std::string lab_corpus, lab_gazetteer, lab_rules;
  auto* lab = app.add_subcommand("label", "annotate passages with entities and aspects");
  lab_flags.wire(lab);
  lab->add_option("--corpus", lab_corpus, "corpus JSONL file")->required();
  lab->add_option("--gazetteer", lab_gazetteer, "entity surface list (alias<TAB>canonical)");
  lab->add_option("--rules", lab_rules, "aspect heading patterns, one regex per line");
  lab->callback([&] {
    const std::string line = lab_flags.describe("label") + opt("--corpus", lab_corpus) +
                             opt("--gazetteer", lab_gazetteer) + opt("--rules", lab_rules);
    rc = cmd_label(lab_flags.context(line), lab_corpus, lab_gazetteer, lab_rules);
  });

  // ---- train ----
  CommonFlags tr_flags;
  std::string tr_corpus, tr_labels, tr_arch;
  auto* tr = app.add_subcommand("train", "train a matcher on labeled passages");
  tr_flags.wire(tr);
  tr->add_option("--corpus", tr_corpus, "corpus JSONL file")->required();
  tr->add_option("--labels", tr_labels, "labels JSONL file")->required();
  tr->add_option("--arch", tr_arch, "bi | poly | cross | cdv (overrides the config)");
  tr->callback([&] {
    const std::string line = tr_flags.describe("train") + opt("--corpus", tr_corpus) +
                             opt("--labels", tr_labels) + opt("--arch", tr_arch);
    rc = cmd_train(tr_flags.context(line), tr_corpus, tr_labels, tr_arch);
  });

  // ---- index ----
  CommonFlags ix_flags;
  std::string ix_corpus, ix_checkpoint;
  auto* ix = app.add_subcommand("index", "embed every passage with a bi encoder and cache it");
  ix_flags.wire(ix);
  ix->add_option("--corpus", ix_corpus, "corpus JSONL file")->required();
  ix->add_option("--checkpoint", ix_checkpoint, "trained bi checkpoint")->required();
  ix->callback([&] {
    const std::string line = ix_flags.describe("index") + opt("--corpus", ix_corpus) +
                             opt("--checkpoint", ix_checkpoint);
    rc = cmd_index(ix_flags.context(line), ix_corpus, ix_checkpoint);
  });

  // ---- query ----
  CommonFlags q_flags;
  std::string q_corpus, q_checkpoint, q_run, q_index, q_arch, q_entity, q_aspect;
  int q_k = 5;
  auto* q = app.add_subcommand("query", "rank passages for an entity/aspect question");
  q_flags.wire(q, /*with_out=*/false);
  q->add_option("--corpus", q_corpus, "corpus JSONL file")->required();
  q->add_option("--checkpoint", q_checkpoint, "trained checkpoint (explicit path)");
  q->add_option("--run", q_run, "run directory from train/index; picks model_<arch>.ckpt");
  q->add_option("--index", q_index, "cached passage index (bi only)");
  q->add_option("--arch", q_arch, "bi | poly | cross | cdv");
  q->add_option("--entity", q_entity, "entity to ask about")->required();
  q->add_option("--aspect", q_aspect, "aspect of the entity")->required();
  q->add_option("--k", q_k, "rows to print");
  q->callback([&] {
    CommandContext ctx = q_flags.context("");  // no artifacts, meta line unused
    std::string checkpoint = q_checkpoint;
    std::string arch = !q_arch.empty() ? q_arch : ctx.config.model.architecture;
    if (checkpoint.empty()) {
      if (q_run.empty()) {
        throw CLI::ValidationError("query", "pass --checkpoint or --run DIR");
      }
      checkpoint = q_run + "/model_" + arch + ".ckpt";
    }
    std::optional<std::filesystem::path> index_path;
    if (!q_index.empty()) {
      index_path = q_index;
    } else if (!q_run.empty() && arch == "bi" &&
               std::filesystem::exists(q_run + "/index.pmvi")) {
      index_path = q_run + "/index.pmvi";
    }
    rc = cmd_query(ctx, q_corpus, checkpoint, index_path, arch, q_entity, q_aspect, q_k);
  });

  // ---- eval ----
  CommonFlags ev_flags;
  std::string ev_corpus, ev_labels;
  std::vector<std::string> ev_checkpoints;
  auto* ev = app.add_subcommand("eval", "recall over the candidate re-ranking protocol");
  ev_flags.wire(ev);
  ev->add_option("--corpus", ev_corpus, "eval corpus JSONL file")->required();
  ev->add_option("--labels", ev_labels, "labels JSONL that define the gold queries")->required();
  ev->add_option("--checkpoint", ev_checkpoints, "trained checkpoint(s)")->required();
  ev->callback([&] {
    std::string line = ev_flags.describe("eval") + opt("--corpus", ev_corpus) +
                       opt("--labels", ev_labels);
    std::vector<std::filesystem::path> paths;
    for (const std::string& c : ev_checkpoints) {
      line += opt("--checkpoint", c);
      paths.emplace_back(c);
    }
    rc = cmd_eval(ev_flags.context(line), ev_corpus, ev_labels, paths);
  });

  // ---- bench ----
  CommonFlags be_flags;
  std::string be_corpus, be_labels;
  std::vector<std::string> be_checkpoints;
  auto* be = app.add_subcommand("bench", "per-query latency across corpus sizes");
  be_flags.wire(be);
  be->add_option("--corpus", be_corpus, "corpus JSONL file (needs >= largest count)")->required();
  be->add_option("--labels", be_labels, "labels JSONL that provide bench queries")->required();
  be->add_option("--checkpoint", be_checkpoints, "bi/poly/cross checkpoint(s)")->required();
  be->callback([&] {
    std::string line = be_flags.describe("bench") + opt("--corpus", be_corpus) +
                       opt("--labels", be_labels);
    std::vector<std::filesystem::path> paths;
    for (const std::string& c : be_checkpoints) {
      line += opt("--checkpoint", c);
      paths.emplace_back(c);
    }
    rc = cmd_bench(be_flags.context(line), be_corpus, be_labels, paths);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "passmatch: %s\n", e.what());
    return 1;
  }
  return rc;
}

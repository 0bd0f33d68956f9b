// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"
#include "passmatch/encoders.hpp"
#include "passmatch/labeler.hpp"
#include "passmatch/tensor.hpp"

namespace passmatch {

// ==================== Pair sampling ====================

struct TrainingPair {
  Query query;            // entity drawn uniformly from the passage's label
  int passage_index = 0;  // position in Corpus::passage
};

// labels[i] resolved to a per-passage-index table (nullptr = unlabeled).
// Unknown passage ids and duplicate labels are rejected.
std::vector<const Label*> labels_by_passage(const Corpus& corpus,
                                            const std::vector<Label>& labels);

// One epoch of query/passage pairs: every labeled passage appears exactly
// once, paired with a uniformly drawn entity from its label and the label's
// aspect; the order is shuffled. All randomness comes from rng.
std::vector<TrainingPair> sample_epoch_pairs(const Corpus& corpus,
                                             const std::vector<Label>& labels,
                                             std::mt19937_64& rng);

// ==================== Batch construction ====================

struct Batch {
  std::vector<Query> queries;
  std::vector<const Passage*> passages;
  RelevanceTargets targets;  // diagonal one-hot
  // Additive [n x n] mask, -1e30 where passage j is also gold for query i
  // (same aspect, entity in the label) with j != i. Such in-batch "negatives"
  // are really positives and would otherwise fight the diagonal target.
  Tensor extra_gold_mask;
  bool has_mask = false;
};

// pairs must hold at least 2 entries with distinct passages (an epoch stream
// sliced into chunks satisfies this by construction).
Batch build_batch(const Corpus& corpus, const std::vector<TrainingPair>& pairs,
                  const std::vector<const Label*>& by_passage);

// Softmax over the passage axis per query, mean negative log-likelihood of
// the target column. Row-wise score shifts cancel exactly.
Tensor listwise_loss(const Tensor& scores, const RelevanceTargets& targets);

// ==================== Optimizer ====================

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: applied to the weight, not the grad
};

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Applies one update from the gradients currently on the parameters; a
  // parameter without a populated gradient counts as zero. First and second
  // moments persist across calls.
  void step();
  void zero_grads();
  long step_count() const { return t_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<Scalar> m, v;
  };
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  long t_ = 0;
};

// ==================== Training loop ====================

struct TrainConfig {
  int batch_size = 32;
  int epochs = 50;
  double learning_rate = 1e-3;  // 2e-5 suits large pretrained stacks, not
                                // from-scratch desk models
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  std::string architecture = "bi";
  int cdv_freeze_epochs = 0;        // cdv only: epochs with the encoder frozen
  bool cdv_plateau_switch = false;  // leave the frozen phase early once its
                                    // loss improves < 1e-4 over 5 epochs
  double stop_loss = 0.0;           // > 0: stop once an epoch's loss drops below

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  long step = 0;  // cumulative optimizer steps at epoch end
  double loss = 0.0;
  std::string phase;  // "main", or "frozen"/"finetune" for two-phase models
};

// Higher is better; drives the best-checkpoint hook.
using EvalFn = std::function<double(Matcher&)>;

struct TrainHooks {
  std::filesystem::path checkpoint_path;       // written after the last epoch
  std::filesystem::path best_checkpoint_path;  // rewritten whenever eval improves
  EvalFn eval_fn;                              // called after every epoch
  // Copied into every checkpoint before the loop adds epoch/loss/phase, so
  // artifacts can carry provenance such as the producing command.
  std::map<std::string, std::string> extra_meta;
};

struct TrainReport {
  std::vector<EpochRecord> trace;
  double final_loss = 0.0;
  long total_steps = 0;
  bool stopped_early = false;
  int best_epoch = 0;  // 1-based; 0 when eval_fn was not provided
  double best_metric = 0.0;
};

// Epoch loop: sample pairs, slice batches, score, listwise loss, AdamW.
// A NaN/inf loss aborts with a diagnostic. Deterministic under cfg.seed.
TrainReport train(Matcher& matcher, const Corpus& corpus, const std::vector<Label>& labels,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// "epoch,step,loss,phase" rows; meta_line (starting with '#') goes first.
std::string trace_to_csv(const std::vector<EpochRecord>& trace, const std::string& meta_line = "");

}  // namespace passmatch

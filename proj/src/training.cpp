// SPDX-License-Identifier: Apache-2.0
#include "passmatch/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "passmatch/checkpoint.hpp"
#include "passmatch/util.hpp"

namespace passmatch {

namespace {

constexpr Scalar kMaskValue = static_cast<Scalar>(-1e30);

std::string format_loss(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

// ==================== Pair sampling ====================

std::vector<const Label*> labels_by_passage(const Corpus& corpus,
                                            const std::vector<Label>& labels) {
  std::vector<const Label*> table(static_cast<std::size_t>(corpus.n_passages()), nullptr);
  for (const Label& l : labels) {
    const int idx = corpus.find_passage(l.passage_id);
    if (idx < 0) {
      throw std::invalid_argument("training: label references unknown passage '" +
                                  l.passage_id + "'");
    }
    if (table[static_cast<std::size_t>(idx)] != nullptr) {
      throw std::invalid_argument("training: duplicate label for passage '" +
                                  l.passage_id + "'");
    }
    table[static_cast<std::size_t>(idx)] = &l;
  }
  return table;
}

std::vector<TrainingPair> sample_epoch_pairs(const Corpus& corpus,
                                             const std::vector<Label>& labels,
                                             std::mt19937_64& rng) {
  if (labels.empty()) throw std::invalid_argument("sample_epoch_pairs: no labels");
  std::vector<TrainingPair> pairs;
  pairs.reserve(labels.size());
  for (const Label& l : labels) {
    const int idx = corpus.find_passage(l.passage_id);
    if (idx < 0) {
      throw std::invalid_argument("sample_epoch_pairs: unknown passage '" +
                                  l.passage_id + "'");
    }
    if (l.entities.empty()) {
      throw std::invalid_argument("sample_epoch_pairs: empty entity set for '" +
                                  l.passage_id + "'");
    }
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(
        0, l.entities.size() - 1)(rng);
    pairs.push_back({Query{l.entities[pick], l.aspect}, idx});
  }
  for (std::size_t i = pairs.size() - 1; i > 0; --i) {
    const std::size_t j =
        std::uniform_int_distribution<std::size_t>(0, i)(rng);
    std::swap(pairs[i], pairs[j]);
  }
  return pairs;
}

// ==================== Batch construction ====================

Batch build_batch(const Corpus& corpus, const std::vector<TrainingPair>& pairs,
                  const std::vector<const Label*>& by_passage) {
  if (pairs.size() < 2) {
    throw std::invalid_argument(
        "build_batch: in-batch negatives require at least 2 pairs, got " +
        std::to_string(pairs.size()));
  }
  const int n = static_cast<int>(pairs.size());
  Batch batch;
  batch.queries.reserve(pairs.size());
  batch.passages.reserve(pairs.size());
  std::vector<int> seen;
  for (const TrainingPair& p : pairs) {
    if (std::find(seen.begin(), seen.end(), p.passage_index) != seen.end()) {
      throw std::invalid_argument("build_batch: duplicate passage '" +
                                  corpus.passage(p.passage_index).id() +
                                  "' in batch");
    }
    seen.push_back(p.passage_index);
    batch.queries.push_back(p.query);
    batch.passages.push_back(&corpus.passage(p.passage_index));
  }
  batch.targets = RelevanceTargets::diagonal(n);

  // Silence in-batch collisions: when another batch passage carries the
  // query's exact (entity, aspect) label it is a false negative, not a
  // negative.
  std::vector<Scalar> mask(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const Query& q = batch.queries[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const Label* lj = by_passage[static_cast<std::size_t>(
          pairs[static_cast<std::size_t>(j)].passage_index)];
      if (lj == nullptr || lj->aspect != q.aspect) continue;
      if (std::binary_search(lj->entities.begin(), lj->entities.end(), q.entity)) {
        mask[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
             static_cast<std::size_t>(j)] = kMaskValue;
        batch.has_mask = true;
      }
    }
  }
  if (batch.has_mask) {
    batch.extra_gold_mask = Tensor::from_vector({n, n}, std::move(mask));
  }
  return batch;
}

Tensor listwise_loss(const Tensor& scores, const RelevanceTargets& targets) {
  return cross_entropy_rows(scores, targets);
}

// ==================== Optimizer ====================

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : cfg_(cfg) {
  slots_.reserve(params.size());
  for (Tensor& p : params) {
    Slot s;
    s.m.assign(p.numel(), 0);
    s.v.assign(p.numel(), 0);
    s.param = std::move(p);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    auto w = s.param.mutable_data();
    const bool has_grad = s.param.has_grad();
    const std::span<const Scalar> g = has_grad ? s.param.grad() : std::span<const Scalar>();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      s.m[i] = static_cast<Scalar>(cfg_.beta1 * s.m[i] + (1 - cfg_.beta1) * gi);
      s.v[i] = static_cast<Scalar>(cfg_.beta2 * s.v[i] + (1 - cfg_.beta2) * gi * gi);
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= static_cast<Scalar>(cfg_.learning_rate *
                                  (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                   cfg_.weight_decay * w[i]));
    }
  }
}

void AdamW::zero_grads() {
  for (Slot& s : slots_) s.param.zero_grad();
}

// ==================== Training loop ====================

void TrainConfig::validate() const {
  if (batch_size < 2) {
    throw std::invalid_argument("TrainConfig: batch_size must be >= 2, got " +
                                std::to_string(batch_size));
  }
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (learning_rate < 0) throw std::invalid_argument("TrainConfig: negative learning_rate");
  if (weight_decay < 0) throw std::invalid_argument("TrainConfig: negative weight_decay");
  if (cdv_freeze_epochs < 0) {
    throw std::invalid_argument("TrainConfig: negative cdv_freeze_epochs");
  }
  if (stop_loss < 0) throw std::invalid_argument("TrainConfig: negative stop_loss");
  if (architecture != "bi" && architecture != "poly" && architecture != "cross" &&
      architecture != "cdv") {
    throw std::invalid_argument("TrainConfig: unknown architecture '" + architecture + "'");
  }
}

namespace {

// Frozen-phase plateau: best loss of the last 5 epochs improves on the best
// before them by less than 1e-4.
bool plateaued(const std::vector<double>& losses) {
  if (losses.size() < 6) return false;
  double before = losses[0];
  for (std::size_t i = 0; i + 5 < losses.size(); ++i) before = std::min(before, losses[i]);
  double recent = losses[losses.size() - 5];
  for (std::size_t i = losses.size() - 5; i < losses.size(); ++i) {
    recent = std::min(recent, losses[i]);
  }
  return before - recent < 1e-4;
}

}  // namespace

TrainReport train(Matcher& matcher, const Corpus& corpus, const std::vector<Label>& labels,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.architecture != matcher.config().architecture) {
    throw std::invalid_argument("train: config architecture '" + cfg.architecture +
                                "' does not match matcher '" +
                                matcher.config().architecture + "'");
  }
  if (labels.size() < 2) {
    throw std::invalid_argument("train: need at least 2 labeled passages, got " +
                                std::to_string(labels.size()));
  }
  const std::vector<const Label*> by_passage = labels_by_passage(corpus, labels);

  const bool two_phase = matcher.two_phase();
  if (two_phase) matcher.set_frozen(cfg.cdv_freeze_epochs > 0);

  std::mt19937_64 pairs_rng(derive_seed(cfg.seed, "pairs"));
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW optimizer(matcher.trainable_parameters(), opt_cfg);
  long total_steps = 0;

  TrainReport report;
  std::vector<double> frozen_losses;

  auto save = [&](const std::filesystem::path& path, int epoch, double loss,
                  const std::string& phase) {
    std::map<std::string, std::string> meta = hooks.extra_meta;
    meta["epoch"] = std::to_string(epoch);
    meta["train_loss"] = format_loss(loss);
    meta["phase"] = phase;
    save_checkpoint(matcher, path, meta);
  };

  std::string phase = two_phase ? (matcher.frozen() ? "frozen" : "finetune") : "main";
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<TrainingPair> pairs = sample_epoch_pairs(corpus, labels, pairs_rng);

    double loss_sum = 0;
    int n_batches = 0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(pairs.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      if (end - begin < 2) break;  // a trailing singleton has no negatives
      const std::vector<TrainingPair> slice(pairs.begin() + static_cast<std::ptrdiff_t>(begin),
                                            pairs.begin() + static_cast<std::ptrdiff_t>(end));
      Batch batch = build_batch(corpus, slice, by_passage);

      Tape tape;
      Tensor scores = matcher.score_batch(batch.queries, batch.passages);
      if (batch.has_mask) scores = add(scores, batch.extra_gold_mask);
      Tensor loss = listwise_loss(scores, batch.targets);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error(
            "train: loss diverged (" + std::to_string(loss_value) + ") at epoch " +
            std::to_string(epoch) + ", step " + std::to_string(total_steps + 1) +
            " (architecture " + cfg.architecture + ", lr " +
            format_loss(cfg.learning_rate) + ")");
      }
      tape.backward(loss);
      optimizer.step();
      optimizer.zero_grads();
      ++total_steps;
      loss_sum += loss_value;
      ++n_batches;
    }
    if (n_batches == 0) {
      throw std::runtime_error("train: epoch " + std::to_string(epoch) +
                               " produced no batches");
    }
    const double epoch_loss = loss_sum / n_batches;
    report.trace.push_back({epoch, total_steps, epoch_loss, phase});
    report.final_loss = epoch_loss;

    if (hooks.eval_fn) {
      Tape::Pause pause;
      const double metric = hooks.eval_fn(matcher);
      if (report.best_epoch == 0 || metric > report.best_metric) {
        report.best_epoch = epoch;
        report.best_metric = metric;
        if (!hooks.best_checkpoint_path.empty()) {
          save(hooks.best_checkpoint_path, epoch, epoch_loss, phase);
        }
      }
    }

    if (cfg.stop_loss > 0 && epoch_loss < cfg.stop_loss) {
      report.stopped_early = true;
      break;
    }

    if (two_phase && matcher.frozen()) {
      frozen_losses.push_back(epoch_loss);
      const bool schedule_done = epoch >= cfg.cdv_freeze_epochs;
      const bool plateau = cfg.cdv_plateau_switch && plateaued(frozen_losses);
      if (schedule_done || plateau) {
        matcher.set_frozen(false);
        phase = "finetune";
        // The trainable set grew; fresh optimizer state for the new phase.
        optimizer = AdamW(matcher.trainable_parameters(), opt_cfg);
      }
    }
  }

  report.total_steps = total_steps;
  if (!hooks.checkpoint_path.empty()) {
    save(hooks.checkpoint_path, report.trace.back().epoch, report.final_loss, phase);
  }
  return report;
}

std::string trace_to_csv(const std::vector<EpochRecord>& trace, const std::string& meta_line) {
  std::ostringstream os;
  if (!meta_line.empty()) os << meta_line << "\n";
  os << "epoch,step,loss,phase\n";
  for (const EpochRecord& r : trace) {
    os << r.epoch << "," << r.step << "," << format_loss(r.loss) << "," << r.phase << "\n";
  }
  return os.str();
}

}  // namespace passmatch

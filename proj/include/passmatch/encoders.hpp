// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "passmatch/corpus.hpp"
#include "passmatch/tensor.hpp"

namespace passmatch {

// A retrieval query: an entity paired with the aspect being asked about.
struct Query {
  std::string entity;
  std::string aspect;

  bool operator==(const Query&) const = default;
  bool operator<(const Query& o) const {
    return entity != o.entity ? entity < o.entity : aspect < o.aspect;
  }
};

// ==================== Vocabulary ====================

// Word-level vocabulary. Fixed special ids come first, corpus tokens follow
// in sorted order, and the [QUERY]/[PASSAGE] marker ids sit at the very end
// so encoders that never see marked text can use a table without those rows.
class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int cls_id = 1;
  static constexpr int sep_id = 2;
  static constexpr int unk_id = 3;

  // Tokens are collected from passage text and section headings; tokens below
  // min_freq are dropped (and map to [UNK] later).
  static Vocab build(const Corpus& corpus, int min_freq = 1);
  // Rebuild from a serialized token list (specials included, markers last).
  static Vocab from_tokens(std::vector<std::string> id_to_token);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int base_size() const { return size() - 2; }  // without marker rows
  int query_id() const { return size() - 2; }
  int passage_id() const { return size() - 1; }
  int lookup(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocab& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
};

// Lowercases and splits into word-character runs; every other non-space
// character becomes its own single-character token.
std::vector<std::string> word_tokens(const std::string& text);

// ==================== Tokenizer ====================

struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;  // 1 = attended, 0 = [PAD]
  bool truncated = false;

  int length() const { return static_cast<int>(ids.size()); }
};

// [CLS]-prefixed id sequence, truncated to max_len (the prefix always
// survives). Whitespace-delimited chunks that spell a special token ([SEP],
// [QUERY], ...) map to that id; everything else goes through word_tokens and
// unknown words become [UNK].
TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len);

// [CLS] query [SEP] passage. When over budget the passage side is cut first;
// the query is only cut when it alone exceeds the window.
TokenSequence tokenize_pair(const std::string& query_text, const std::string& passage_text,
                            const Vocab& vocab, int max_len);

// "[QUERY] entity [SEP] aspect" when marked, "entity [SEP] aspect" otherwise.
std::string build_query_text(const std::string& entity, const std::string& aspect, bool marked);
// "[PASSAGE] text" when marked, the text itself otherwise.
std::string build_passage_text(const std::string& text, bool marked);

// ==================== Transformer encoder ====================

struct EncoderConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ffn_dim = 128;
  int max_len = 128;
  int vocab_size = 0;       // filled in when a matcher is built
  std::uint64_t seed = 1;   // weight initialization stream
  double init_scale = 0.02;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Token + learned positional embeddings followed by n_layers blocks of
// self-attention -> residual -> layer norm -> feed-forward. Padded positions
// receive zero attention weight, so appending [PAD]s never changes the
// hidden states of real tokens.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  const EncoderConfig& config() const { return cfg_; }
  Tensor encode(const TokenSequence& seq) const;      // [len x d_model]
  Tensor encode_cls(const TokenSequence& seq) const;  // [d_model]
  void collect_parameters(const std::string& prefix,
                          std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  EncoderConfig cfg_;
  Tensor tok_emb_;  // [vocab_size x d_model]
  Tensor pos_emb_;  // [max_len x d_model]
  struct Layer {
    Tensor wq, wk, wv, wo;       // [d x d]
    Tensor ln_gain, ln_bias;     // [d]
    Tensor ffn_w1, ffn_b1;       // [d x ffn], [ffn]
    Tensor ffn_w2, ffn_b2;       // [ffn x d], [d]
  };
  std::vector<Layer> layers_;
};

// Row 0 of the hidden states.
Tensor pool_cls(const Tensor& hidden);
// Mean of the non-padded rows.
Tensor pool_mean(const Tensor& hidden, const TokenSequence& seq);

// ==================== Scoring primitives ====================

// Dot product of the two pooled vectors.
Tensor bi_score(const Tensor& q_vec, const Tensor& p_vec);

// y = softmax(P q); c = P^T y; score = relu(W_attn c) . q.
// p_tokens is the [n x d] matrix of passage token states.
Tensor poly_score(const Tensor& q_vec, const Tensor& p_tokens, const Tensor& w_attn);

// ==================== Matchers ====================

struct MatcherConfig {
  std::string architecture = "bi";  // bi | poly | cross | cdv
  EncoderConfig encoder;
  bool shared_weights = true;   // bi/poly: one encoder plus marker tokens
  std::string cdv_rnn = "lstm";  // lstm | gru

  void validate() const;
  bool operator==(const MatcherConfig&) const = default;
};

using NamedTensor = std::pair<std::string, Tensor>;

class Matcher {
 public:
  Matcher(MatcherConfig cfg, Vocab vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {}
  virtual ~Matcher() = default;

  const MatcherConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }

  virtual Tensor score_pair(const Query& q, const Passage& p) = 0;
  // S[i][j] = score(query i, passage j). The default builds n*n independent
  // pair scores; architectures with cacheable parts override it.
  virtual Tensor score_batch(const std::vector<Query>& queries,
                             const std::vector<const Passage*>& passages);

  virtual std::vector<NamedTensor> named_parameters() const = 0;
  // Parameters updated by the optimizer; equals named_parameters except in
  // the frozen phase of two-phase training.
  virtual std::vector<Tensor> trainable_parameters() const;

  virtual bool two_phase() const { return false; }
  virtual void set_frozen(bool) {}
  virtual bool frozen() const { return false; }

 protected:
  MatcherConfig cfg_;
  Vocab vocab_;
};

std::unique_ptr<Matcher> make_matcher(MatcherConfig cfg, Vocab vocab);
long parameter_count(const Matcher& m);

// Independent query/passage towers; passages embed once and get cached in a
// vector index. Shared mode reuses one tower for both sides and relies on
// the [QUERY]/[PASSAGE] markers to tell the inputs apart.
class BiMatcher : public Matcher {
 public:
  BiMatcher(MatcherConfig cfg, Vocab vocab);

  Tensor embed_query(const Query& q);
  Tensor embed_passage_text(const std::string& text);
  Tensor embed_passage(const Passage& p) { return embed_passage_text(p.text); }

  Tensor score_pair(const Query& q, const Passage& p) override;
  Tensor score_batch(const std::vector<Query>& queries,
                     const std::vector<const Passage*>& passages) override;
  std::vector<NamedTensor> named_parameters() const override;

 private:
  Encoder query_enc_;
  Encoder passage_enc_;  // aliases query_enc_'s tensors when shared
};

// Bi towers plus a late attention step between the query vector and the
// passage's token states.
class PolyMatcher : public Matcher {
 public:
  PolyMatcher(MatcherConfig cfg, Vocab vocab);

  Tensor embed_query(const Query& q);
  // Non-pad token states of the passage, [CLS] row included: the cacheable part.
  Tensor passage_tokens(const std::string& text);
  Tensor combine(const Tensor& q_vec, const Tensor& p_tokens);

  Tensor score_pair(const Query& q, const Passage& p) override;
  Tensor score_batch(const std::vector<Query>& queries,
                     const std::vector<const Passage*>& passages) override;
  std::vector<NamedTensor> named_parameters() const override;

 private:
  Encoder query_enc_;
  Encoder passage_enc_;
  Tensor w_attn_;  // [d x d], identity at init
};

// Joint encoder over "[CLS] query [SEP] passage" with a linear score head;
// nothing is cacheable, every pair costs a full forward pass.
class CrossMatcher : public Matcher {
 public:
  CrossMatcher(MatcherConfig cfg, Vocab vocab);

  Tensor score_texts(const std::string& query_text, const std::string& passage_text);
  Tensor score_pair(const Query& q, const Passage& p) override;
  std::vector<NamedTensor> named_parameters() const override;

 private:
  Encoder enc_;
  Tensor head_w_;  // [d]
  Tensor head_b_;  // [1]
};

// Hierarchical matcher: sentence vectors -> bidirectional recurrent layer ->
// per-sentence entity/aspect predictions, scored against the encoded query
// halves by averaged cosine similarity. Trains in two phases: first with the
// sentence encoder frozen (mean-pooled constants), then end to end with CLS
// pooling.
class CdvMatcher : public Matcher {
 public:
  CdvMatcher(MatcherConfig cfg, Vocab vocab);

  struct PassagePrediction {
    std::vector<Tensor> entity_preds;  // one [d] vector per sentence
    std::vector<Tensor> aspect_preds;
  };
  PassagePrediction predict_passage(const Passage& p);
  Tensor query_entity_vec(const Query& q);
  Tensor query_aspect_vec(const Query& q);
  Tensor combine(const Tensor& q_e, const Tensor& q_a, const PassagePrediction& pred);

  Tensor score_pair(const Query& q, const Passage& p) override;
  Tensor score_batch(const std::vector<Query>& queries,
                     const std::vector<const Passage*>& passages) override;
  std::vector<NamedTensor> named_parameters() const override;
  std::vector<Tensor> trainable_parameters() const override;

  bool two_phase() const override { return true; }
  void set_frozen(bool frozen) override { frozen_ = frozen; }
  bool frozen() const override { return frozen_; }

 private:
  Tensor sentence_vector(const std::string& sentence) const;
  std::vector<Tensor> rnn_states(const std::vector<Tensor>& inputs) const;  // [2d] per step

  Encoder enc_;
  struct RnnDirection {
    Tensor w_ih, w_hh;  // [gates*d x d], [gates*d x d]
    Tensor b_ih, b_hh;  // [gates*d]
  };
  RnnDirection fwd_, bwd_;
  Tensor entity_w_, entity_b_;  // [d x 2d], [d]
  Tensor aspect_w_, aspect_b_;
  bool frozen_ = false;
};

}  // namespace passmatch

// SPDX-License-Identifier: Apache-2.0
#include "passmatch/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "passmatch/util.hpp"

namespace passmatch {

// ==================== Vocabulary ====================

namespace {
const std::map<std::string, int>& special_literal_slots() {
  // [QUERY]/[PASSAGE] are resolved against the vocab tail; -1/-2 mark them.
  static const std::map<std::string, int> slots = {
      {"[PAD]", Vocab::pad_id}, {"[CLS]", Vocab::cls_id}, {"[SEP]", Vocab::sep_id},
      {"[UNK]", Vocab::unk_id}, {"[QUERY]", -2},          {"[PASSAGE]", -1}};
  return slots;
}
}  // namespace

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string run;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (is_word_char(u)) {
      run += static_cast<char>(std::tolower(u));
    } else {
      if (!run.empty()) {
        out.push_back(run);
        run.clear();
      }
      if (!std::isspace(u)) out.push_back(std::string(1, c));
    }
  }
  if (!run.empty()) out.push_back(run);
  return out;
}

Vocab Vocab::build(const Corpus& corpus, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("vocab: min_freq must be >= 1");
  std::map<std::string, int> counts;
  for (const Passage& p : corpus.passages())
    for (const std::string& t : word_tokens(p.text)) ++counts[t];
  for (const Document& d : corpus.documents())
    for (const Section& s : d.sections)
      for (const std::string& t : word_tokens(s.heading)) ++counts[t];

  std::vector<std::string> tokens = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (const auto& [token, count] : counts)  // std::map: sorted, deterministic
    if (count >= min_freq) tokens.push_back(token);
  tokens.push_back("[QUERY]");
  tokens.push_back("[PASSAGE]");
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> id_to_token) {
  if (id_to_token.size() < 6)
    throw std::invalid_argument("vocab: needs at least the six special tokens");
  Vocab v;
  v.id_to_token_ = std::move(id_to_token);
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    if (!v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + v.id_to_token_[i] + "'");
  }
  const char* expected[] = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (int i = 0; i < 4; ++i)
    if (v.id_to_token_[static_cast<std::size_t>(i)] != expected[i])
      throw std::invalid_argument("vocab: special token slots out of order");
  if (v.id_to_token_[v.id_to_token_.size() - 2] != "[QUERY]" ||
      v.id_to_token_.back() != "[PASSAGE]")
    throw std::invalid_argument("vocab: marker tokens must sit at the end");
  return v;
}

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id : it->second;
}

// ==================== Tokenizer ====================

namespace {
// Ids for the body of a text: specials resolved, words lowercased, OOV->unk.
std::vector<int> body_ids(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string chunk;
  while (in >> chunk) {
    auto it = special_literal_slots().find(chunk);
    if (it != special_literal_slots().end()) {
      const int slot = it->second;
      ids.push_back(slot >= 0 ? slot : (slot == -2 ? vocab.query_id() : vocab.passage_id()));
      continue;
    }
    for (const std::string& t : word_tokens(chunk)) ids.push_back(vocab.lookup(t));
  }
  return ids;
}
}  // namespace

TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  TokenSequence seq;
  seq.ids.push_back(Vocab::cls_id);
  for (int id : body_ids(text, vocab)) seq.ids.push_back(id);
  if (static_cast<int>(seq.ids.size()) > max_len) {
    seq.ids.resize(static_cast<std::size_t>(max_len));
    seq.truncated = true;
  }
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

TokenSequence tokenize_pair(const std::string& query_text, const std::string& passage_text,
                            const Vocab& vocab, int max_len) {
  if (max_len < 4) throw std::invalid_argument("tokenize_pair: max_len must be >= 4");
  const std::vector<int> q = body_ids(query_text, vocab);
  const std::vector<int> p = body_ids(passage_text, vocab);
  const int budget = max_len - 2;  // [CLS] and [SEP] always survive
  const int qn = std::min<int>(static_cast<int>(q.size()), budget);
  const int pn = std::min<int>(static_cast<int>(p.size()), budget - qn);

  TokenSequence seq;
  seq.truncated = qn < static_cast<int>(q.size()) || pn < static_cast<int>(p.size());
  seq.ids.push_back(Vocab::cls_id);
  seq.ids.insert(seq.ids.end(), q.begin(), q.begin() + qn);
  seq.ids.push_back(Vocab::sep_id);
  seq.ids.insert(seq.ids.end(), p.begin(), p.begin() + pn);
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

std::string build_query_text(const std::string& entity, const std::string& aspect, bool marked) {
  if (trim(entity).empty() || trim(aspect).empty())
    throw std::invalid_argument("query: entity and aspect must be non-empty");
  const std::string body = entity + " [SEP] " + aspect;
  return marked ? "[QUERY] " + body : body;
}

std::string build_passage_text(const std::string& text, bool marked) {
  return marked ? "[PASSAGE] " + text : text;
}

// ==================== Transformer encoder ====================

void EncoderConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument("encoder: d_model must be a positive multiple of n_heads");
  if (n_layers < 1) throw std::invalid_argument("encoder: n_layers must be >= 1");
  if (ffn_dim < 1) throw std::invalid_argument("encoder: ffn_dim must be >= 1");
  if (max_len < 4) throw std::invalid_argument("encoder: max_len must be >= 4");
  if (vocab_size < 5) throw std::invalid_argument("encoder: vocab_size not set");
  if (!(init_scale > 0)) throw std::invalid_argument("encoder: init_scale must be positive");
}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const Scalar s = static_cast<Scalar>(cfg_.init_scale);
  tok_emb_ = Tensor::randn({cfg_.vocab_size, d}, rng, s, true);
  pos_emb_ = Tensor::randn({cfg_.max_len, d}, rng, s, true);
  layers_.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (auto& layer : layers_) {
    layer.wq = Tensor::randn({d, d}, rng, s, true);
    layer.wk = Tensor::randn({d, d}, rng, s, true);
    layer.wv = Tensor::randn({d, d}, rng, s, true);
    layer.wo = Tensor::randn({d, d}, rng, s, true);
    layer.ln_gain = Tensor::full({d}, 1, true);
    layer.ln_bias = Tensor::zeros({d}, true);
    layer.ffn_w1 = Tensor::randn({d, cfg_.ffn_dim}, rng, s, true);
    layer.ffn_b1 = Tensor::zeros({cfg_.ffn_dim}, true);
    layer.ffn_w2 = Tensor::randn({cfg_.ffn_dim, d}, rng, s, true);
    layer.ffn_b2 = Tensor::zeros({d}, true);
  }
}

Tensor Encoder::encode(const TokenSequence& seq) const {
  const int t_len = seq.length();
  if (t_len < 1) throw std::invalid_argument("encode: empty sequence");
  if (t_len > cfg_.max_len)
    throw std::invalid_argument("encode: sequence of length " + std::to_string(t_len) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
  if (!seq.mask.empty() && seq.mask.size() != seq.ids.size())
    throw std::invalid_argument("encode: mask length mismatch");
  for (int id : seq.ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(cfg_.vocab_size));

  std::vector<int> positions(static_cast<std::size_t>(t_len));
  for (int i = 0; i < t_len; ++i) positions[static_cast<std::size_t>(i)] = i;
  Tensor x = add(gather_rows(tok_emb_, seq.ids), gather_rows(pos_emb_, positions));

  // Additive attention mask: padded key columns get a huge negative logit so
  // their softmax weight is exactly representable-zero.
  bool any_pad = false;
  for (std::uint8_t m : seq.mask) any_pad = any_pad || m == 0;
  Tensor attn_mask;
  if (any_pad) {
    attn_mask = Tensor::zeros({t_len, t_len});
    for (int i = 0; i < t_len; ++i)
      for (int j = 0; j < t_len; ++j)
        if (seq.mask[static_cast<std::size_t>(j)] == 0)
          attn_mask.mutable_data()[static_cast<std::size_t>(i) * t_len + j] =
              static_cast<Scalar>(-1e30);
  }

  const int d = cfg_.d_model;
  const int dh = d / cfg_.n_heads;
  const Scalar inv_sqrt_dh = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (const Layer& layer : layers_) {
    Tensor q = matmul(x, layer.wq);
    Tensor k = matmul(x, layer.wk);
    Tensor v = matmul(x, layer.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      if (any_pad) scores = add(scores, attn_mask);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    Tensor attn_out = matmul(concat_cols(heads), layer.wo);
    x = layer_norm(add(x, attn_out), layer.ln_gain, layer.ln_bias);
    Tensor hidden = relu(add_row_broadcast(matmul(x, layer.ffn_w1), layer.ffn_b1));
    x = add_row_broadcast(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
  }
  return x;
}

Tensor Encoder::encode_cls(const TokenSequence& seq) const { return pool_cls(encode(seq)); }

void Encoder::collect_parameters(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + "tok_emb", tok_emb_);
  out.emplace_back(prefix + "pos_emb", pos_emb_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string lp = prefix + "layers." + std::to_string(i) + ".";
    const Layer& l = layers_[i];
    out.emplace_back(lp + "wq", l.wq);
    out.emplace_back(lp + "wk", l.wk);
    out.emplace_back(lp + "wv", l.wv);
    out.emplace_back(lp + "wo", l.wo);
    out.emplace_back(lp + "ln_gain", l.ln_gain);
    out.emplace_back(lp + "ln_bias", l.ln_bias);
    out.emplace_back(lp + "ffn_w1", l.ffn_w1);
    out.emplace_back(lp + "ffn_b1", l.ffn_b1);
    out.emplace_back(lp + "ffn_w2", l.ffn_w2);
    out.emplace_back(lp + "ffn_b2", l.ffn_b2);
  }
}

Tensor pool_cls(const Tensor& hidden) { return select_row(hidden, 0); }

Tensor pool_mean(const Tensor& hidden, const TokenSequence& seq) {
  std::vector<int> keep;
  for (int i = 0; i < static_cast<int>(seq.ids.size()); ++i)
    if (seq.mask.empty() || seq.mask[static_cast<std::size_t>(i)]) keep.push_back(i);
  if (keep.empty()) throw std::invalid_argument("pool_mean: all positions padded");
  if (static_cast<int>(keep.size()) == hidden.rows()) return mean_axis0(hidden);
  return mean_axis0(gather_rows(hidden, keep));
}

// ==================== Scoring primitives ====================

Tensor bi_score(const Tensor& q_vec, const Tensor& p_vec) { return dot(q_vec, p_vec); }

Tensor poly_score(const Tensor& q_vec, const Tensor& p_tokens, const Tensor& w_attn) {
  Tensor y = softmax_vec(matvec(p_tokens, q_vec));        // [n]
  Tensor c = matvec(transpose(p_tokens), y);              // [d]
  return dot(relu(matvec(w_attn, c)), q_vec);
}

// ==================== Matcher base ====================

void MatcherConfig::validate() const {
  if (architecture != "bi" && architecture != "poly" && architecture != "cross" &&
      architecture != "cdv")
    throw std::invalid_argument("matcher: unknown architecture '" + architecture + "'");
  if (cdv_rnn != "lstm" && cdv_rnn != "gru")
    throw std::invalid_argument("matcher: cdv_rnn must be 'lstm' or 'gru'");
}

Tensor Matcher::score_batch(const std::vector<Query>& queries,
                            const std::vector<const Passage*>& passages) {
  if (queries.empty() || passages.empty())
    throw std::invalid_argument("score_batch: empty queries or passages");
  std::vector<Tensor> scalars;
  scalars.reserve(queries.size() * passages.size());
  for (const Query& q : queries)
    for (const Passage* p : passages) scalars.push_back(score_pair(q, *p));
  return from_scalars(static_cast<int>(queries.size()), static_cast<int>(passages.size()),
                      scalars);
}

std::vector<Tensor> Matcher::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) {
    (void)name;
    out.push_back(t);
  }
  return out;
}

long parameter_count(const Matcher& m) {
  long total = 0;
  for (const auto& [name, t] : m.named_parameters()) {
    (void)name;
    total += static_cast<long>(t.numel());
  }
  return total;
}

std::unique_ptr<Matcher> make_matcher(MatcherConfig cfg, Vocab vocab) {
  cfg.validate();
  if (cfg.architecture == "bi") return std::make_unique<BiMatcher>(std::move(cfg), std::move(vocab));
  if (cfg.architecture == "poly")
    return std::make_unique<PolyMatcher>(std::move(cfg), std::move(vocab));
  if (cfg.architecture == "cross")
    return std::make_unique<CrossMatcher>(std::move(cfg), std::move(vocab));
  return std::make_unique<CdvMatcher>(std::move(cfg), std::move(vocab));
}

// ==================== Bi ====================

BiMatcher::BiMatcher(MatcherConfig cfg, Vocab vocab) : Matcher(std::move(cfg), std::move(vocab)) {
  std::mt19937_64 rng(cfg_.encoder.seed);
  EncoderConfig ec = cfg_.encoder;
  ec.vocab_size = cfg_.shared_weights ? vocab_.size() : vocab_.base_size();
  cfg_.encoder.vocab_size = ec.vocab_size;
  query_enc_ = Encoder(ec, rng);
  passage_enc_ = cfg_.shared_weights ? query_enc_ : Encoder(ec, rng);
}

Tensor BiMatcher::embed_query(const Query& q) {
  const std::string text = build_query_text(q.entity, q.aspect, cfg_.shared_weights);
  return query_enc_.encode_cls(tokenize(text, vocab_, cfg_.encoder.max_len));
}

Tensor BiMatcher::embed_passage_text(const std::string& text) {
  const std::string marked = build_passage_text(text, cfg_.shared_weights);
  return passage_enc_.encode_cls(tokenize(marked, vocab_, cfg_.encoder.max_len));
}

Tensor BiMatcher::score_pair(const Query& q, const Passage& p) {
  return bi_score(embed_query(q), embed_passage(p));
}

Tensor BiMatcher::score_batch(const std::vector<Query>& queries,
                              const std::vector<const Passage*>& passages) {
  if (queries.empty() || passages.empty())
    throw std::invalid_argument("score_batch: empty queries or passages");
  std::vector<Tensor> q_rows, p_rows;
  q_rows.reserve(queries.size());
  p_rows.reserve(passages.size());
  for (const Query& q : queries) q_rows.push_back(embed_query(q));
  for (const Passage* p : passages) p_rows.push_back(embed_passage(*p));
  return matmul(stack_rows(q_rows), transpose(stack_rows(p_rows)));
}

std::vector<NamedTensor> BiMatcher::named_parameters() const {
  std::vector<NamedTensor> out;
  if (cfg_.shared_weights) {
    query_enc_.collect_parameters("encoder.", out);
  } else {
    query_enc_.collect_parameters("query_encoder.", out);
    passage_enc_.collect_parameters("passage_encoder.", out);
  }
  return out;
}

// ==================== Poly ====================

PolyMatcher::PolyMatcher(MatcherConfig cfg, Vocab vocab)
    : Matcher(std::move(cfg), std::move(vocab)) {
  std::mt19937_64 rng(cfg_.encoder.seed);
  EncoderConfig ec = cfg_.encoder;
  ec.vocab_size = cfg_.shared_weights ? vocab_.size() : vocab_.base_size();
  cfg_.encoder.vocab_size = ec.vocab_size;
  query_enc_ = Encoder(ec, rng);
  passage_enc_ = cfg_.shared_weights ? query_enc_ : Encoder(ec, rng);
  w_attn_ = Tensor::identity(cfg_.encoder.d_model, true);
}

Tensor PolyMatcher::embed_query(const Query& q) {
  const std::string text = build_query_text(q.entity, q.aspect, cfg_.shared_weights);
  return query_enc_.encode_cls(tokenize(text, vocab_, cfg_.encoder.max_len));
}

Tensor PolyMatcher::passage_tokens(const std::string& text) {
  const std::string marked = build_passage_text(text, cfg_.shared_weights);
  const TokenSequence seq = tokenize(marked, vocab_, cfg_.encoder.max_len);
  Tensor hidden = passage_enc_.encode(seq);
  std::vector<int> keep;
  for (int i = 0; i < seq.length(); ++i)
    if (seq.mask.empty() || seq.mask[static_cast<std::size_t>(i)]) keep.push_back(i);
  if (static_cast<int>(keep.size()) == hidden.rows()) return hidden;
  return gather_rows(hidden, keep);
}

Tensor PolyMatcher::combine(const Tensor& q_vec, const Tensor& p_tokens) {
  return poly_score(q_vec, p_tokens, w_attn_);
}

Tensor PolyMatcher::score_pair(const Query& q, const Passage& p) {
  return combine(embed_query(q), passage_tokens(p.text));
}

Tensor PolyMatcher::score_batch(const std::vector<Query>& queries,
                                const std::vector<const Passage*>& passages) {
  if (queries.empty() || passages.empty())
    throw std::invalid_argument("score_batch: empty queries or passages");
  std::vector<Tensor> q_vecs, p_toks;
  for (const Query& q : queries) q_vecs.push_back(embed_query(q));
  for (const Passage* p : passages) p_toks.push_back(passage_tokens(p->text));
  std::vector<Tensor> scalars;
  scalars.reserve(queries.size() * passages.size());
  for (const Tensor& qv : q_vecs)
    for (const Tensor& pt : p_toks) scalars.push_back(combine(qv, pt));
  return from_scalars(static_cast<int>(queries.size()), static_cast<int>(passages.size()),
                      scalars);
}

std::vector<NamedTensor> PolyMatcher::named_parameters() const {
  std::vector<NamedTensor> out;
  if (cfg_.shared_weights) {
    query_enc_.collect_parameters("encoder.", out);
  } else {
    query_enc_.collect_parameters("query_encoder.", out);
    passage_enc_.collect_parameters("passage_encoder.", out);
  }
  out.emplace_back("w_attn", w_attn_);
  return out;
}

// ==================== Cross ====================

CrossMatcher::CrossMatcher(MatcherConfig cfg, Vocab vocab)
    : Matcher(std::move(cfg), std::move(vocab)) {
  std::mt19937_64 rng(cfg_.encoder.seed);
  EncoderConfig ec = cfg_.encoder;
  ec.vocab_size = vocab_.base_size();  // joint input never uses marker tokens
  cfg_.encoder.vocab_size = ec.vocab_size;
  enc_ = Encoder(ec, rng);
  head_w_ = Tensor::randn({cfg_.encoder.d_model}, rng,
                          static_cast<Scalar>(cfg_.encoder.init_scale), true);
  head_b_ = Tensor::zeros({1}, true);
}

Tensor CrossMatcher::score_texts(const std::string& query_text, const std::string& passage_text) {
  const TokenSequence seq = tokenize_pair(query_text, passage_text, vocab_, cfg_.encoder.max_len);
  return add(dot(head_w_, enc_.encode_cls(seq)), head_b_);
}

Tensor CrossMatcher::score_pair(const Query& q, const Passage& p) {
  return score_texts(build_query_text(q.entity, q.aspect, false), p.text);
}

std::vector<NamedTensor> CrossMatcher::named_parameters() const {
  std::vector<NamedTensor> out;
  enc_.collect_parameters("encoder.", out);
  out.emplace_back("head.w", head_w_);
  out.emplace_back("head.b", head_b_);
  return out;
}

// ==================== CDV ====================

CdvMatcher::CdvMatcher(MatcherConfig cfg, Vocab vocab)
    : Matcher(std::move(cfg), std::move(vocab)) {
  std::mt19937_64 rng(cfg_.encoder.seed);
  EncoderConfig ec = cfg_.encoder;
  ec.vocab_size = vocab_.base_size();
  cfg_.encoder.vocab_size = ec.vocab_size;
  enc_ = Encoder(ec, rng);

  const int d = cfg_.encoder.d_model;
  const int gates = cfg_.cdv_rnn == "lstm" ? 4 : 3;
  const Scalar s = static_cast<Scalar>(cfg_.encoder.init_scale);
  for (RnnDirection* dir : {&fwd_, &bwd_}) {
    dir->w_ih = Tensor::randn({gates * d, d}, rng, s, true);
    dir->w_hh = Tensor::randn({gates * d, d}, rng, s, true);
    dir->b_ih = Tensor::zeros({gates * d}, true);
    dir->b_hh = Tensor::zeros({gates * d}, true);
  }
  // Head biases start random, not zero: with tiny recurrent states the bias
  // dominates the prediction vector, and a zero bias would make its norm
  // vanish — cosine gradients scale with 1/norm and explode.
  entity_w_ = Tensor::randn({d, 2 * d}, rng, s, true);
  entity_b_ = Tensor::randn({d}, rng, s, true);
  aspect_w_ = Tensor::randn({d, 2 * d}, rng, s, true);
  aspect_b_ = Tensor::randn({d}, rng, s, true);
}

namespace {
// Slice [begin, begin+len) out of a rank-1 tensor, differentiably.
Tensor slice_vec(const Tensor& v, int begin, int len) {
  return reshape(slice_cols(reshape(v, {1, v.dim(0)}), begin, len), {len});
}
}  // namespace

std::vector<Tensor> CdvMatcher::rnn_states(const std::vector<Tensor>& inputs) const {
  const int d = cfg_.encoder.d_model;
  const bool lstm = cfg_.cdv_rnn == "lstm";
  auto run = [&](const RnnDirection& dir, bool reverse) {
    std::vector<Tensor> states(inputs.size());
    Tensor h = Tensor::zeros({d});
    Tensor c = Tensor::zeros({d});
    const int n = static_cast<int>(inputs.size());
    for (int step = 0; step < n; ++step) {
      const int t = reverse ? n - 1 - step : step;
      const Tensor& x = inputs[static_cast<std::size_t>(t)];
      Tensor gx = add(matvec(dir.w_ih, x), dir.b_ih);
      Tensor gh = add(matvec(dir.w_hh, h), dir.b_hh);
      if (lstm) {
        Tensor z = add(gx, gh);
        Tensor i = sigmoid(slice_vec(z, 0, d));
        Tensor f = sigmoid(slice_vec(z, d, d));
        Tensor g = tanh(slice_vec(z, 2 * d, d));
        Tensor o = sigmoid(slice_vec(z, 3 * d, d));
        c = add(mul(f, c), mul(i, g));
        h = mul(o, tanh(c));
      } else {
        Tensor r = sigmoid(add(slice_vec(gx, 0, d), slice_vec(gh, 0, d)));
        Tensor zt = sigmoid(add(slice_vec(gx, d, d), slice_vec(gh, d, d)));
        Tensor n_gate = tanh(add(slice_vec(gx, 2 * d, d), mul(r, slice_vec(gh, 2 * d, d))));
        h = add(sub(n_gate, mul(zt, n_gate)), mul(zt, h));
      }
      states[static_cast<std::size_t>(t)] = h;
    }
    return states;
  };
  const std::vector<Tensor> f_states = run(fwd_, false);
  const std::vector<Tensor> b_states = run(bwd_, true);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t)
    out.push_back(concat_vec(f_states[t], b_states[t]));
  return out;
}

Tensor CdvMatcher::sentence_vector(const std::string& sentence) const {
  const TokenSequence seq = tokenize(sentence, vocab_, cfg_.encoder.max_len);
  if (frozen_) {
    Tape::Pause pause;  // encoder acts as a fixed feature extractor
    return pool_mean(enc_.encode(seq), seq);
  }
  return enc_.encode_cls(seq);
}

CdvMatcher::PassagePrediction CdvMatcher::predict_passage(const Passage& p) {
  const std::vector<std::string> sentences = p.sentences();
  if (sentences.empty()) throw std::invalid_argument("cdv: passage without sentences");
  std::vector<Tensor> vecs;
  vecs.reserve(sentences.size());
  for (const std::string& s : sentences) vecs.push_back(sentence_vector(s));
  PassagePrediction pred;
  for (const Tensor& r : rnn_states(vecs)) {
    pred.entity_preds.push_back(add(matvec(entity_w_, r), entity_b_));
    pred.aspect_preds.push_back(add(matvec(aspect_w_, r), aspect_b_));
  }
  return pred;
}

Tensor CdvMatcher::query_entity_vec(const Query& q) {
  if (trim(q.entity).empty()) throw std::invalid_argument("cdv: empty query entity");
  const TokenSequence seq = tokenize(q.entity, vocab_, cfg_.encoder.max_len);
  if (frozen_) {
    Tape::Pause pause;
    return enc_.encode_cls(seq);
  }
  return enc_.encode_cls(seq);
}

Tensor CdvMatcher::query_aspect_vec(const Query& q) {
  if (trim(q.aspect).empty()) throw std::invalid_argument("cdv: empty query aspect");
  const TokenSequence seq = tokenize(q.aspect, vocab_, cfg_.encoder.max_len);
  if (frozen_) {
    Tape::Pause pause;
    return enc_.encode_cls(seq);
  }
  return enc_.encode_cls(seq);
}

Tensor CdvMatcher::combine(const Tensor& q_e, const Tensor& q_a, const PassagePrediction& pred) {
  const std::size_t m = pred.entity_preds.size();
  Tensor acc = add(cosine(pred.entity_preds[0], q_e), cosine(pred.aspect_preds[0], q_a));
  for (std::size_t t = 1; t < m; ++t) {
    acc = add(acc, cosine(pred.entity_preds[t], q_e));
    acc = add(acc, cosine(pred.aspect_preds[t], q_a));
  }
  return scale(acc, static_cast<Scalar>(1.0 / (2.0 * static_cast<double>(m))));
}

Tensor CdvMatcher::score_pair(const Query& q, const Passage& p) {
  return combine(query_entity_vec(q), query_aspect_vec(q), predict_passage(p));
}

Tensor CdvMatcher::score_batch(const std::vector<Query>& queries,
                               const std::vector<const Passage*>& passages) {
  if (queries.empty() || passages.empty())
    throw std::invalid_argument("score_batch: empty queries or passages");
  std::vector<Tensor> q_es, q_as;
  for (const Query& q : queries) {
    q_es.push_back(query_entity_vec(q));
    q_as.push_back(query_aspect_vec(q));
  }
  std::vector<PassagePrediction> preds;
  preds.reserve(passages.size());
  for (const Passage* p : passages) preds.push_back(predict_passage(*p));
  std::vector<Tensor> scalars;
  scalars.reserve(queries.size() * passages.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (const PassagePrediction& pred : preds)
      scalars.push_back(combine(q_es[i], q_as[i], pred));
  return from_scalars(static_cast<int>(queries.size()), static_cast<int>(passages.size()),
                      scalars);
}

std::vector<NamedTensor> CdvMatcher::named_parameters() const {
  std::vector<NamedTensor> out;
  enc_.collect_parameters("encoder.", out);
  const char* dirs[] = {"rnn.fwd.", "rnn.bwd."};
  const RnnDirection* ps[] = {&fwd_, &bwd_};
  for (int i = 0; i < 2; ++i) {
    out.emplace_back(std::string(dirs[i]) + "w_ih", ps[i]->w_ih);
    out.emplace_back(std::string(dirs[i]) + "w_hh", ps[i]->w_hh);
    out.emplace_back(std::string(dirs[i]) + "b_ih", ps[i]->b_ih);
    out.emplace_back(std::string(dirs[i]) + "b_hh", ps[i]->b_hh);
  }
  out.emplace_back("entity_head.w", entity_w_);
  out.emplace_back("entity_head.b", entity_b_);
  out.emplace_back("aspect_head.w", aspect_w_);
  out.emplace_back("aspect_head.b", aspect_b_);
  return out;
}

std::vector<Tensor> CdvMatcher::trainable_parameters() const {
  if (!frozen_) return Matcher::trainable_parameters();
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters())
    if (name.rfind("encoder.", 0) != 0) out.push_back(t);
  return out;
}

}  // namespace passmatch

#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gw/chem.hpp"
#include "gw/error.hpp"
#include "gw/ftseq.hpp"
#include "gw/tensor.hpp"
#include "gw/vocab.hpp"

namespace gw::model {

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int dim = 64;
  int word_count = 1;  // k
  int d_p = 64;
  int m = 128;
  int ffn_mult = 4;
  int n_conditions = 0;

  int context_limit() const { return 2 * m + word_count + 4; }
};

struct DecoderConfig {
  int layers = 2;
  int heads = 4;
  int dim = 64;
  int d_p = 64;
  int m = 128;
  int ffn_mult = 4;
  double place_threshold = 0.5;  // ε
  int max_blocks = 64;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int n_bonds = 0;

  void validate() const {
    auto check = [](int dim, int heads, int layers) {
      if (layers < 1 || heads < 1 || dim < 1 || dim % heads != 0)
        throw ValidationError("model dims must be positive with dim divisible by heads");
    };
    check(encoder.dim, encoder.heads, encoder.layers);
    check(decoder.dim, decoder.heads, decoder.layers);
    if (encoder.dim != decoder.dim)
      throw ValidationError("encoder and decoder hidden sizes must match");
    if (encoder.word_count < 1) throw ValidationError("word count must be >= 1");
    if (encoder.m < 1 || decoder.m < 1) throw ValidationError("codebook size must be >= 1");
    if (!(decoder.place_threshold > 0.0 && decoder.place_threshold < 1.0))
      throw ValidationError("placement threshold must lie in (0,1)");
    if (n_bonds < 1) throw ValidationError("bond vocabulary must be non-empty");
  }
};

// ---------------------------------------------------------------------------
// Attention masks
// ---------------------------------------------------------------------------

// Block-wise causal mask: the prefix (graph words + [BOS]) acts as block 0
// visible from everywhere; position i attends j iff block(j) <= block(i).
// Positions beyond prefix+blocks are padding: they attend real positions but
// receive no attention.
inline nn::BoolMat build_block_mask(const std::vector<ftseq::Block>& blocks, int prefix_len,
                                    int total_len = -1) {
  int seq_len = 0;
  for (const ftseq::Block& b : blocks) {
    if (b.begin != seq_len) throw ValidationError("blocks must partition the token range");
    seq_len += b.length;
  }
  int real = prefix_len + seq_len;
  if (total_len < 0) total_len = real;
  if (total_len < real) throw ValidationError("mask length shorter than sequence");

  constexpr int kPad = std::numeric_limits<int>::max();
  std::vector<int> block_of(total_len, kPad);
  for (int i = 0; i < prefix_len; ++i) block_of[i] = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int t = 0; t < blocks[b].length; ++t)
      block_of[prefix_len + blocks[b].begin + t] = static_cast<int>(b) + 1;
  }
  nn::BoolMat mask(total_len, total_len);
  for (int i = 0; i < total_len; ++i)
    for (int j = 0; j < total_len; ++j)
      mask.set(i, j, block_of[j] != kPad && block_of[j] <= block_of[i]);
  return mask;
}

// Full attention over the first `real_len` positions; padding is attended by
// nobody but may look at real positions.
inline nn::BoolMat build_full_mask(int total_len, int real_len) {
  nn::BoolMat mask(total_len, total_len);
  for (int i = 0; i < total_len; ++i)
    for (int j = 0; j < real_len; ++j) mask.set(i, j, true);
  return mask;
}

// ---------------------------------------------------------------------------
// Greedy decisions shared by generation and the step oracles
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> normalize_vec(const T* x, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += double(x[i]) * double(x[i]);
  double inv = 1.0 / std::sqrt(s + 1e-24);
  std::vector<T> out(n);
  for (int i = 0; i < n; ++i) out[i] = static_cast<T>(x[i] * inv);
  return out;
}

struct AttachResult {
  int index = 0;        // node index among generated nodes (slot id)
  double similarity = 0;
};

// Left node attachment: cosine argmax over the `used` leading codebook rows.
template <typename T>
AttachResult attach_decision(const std::vector<T>& pred_normalized,
                             const nn::Array<T>& codebook, int used) {
  if (used < 1) throw ValidationError("attachment requires at least one generated node");
  AttachResult best;
  best.index = 0;
  best.similarity = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < used; ++r) {
    double dot = 0;
    for (int c = 0; c < codebook.cols(); ++c)
      dot += double(pred_normalized[c]) * double(codebook.at(r, c));
    if (dot > best.similarity) {
      best.similarity = dot;
      best.index = r;
    }
  }
  return best;
}

struct PlaceResult {
  bool existing = false;  // case 1
  int index = 0;          // attached node (case 1) or fresh slot (case 2)
  double similarity = 0;
};

// Right node placement: attach when the best cosine strictly exceeds eps,
// otherwise allocate the next slot.
template <typename T>
PlaceResult place_decision(const std::vector<T>& pred_normalized, const nn::Array<T>& codebook,
                           int used, double eps) {
  AttachResult a = attach_decision(pred_normalized, codebook, used);
  PlaceResult out;
  out.similarity = a.similarity;
  if (a.similarity > eps) {
    out.existing = true;
    out.index = a.index;
  } else {
    out.existing = false;
    out.index = used;  // slot j+1
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared embedding machinery
// ---------------------------------------------------------------------------

template <typename T>
struct TransformerBlock {
  nn::Parameter<T> norm1_g, wq, wk, wv, wo, norm2_g, w1, b1, w2, b2;
  int heads = 1;

  void init(std::mt19937_64& rng, const std::string& prefix, int dim, int ffn_mult, int n_heads) {
    heads = n_heads;
    double s = 0.02;
    norm1_g = {prefix + ".norm1.gain", nn::Array<T>::full(nn::Shape::vec(dim), T(1))};
    wq = {prefix + ".attn.wq", nn::randn<T>(rng, nn::Shape::mat(dim, dim), s)};
    wk = {prefix + ".attn.wk", nn::randn<T>(rng, nn::Shape::mat(dim, dim), s)};
    wv = {prefix + ".attn.wv", nn::randn<T>(rng, nn::Shape::mat(dim, dim), s)};
    wo = {prefix + ".attn.wo", nn::randn<T>(rng, nn::Shape::mat(dim, dim), s)};
    norm2_g = {prefix + ".norm2.gain", nn::Array<T>::full(nn::Shape::vec(dim), T(1))};
    w1 = {prefix + ".ffn.w1", nn::randn<T>(rng, nn::Shape::mat(dim, dim * ffn_mult), s)};
    b1 = {prefix + ".ffn.b1", nn::Array<T>(nn::Shape::vec(dim * ffn_mult))};
    w2 = {prefix + ".ffn.w2", nn::randn<T>(rng, nn::Shape::mat(dim * ffn_mult, dim), s)};
    b2 = {prefix + ".ffn.b2", nn::Array<T>(nn::Shape::vec(dim))};
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    for (nn::Parameter<T>* p : {&norm1_g, &wq, &wk, &wv, &wo, &norm2_g, &w1, &b1, &w2, &b2})
      out.push_back(p);
  }

  nn::Var<T> forward(nn::Tape<T>& tape, nn::Var<T> x, const nn::BoolMat& mask) const {
    auto& t = const_cast<TransformerBlock&>(*this);
    int dim = x.val().cols();
    int dh = dim / heads;
    nn::Var<T> a = nn::rmsnorm(x, tape.param(t.norm1_g));
    nn::Var<T> q = nn::matmul(a, tape.param(t.wq));
    nn::Var<T> k = nn::matmul(a, tape.param(t.wk));
    nn::Var<T> v = nn::matmul(a, tape.param(t.wv));
    std::vector<nn::Var<T>> head_out;
    head_out.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      nn::Var<T> qh = nn::slice_cols(q, h * dh, dh);
      nn::Var<T> kh = nn::slice_cols(k, h * dh, dh);
      nn::Var<T> vh = nn::slice_cols(v, h * dh, dh);
      head_out.push_back(nn::masked_attention(qh, kh, vh, mask));
    }
    nn::Var<T> cat = heads == 1 ? head_out[0] : nn::concat_cols(head_out);
    x = nn::add(x, nn::matmul(cat, tape.param(t.wo)));

    nn::Var<T> b = nn::rmsnorm(x, tape.param(t.norm2_g));
    nn::Var<T> ff = nn::linear(b, t.w1, t.b1);
    ff = nn::swish(ff);
    ff = nn::linear(ff, t.w2, t.b2);
    return nn::add(x, ff);
  }
};

// Token embedding: dictionary row + projected slot-vector pair + segment row.
// Special tokens carry neither slots nor segment.
template <typename T>
struct TokenEmbedder {
  nn::Parameter<T> token_table;  // [vocab, dim]
  nn::Parameter<T> gpe_proj;     // [2*d_p, dim]
  nn::Parameter<T> segment;      // [2, dim]
  nn::Parameter<T> codebook;     // [m, d_p], unit rows

  void init(std::mt19937_64& rng, const std::string& prefix, int vocab, int dim, int d_p, int m) {
    token_table = {prefix + ".token_table", nn::randn<T>(rng, nn::Shape::mat(vocab, dim), 0.02)};
    gpe_proj = {prefix + ".gpe_proj", nn::randn<T>(rng, nn::Shape::mat(2 * d_p, dim), 0.02)};
    segment = {prefix + ".segment", nn::randn<T>(rng, nn::Shape::mat(2, dim), 0.02)};
    nn::Array<T> cb = nn::randn<T>(rng, nn::Shape::mat(m, d_p), 1.0);
    nn::renormalize_rows(cb);
    codebook = {prefix + ".codebook", std::move(cb)};
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    for (nn::Parameter<T>* p : {&token_table, &gpe_proj, &segment, &codebook}) out.push_back(p);
  }

  int slots() const { return codebook.value.rows(); }

  // perm remaps symbolic slots to codebook rows; empty = identity.
  nn::Var<T> embed(nn::Tape<T>& tape, const vocab::TokenLayout& layout,
                   const std::vector<ftseq::FtToken>& tokens, const std::vector<int>& perm) {
    const int m = slots();
    if (!perm.empty() && static_cast<int>(perm.size()) != m)
      throw ValidationError("permutation size does not match codebook");
    std::vector<int> ids, segs, left, right;
    ids.reserve(tokens.size());
    auto slot_row = [&](int slot) {
      if (slot < 0 || slot >= m)
        throw ValidationError("token slot exceeds codebook size " + std::to_string(m));
      return perm.empty() ? slot : perm[slot];
    };
    for (const ftseq::FtToken& tok : tokens) {
      ids.push_back(tok.is_node() ? layout.atom_id(tok.dict_id) : layout.bond_id(tok.dict_id));
      segs.push_back(tok.is_node() ? 0 : 1);
      left.push_back(slot_row(tok.slot_left));
      right.push_back(slot_row(tok.slot_right));
    }
    nn::Var<T> tok_emb = nn::rows(tape.param(token_table), ids);
    nn::Var<T> cb = tape.param(codebook);
    nn::Var<T> pair = nn::concat_cols<T>({nn::rows(cb, left), nn::rows(cb, right)});
    nn::Var<T> gpe = nn::matmul(pair, tape.param(gpe_proj));
    nn::Var<T> seg = nn::rows(tape.param(segment), segs);
    return nn::add(nn::add(tok_emb, gpe), seg);
  }
};

// ---------------------------------------------------------------------------
// Graph-to-words encoder
// ---------------------------------------------------------------------------

template <typename T>
struct Encoder {
  EncoderConfig cfg;
  vocab::TokenLayout layout;
  TokenEmbedder<T> embedder;
  nn::Parameter<T> gp_base;     // [dim]
  nn::Parameter<T> gp_pos;      // [k, dim]
  nn::Parameter<T> cond_dir;    // [n_conditions, dim] (scalar direction)
  std::vector<TransformerBlock<T>> blocks;
  nn::Parameter<T> final_gain;

  void init(std::mt19937_64& rng, const EncoderConfig& c, const vocab::TokenLayout& lay) {
    cfg = c;
    layout = lay;
    embedder.init(rng, "enc", layout.vocab_size(), cfg.dim, cfg.d_p, cfg.m);
    gp_base = {"enc.gp_base", nn::randn<T>(rng, nn::Shape::vec(cfg.dim), 0.02)};
    gp_pos = {"enc.gp_pos", nn::randn<T>(rng, nn::Shape::mat(cfg.word_count, cfg.dim), 0.02)};
    if (cfg.n_conditions > 0)
      cond_dir = {"enc.cond_dir",
                  nn::randn<T>(rng, nn::Shape::mat(cfg.n_conditions, cfg.dim), 0.02)};
    blocks.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l)
      blocks[l].init(rng, "enc.layer" + std::to_string(l), cfg.dim, cfg.ffn_mult, cfg.heads);
    final_gain = {"enc.final.gain", nn::Array<T>::full(nn::Shape::vec(cfg.dim), T(1))};
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    embedder.collect(out);
    out.push_back(&gp_base);
    out.push_back(&gp_pos);
    if (cfg.n_conditions > 0) out.push_back(&cond_dir);
    for (auto& b : blocks) b.collect(out);
    out.push_back(&final_gain);
  }

  struct Condition {
    int index = 0;  // condition token index
    T scalar = 0;   // normalized value
  };

  // Returns the hidden states at the k prompt positions. `pad_to` right-pads
  // the token segment with [PAD] positions masked out of attention.
  nn::Var<T> encode(nn::Tape<T>& tape, const ftseq::FTSeq& seq, const std::vector<int>& perm = {},
                    const std::vector<Condition>& conditions = {}, int pad_to = 0) {
    int extra = static_cast<int>(conditions.size());
    int real = cfg.word_count + extra + seq.size();
    if (real > cfg.context_limit())
      throw ValidationError("encoder context overflow: " + std::to_string(real));
    int pad = std::max(0, pad_to - seq.size());
    int total = real + pad;

    std::vector<nn::Var<T>> parts;
    parts.push_back(nn::add_rowvec(tape.param(gp_pos), tape.param(gp_base)));
    for (const Condition& c : conditions) {
      if (c.index < 0 || c.index >= cfg.n_conditions)
        throw ValidationError("unknown condition token " + std::to_string(c.index));
      nn::Var<T> base = nn::rows(tape.param(embedder.token_table), {layout.condition(c.index)});
      nn::Var<T> dir = nn::scale(nn::rows(tape.param(cond_dir), {c.index}), c.scalar);
      parts.push_back(nn::add(base, dir));
    }
    if (seq.size() > 0) parts.push_back(embedder.embed(tape, layout, seq.tokens, perm));
    if (pad > 0)
      parts.push_back(
          nn::rows(tape.param(embedder.token_table), std::vector<int>(pad, layout.pad())));
    nn::Var<T> x = parts.size() == 1 ? parts[0] : nn::concat_rows(parts);

    nn::BoolMat mask = build_full_mask(total, real);
    for (const auto& block : blocks) x = block.forward(tape, x, mask);
    x = nn::rmsnorm(x, tape.param(final_gain));
    return nn::slice_rows(x, 0, cfg.word_count);
  }

  nn::Array<T> encode_array(const ftseq::FTSeq& seq, const std::vector<int>& perm = {},
                            const std::vector<Condition>& conditions = {}) {
    nn::Tape<T> tape;
    return encode(tape, seq, perm, conditions).val();
  }
};

// ---------------------------------------------------------------------------
// Edge-centric autoregressive decoder
// ---------------------------------------------------------------------------

struct GenTraceStep {
  std::string kind;      // "node" | "edge" | "eos"
  int chosen = -1;       // atom id / bond id / -1 for eos
  int place_case = 0;    // 0 none, 1 existing node, 2 new node
  double similarity = 0; // right-placement cosine (edge steps)
  int class_width = 0;   // logits width of this decision
};

struct GenerateResult {
  ftseq::FTSeq tokens;
  std::optional<chem::MolecularGraph> graph;
  bool valid = false;
  bool truncated = false;
  std::string failure;  // empty when valid
  std::vector<GenTraceStep> trace;
};

struct GenerateOptions {
  double temperature = 0;  // 0 = greedy argmax
  std::mt19937_64* rng = nullptr;
  int max_blocks = -1;  // override config when > 0
};

template <typename T>
struct Decoder {
  DecoderConfig cfg;
  vocab::TokenLayout layout;
  TokenEmbedder<T> embedder;  // holds B'_p as .codebook
  std::vector<TransformerBlock<T>> blocks;
  nn::Parameter<T> final_gain;
  nn::Parameter<T> pred_v_w, pred_v_b;    // dim -> 118
  nn::Parameter<T> pred_e_w, pred_e_b;    // dim -> n_bonds + 1 ([EOS] last)
  nn::Parameter<T> pred_l_w, pred_l_b;    // dim -> d_p
  nn::Parameter<T> pred_r_w, pred_r_b;    // dim -> d_p

  void init(std::mt19937_64& rng, const DecoderConfig& c, const vocab::TokenLayout& lay) {
    cfg = c;
    layout = lay;
    embedder.init(rng, "dec", layout.vocab_size(), cfg.dim, cfg.d_p, cfg.m);
    blocks.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l)
      blocks[l].init(rng, "dec.layer" + std::to_string(l), cfg.dim, cfg.ffn_mult, cfg.heads);
    final_gain = {"dec.final.gain", nn::Array<T>::full(nn::Shape::vec(cfg.dim), T(1))};
    double s = 0.02;
    pred_v_w = {"dec.pred_v.w", nn::randn<T>(rng, nn::Shape::mat(cfg.dim, vocab::AtomDict::size()), s)};
    pred_v_b = {"dec.pred_v.b", nn::Array<T>(nn::Shape::vec(vocab::AtomDict::size()))};
    pred_e_w = {"dec.pred_e.w", nn::randn<T>(rng, nn::Shape::mat(cfg.dim, layout.n_bonds + 1), s)};
    pred_e_b = {"dec.pred_e.b", nn::Array<T>(nn::Shape::vec(layout.n_bonds + 1))};
    pred_l_w = {"dec.pred_l.w", nn::randn<T>(rng, nn::Shape::mat(cfg.dim, cfg.d_p), s)};
    pred_l_b = {"dec.pred_l.b", nn::Array<T>(nn::Shape::vec(cfg.d_p))};
    pred_r_w = {"dec.pred_r.w", nn::randn<T>(rng, nn::Shape::mat(cfg.dim, cfg.d_p), s)};
    pred_r_b = {"dec.pred_r.b", nn::Array<T>(nn::Shape::vec(cfg.d_p))};
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    embedder.collect(out);
    for (auto& b : blocks) b.collect(out);
    for (nn::Parameter<T>* p : {&final_gain, &pred_v_w, &pred_v_b, &pred_e_w, &pred_e_b,
                                &pred_l_w, &pred_l_b, &pred_r_w, &pred_r_b})
      out.push_back(p);
  }

  int prefix_len(int k) const { return k + 1; }  // words + [BOS]

  // Hidden states over [words, BOS, tokens] under the block-causal mask.
  // `pad_to` right-pads the token segment with inert [PAD] positions.
  nn::Var<T> hidden_states(nn::Tape<T>& tape, nn::Var<T> words,
                           const std::vector<ftseq::FtToken>& tokens,
                           const std::vector<ftseq::Block>& blocks_list, int pad_to = 0) {
    int k = words.val().rows();
    int pad = std::max(0, pad_to - static_cast<int>(tokens.size()));
    std::vector<nn::Var<T>> parts;
    parts.push_back(words);
    parts.push_back(nn::rows(tape.param(embedder.token_table), {layout.bos()}));
    if (!tokens.empty()) parts.push_back(embedder.embed(tape, layout, tokens, {}));
    if (pad > 0)
      parts.push_back(
          nn::rows(tape.param(embedder.token_table), std::vector<int>(pad, layout.pad())));
    nn::Var<T> x = nn::concat_rows(parts);
    nn::BoolMat mask = build_block_mask(blocks_list, prefix_len(k),
                                        prefix_len(k) + static_cast<int>(tokens.size()) + pad);
    for (const auto& block : blocks) x = block.forward(tape, x, mask);
    return nn::rmsnorm(x, tape.param(final_gain));
  }

  struct Losses {
    nn::Var<T> token;
    nn::Var<T> attach;
  };

  // Teacher-forced losses over one target sequence.
  //   token: cross entropy of the first-node prediction at [BOS] plus the
  //          next-edge prediction at each block's last token ([EOS] final).
  //   attach: per edge, (1 - s+) for left and right targets plus the mean
  //           absolute off-diagonal codebook similarity for each side.
  Losses teacher_losses(nn::Tape<T>& tape, nn::Var<T> words, const ftseq::FTSeq& target,
                        int pad_to = 0) {
    const std::vector<ftseq::Block> blk = ftseq::blocks_of(target);
    const int k = words.val().rows();
    const int base = prefix_len(k);
    nn::Var<T> hidden = hidden_states(tape, words, target.tokens, blk, pad_to);

    // Token loss: [BOS] predicts the first node.
    nn::Var<T> h_bos = nn::rows(hidden, {k});
    nn::Var<T> v_logits = nn::linear(h_bos, pred_v_w, pred_v_b);
    nn::Var<T> loss_token = nn::cross_entropy_sum(v_logits, {target.tokens[0].dict_id});

    // Each block's last token predicts the next edge (or EOS).
    std::vector<int> edge_pred_pos;
    std::vector<int> edge_targets;
    const int n_blocks = static_cast<int>(blk.size());
    for (int b = 0; b < n_blocks; ++b) {
      edge_pred_pos.push_back(base + blk[b].begin + blk[b].length - 1);
      if (b + 1 < n_blocks)
        edge_targets.push_back(target.tokens[blk[b + 1].begin].dict_id);
      else
        edge_targets.push_back(layout.n_bonds);  // [EOS] class
    }
    nn::Var<T> h_edges = nn::rows(hidden, edge_pred_pos);
    nn::Var<T> e_logits = nn::linear(h_edges, pred_e_w, pred_e_b);
    loss_token = nn::add(loss_token, nn::cross_entropy_sum(e_logits, edge_targets));

    // Attachment loss for every edge position (blocks after the first).
    const int n_edges = n_blocks - 1;
    nn::Var<T> loss_attach = tape.constant(nn::Array<T>(nn::Shape::scalar()));
    if (n_edges > 0) {
      std::vector<int> pred_pos;  // hidden position that emitted each edge
      std::vector<int> left_slots, right_slots;
      for (int b = 1; b < n_blocks; ++b) {
        pred_pos.push_back(base + blk[b - 1].begin + blk[b - 1].length - 1);
        const ftseq::FtToken& e = target.tokens[blk[b].begin];
        left_slots.push_back(e.slot_left);
        right_slots.push_back(e.slot_right);
      }
      nn::Var<T> h_pred = nn::rows(hidden, pred_pos);
      nn::Var<T> cb = tape.param(embedder.codebook);
      auto side_loss = [&](nn::Parameter<T>& w, nn::Parameter<T>& b,
                           const std::vector<int>& slots) {
        nn::Var<T> pred = nn::l2_normalize_rows(nn::linear(h_pred, w, b));
        nn::Var<T> targets = nn::rows(cb, slots);
        nn::Var<T> s_pos = nn::sum(nn::mul(pred, targets));
        nn::Array<T> count(nn::Shape::scalar());
        count.v[0] = static_cast<T>(n_edges);
        return nn::sub(tape.constant(count), s_pos);
      };
      loss_attach = nn::add(side_loss(pred_l_w, pred_l_b, left_slots),
                            side_loss(pred_r_w, pred_r_b, right_slots));

      // Negatives: |O O^T| off-diagonal over the full decoder codebook,
      // identical for every edge position, added once per side per edge.
      const int m = embedder.slots();
      if (m > 1) {
        nn::Var<T> gram = nn::abs(nn::matmul_nt(cb, cb));
        nn::Array<T> off(nn::Shape::mat(m, m));
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) off.at(i, j) = (i == j) ? T(0) : T(1);
        nn::Var<T> neg_sum = nn::sum(nn::mul(gram, tape.constant(std::move(off))));
        nn::Var<T> neg_mean = nn::scale(neg_sum, T(1) / (T(m) * T(m - 1)));
        loss_attach = nn::add(loss_attach, nn::scale(neg_mean, T(2 * n_edges)));
      }
    }
    return {loss_token, loss_attach};
  }

  // --- generation -----------------------------------------------------------

  int pick(const nn::Array<T>& logits, const GenerateOptions& opt) const {
    const T* x = logits.data();
    int n = logits.numel();
    if (opt.temperature <= 0 || opt.rng == nullptr) return nn::argmax_index(x, n);
    std::vector<double> p(n);
    double mx = x[nn::argmax_index(x, n)];
    double z = 0;
    for (int i = 0; i < n; ++i) {
      p[i] = std::exp((double(x[i]) - mx) / opt.temperature);
      z += p[i];
    }
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    double u = dist(*opt.rng) * z;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
      acc += p[i];
      if (u <= acc) return i;
    }
    return n - 1;
  }

  nn::Array<T> head_at(nn::Var<T> hidden, int pos, nn::Parameter<T>& w, nn::Parameter<T>& b) {
    return nn::linear(nn::rows(hidden, {pos}), w, b).val();
  }

  // Auto-regressive edge-centric generation from a words matrix [k, dim].
  GenerateResult generate(const nn::Array<T>& words, const vocab::BondDict& bonds,
                          const GenerateOptions& opt = {}) {
    GenerateResult res;
    const int k = words.rows();
    const int max_blocks = opt.max_blocks > 0 ? opt.max_blocks : cfg.max_blocks;
    std::vector<int> node_elems;  // atomic number per generated node (slot order)
    std::vector<std::pair<int, int>> edge_set;
    auto fail = [&](const std::string& why) {
      res.valid = false;
      res.failure = why;
    };

    // Step 0: first node from the [BOS] state.
    {
      nn::Tape<T> tape;
      nn::Var<T> w_var = tape.constant(words);
      nn::Var<T> hidden = hidden_states(tape, w_var, {}, {});
      nn::Array<T> logits = head_at(hidden, k, pred_v_w, pred_v_b);
      int atom_id = pick(logits, opt);
      res.tokens.tokens.push_back(ftseq::FtToken::node(atom_id, 0));
      node_elems.push_back(atom_id + 1);
      res.trace.push_back({"node", atom_id, 0, 0.0, vocab::AtomDict::size()});
    }

    bool finished = false;
    while (!finished) {
      if (static_cast<int>(edge_set.size()) + 1 >= max_blocks) {
        res.truncated = true;
        fail("generation truncated at max blocks");
        break;
      }
      nn::Tape<T> tape;
      nn::Var<T> w_var = tape.constant(words);
      std::vector<ftseq::Block> blk = ftseq::blocks_of(res.tokens);
      nn::Var<T> hidden = hidden_states(tape, w_var, res.tokens.tokens, blk);
      int last_pos = prefix_len(k) + res.tokens.size() - 1;

      nn::Array<T> e_logits = head_at(hidden, last_pos, pred_e_w, pred_e_b);
      int e_choice = pick(e_logits, opt);
      if (e_choice == layout.n_bonds) {
        res.trace.push_back({"eos", -1, 0, 0.0, layout.n_bonds + 1});
        finished = true;
        break;
      }

      const vocab::BondTriple& triple = bonds.decode(e_choice);
      int used = static_cast<int>(node_elems.size());

      nn::Array<T> pl = head_at(hidden, last_pos, pred_l_w, pred_l_b);
      AttachResult left = attach_decision(normalize_vec(pl.data(), pl.numel()),
                                          embedder.codebook.value, used);
      nn::Array<T> pr = head_at(hidden, last_pos, pred_r_w, pred_r_b);
      PlaceResult right = place_decision(normalize_vec(pr.data(), pr.numel()),
                                         embedder.codebook.value, used, cfg.place_threshold);

      GenTraceStep step{"edge", e_choice, right.existing ? 1 : 2, right.similarity,
                        layout.n_bonds + 1};
      res.trace.push_back(step);

      if (right.existing) {
        if (right.index == left.index) {
          fail("generated edge is a self-loop");
          break;
        }
        std::pair<int, int> key{std::min(left.index, right.index),
                                std::max(left.index, right.index)};
        if (std::find(edge_set.begin(), edge_set.end(), key) != edge_set.end()) {
          fail("generated edge already exists");
          break;
        }
        edge_set.push_back(key);
        res.tokens.tokens.push_back(ftseq::FtToken::edge(e_choice, left.index, right.index));
      } else {
        if (used + 1 > embedder.slots()) {
          fail("codebook slots exhausted");
          break;
        }
        int left_z = node_elems[left.index];
        int new_z = triple.elem_hi;
        if (left_z == triple.elem_lo)
          new_z = triple.elem_hi;
        else if (left_z == triple.elem_hi)
          new_z = triple.elem_lo;
        edge_set.push_back({std::min(left.index, right.index),
                            std::max(left.index, right.index)});
        res.tokens.tokens.push_back(ftseq::FtToken::edge(e_choice, left.index, right.index));
        res.tokens.tokens.push_back(ftseq::FtToken::node(new_z - 1, right.index));
        node_elems.push_back(new_z);
      }
    }

    if (res.failure.empty() || res.truncated) {
      try {
        chem::MolecularGraph g = ftseq::unflatten(res.tokens, bonds);
        res.graph = g;
        if (res.failure.empty()) {
          if (!chem::check_valence(g))
            fail("valence violation");
          else
            res.valid = true;
        }
      } catch (const ValidationError& e) {
        if (res.failure.empty()) fail(std::string("decode failed: ") + e.what());
      }
    }
    return res;
  }
};

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

template <typename T>
struct Model {
  ModelConfig cfg;
  vocab::TokenLayout layout;
  Encoder<T> encoder;
  Decoder<T> decoder;

  Model(const ModelConfig& c, int n_bonds_hint, std::uint64_t seed) {
    cfg = c;
    cfg.n_bonds = n_bonds_hint;
    cfg.validate();
    layout.n_bonds = cfg.n_bonds;
    layout.n_conditions = cfg.encoder.n_conditions;
    std::mt19937_64 rng(seed);
    encoder.init(rng, cfg.encoder, layout);
    decoder.init(rng, cfg.decoder, layout);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    encoder.collect(out);
    decoder.collect(out);
    return out;
  }

  void zero_grad() {
    for (nn::Parameter<T>* p : parameters()) p->zero_grad();
  }

  // Both position codebooks keep unit rows after each optimizer step.
  void renormalize_codebooks() {
    nn::renormalize_rows(encoder.embedder.codebook.value);
    nn::renormalize_rows(decoder.embedder.codebook.value);
  }
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace gw::model

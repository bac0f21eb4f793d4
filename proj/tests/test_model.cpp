#include <doctest.h>

#include <cmath>
#include <random>

#include "gw/model.hpp"
#include "gw/training.hpp"
#include "helpers.hpp"

using namespace gw;
using model::build_block_mask;

namespace {

// Independent pairwise re-derivation of the visibility rule: the prefix is
// block 0 and visible everywhere; token i sees token j iff j's block index is
// not larger than i's; padding is seen by nobody.
nn::BoolMat mask_reference(const std::vector<ftseq::Block>& blocks, int prefix, int total) {
  auto block_containing = [&](int pos) -> int {
    if (pos < prefix) return 0;
    int tok = pos - prefix;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (tok >= blocks[b].begin && tok < blocks[b].begin + blocks[b].length)
        return static_cast<int>(b) + 1;
    }
    return -1;  // padding
  };
  nn::BoolMat mask(total, total);
  for (int i = 0; i < total; ++i) {
    for (int j = 0; j < total; ++j) {
      int bi = block_containing(i);
      int bj = block_containing(j);
      if (bj == -1) {
        mask.set(i, j, false);
      } else if (bi == -1) {
        mask.set(i, j, true);
      } else {
        mask.set(i, j, bj <= bi);
      }
    }
  }
  return mask;
}

std::vector<ftseq::Block> random_blocks(std::mt19937_64& rng, int max_tokens) {
  std::vector<ftseq::Block> blocks;
  blocks.push_back({0, 1});
  int at = 1;
  while (at < max_tokens) {
    int len = std::uniform_int_distribution<int>(1, 2)(rng);
    if (at + len > max_tokens) break;
    blocks.push_back({at, len});
    at += len;
    if (std::uniform_int_distribution<int>(0, 6)(rng) == 0) break;
  }
  return blocks;
}

model::ModelConfig tiny_config(int k = 1, int n_conditions = 0) {
  model::ModelConfig cfg;
  cfg.encoder.layers = 2;
  cfg.encoder.heads = 2;
  cfg.encoder.dim = 16;
  cfg.encoder.word_count = k;
  cfg.encoder.d_p = 6;
  cfg.encoder.m = 12;
  cfg.encoder.ffn_mult = 2;
  cfg.encoder.n_conditions = n_conditions;
  cfg.decoder = {};
  cfg.decoder.layers = 2;
  cfg.decoder.heads = 2;
  cfg.decoder.dim = 16;
  cfg.decoder.d_p = 6;
  cfg.decoder.m = 12;
  cfg.decoder.ffn_mult = 2;
  return cfg;
}

vocab::BondDict shared_dict() {
  std::vector<chem::MolecularGraph> corpus;
  std::mt19937_64 rng(77);
  chem::RandomMolOptions opt;
  opt.min_atoms = 2;
  opt.max_atoms = 10;
  for (int i = 0; i < 60; ++i) corpus.push_back(chem::random_molecule(rng, opt));
  return vocab::BondDict::build(corpus);
}

}  // namespace

TEST_CASE("block mask equals the pairwise reference on random layouts") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    int k = std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<ftseq::Block> blocks = random_blocks(rng, 40);
    int seq_len = 0;
    for (const auto& b : blocks) seq_len += b.length;
    int prefix = k + 1;
    int pad = std::uniform_int_distribution<int>(0, 5)(rng);
    int total = prefix + seq_len + pad;
    REQUIRE(total <= 64);
    nn::BoolMat built = build_block_mask(blocks, prefix, total);
    nn::BoolMat ref = mask_reference(blocks, prefix, total);
    REQUIRE(built == ref);
  }
}

TEST_CASE("mask layout matches the worked example: prefix, v1, (e,v) blocks") {
  // prefix = [w, BOS]; blocks: [v1], [e1, v2], [e2]
  std::vector<ftseq::Block> blocks = {{0, 1}, {1, 2}, {3, 1}};
  nn::BoolMat m = build_block_mask(blocks, 2);
  // the prefix sees only itself
  CHECK(m.get(0, 0));
  CHECK(m.get(0, 1));
  CHECK_FALSE(m.get(0, 2));
  CHECK_FALSE(m.get(1, 5));
  // v1 sees prefix and itself, not later blocks
  CHECK(m.get(2, 0));
  CHECK(m.get(2, 2));
  CHECK_FALSE(m.get(2, 3));
  // within-block full attention: e1 sees v2 (its own block) and vice versa
  CHECK(m.get(3, 4));
  CHECK(m.get(4, 3));
  // strictly later blocks stay invisible
  CHECK_FALSE(m.get(4, 5));
  CHECK(m.get(5, 0));
  CHECK(m.get(5, 4));
  CHECK(m.get(5, 5));

  // single block after the prefix: that block sees everything, while the
  // prefix still sees only itself (its states feed every later block, so
  // letting it peek ahead would leak the first node into [BOS])
  nn::BoolMat single = build_block_mask({{0, 1}}, 2);
  for (int j = 0; j < 3; ++j) CHECK(single.get(2, j));
  CHECK(single.get(0, 1));
  CHECK_FALSE(single.get(0, 2));
  CHECK_FALSE(single.get(1, 2));
}

TEST_CASE("build_block_mask rejects non-partitioning blocks") {
  CHECK_THROWS_AS(build_block_mask({{0, 1}, {2, 1}}, 2), ValidationError);
  CHECK_THROWS_AS(build_block_mask({{0, 1}}, 2, 2), ValidationError);
}

TEST_CASE("the encoder's unpadded mask is all-true") {
  nn::BoolMat full = model::build_full_mask(7, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) CHECK(full.get(i, j));
  // padded columns receive no attention
  nn::BoolMat padded = model::build_full_mask(7, 5);
  for (int i = 0; i < 7; ++i) {
    CHECK(padded.get(i, 4));
    CHECK_FALSE(padded.get(i, 5));
  }
}

TEST_CASE("token embedding composition") {
  vocab::BondDict bonds = shared_dict();
  model::Model<double> m(tiny_config(), bonds.size(), 42);
  auto& emb = m.encoder.embedder;
  const int dim = m.cfg.encoder.dim;

  chem::MolecularGraph ethanol = chem::parse_smiles("CCO");
  ftseq::FTSeq seq = ftseq::flatten(ethanol, bonds);

  SUBCASE("zero codebook and segment reduce to the token table row") {
    std::fill(emb.codebook.value.v.begin(), emb.codebook.value.v.end(), 0.0);
    std::fill(emb.segment.value.v.begin(), emb.segment.value.v.end(), 0.0);
    nn::Tape<double> tape;
    nn::Var<double> e = emb.embed(tape, m.layout, seq.tokens, {});
    for (int c = 0; c < dim; ++c) {
      CHECK(e.val().at(0, c) ==
            doctest::Approx(emb.token_table.value.at(m.layout.atom_id(seq.tokens[0].dict_id), c)));
    }
  }

  SUBCASE("node tokens use one slot vector twice: equal-slot pair halves") {
    // with a zeroed right-half projection the embedding must match one where
    // left and right slots are swapped, for node tokens only
    nn::Tape<double> tape;
    nn::Var<double> base = emb.embed(tape, m.layout, seq.tokens, {});
    std::vector<ftseq::FtToken> swapped = seq.tokens;
    for (auto& t : swapped) std::swap(t.slot_left, t.slot_right);
    nn::Var<double> swapped_e = emb.embed(tape, m.layout, swapped, {});
    // node tokens are symmetric under the swap
    for (int c = 0; c < dim; ++c) CHECK(base.val().at(0, c) == swapped_e.val().at(0, c));
    // the edge token (position 1) generally is not
    bool differs = false;
    for (int c = 0; c < dim; ++c) differs |= base.val().at(1, c) != swapped_e.val().at(1, c);
    CHECK(differs);
  }

  SUBCASE("permutation changes rows but preserves the slot-sharing pattern") {
    std::vector<int> perm = ftseq::shuffle_codebook(m.cfg.encoder.m, 9);
    nn::Tape<double> tape;
    nn::Var<double> base = emb.embed(tape, m.layout, seq.tokens, {});
    nn::Var<double> permuted = emb.embed(tape, m.layout, seq.tokens, perm);
    bool differs = false;
    for (std::size_t i = 0; i < base.val().v.size(); ++i)
      differs |= base.val().v[i] != permuted.val().v[i];
    CHECK(differs);
    // tokens 0 and 1 share the slot of atom 0 on the left: their GPE left
    // halves stay equal under any permutation. Verify via equality pattern of
    // rows obtained with a zeroed token table and segment.
    std::fill(emb.token_table.value.v.begin(), emb.token_table.value.v.end(), 0.0);
    std::fill(emb.segment.value.v.begin(), emb.segment.value.v.end(), 0.0);
    std::vector<ftseq::FtToken> pair = {seq.tokens[0], seq.tokens[0]};
    pair[1].slot_left = seq.tokens[1].slot_left;
    pair[1].slot_right = seq.tokens[1].slot_left;
    nn::Var<double> gpe = emb.embed(tape, m.layout, pair, perm);
    for (int c = 0; c < dim; ++c) CHECK(gpe.val().at(0, c) == gpe.val().at(1, c));
  }

  SUBCASE("slot overflow raises") {
    std::vector<ftseq::FtToken> toks = seq.tokens;
    toks[0].slot_left = toks[0].slot_right = m.cfg.encoder.m;
    nn::Tape<double> tape;
    CHECK_THROWS_AS((void)emb.embed(tape, m.layout, toks, {}), ValidationError);
  }
}

TEST_CASE("encode returns k fixed-length words, deterministically") {
  vocab::BondDict bonds = shared_dict();
  for (int k : {1, 4}) {
    model::ModelF m(tiny_config(k), bonds.size(), 5);
    for (const char* s : {"C", "CCO", "c1ccccc1", "CC(C)CC"}) {
      ftseq::FTSeq seq = ftseq::flatten(chem::parse_smiles(s), bonds);
      nn::Array<float> words = m.encoder.encode_array(seq);
      CHECK(words.rows() == k);
      CHECK(words.cols() == m.cfg.encoder.dim);
      nn::Array<float> again = m.encoder.encode_array(seq);
      CHECK(words.v == again.v);  // bit-identical
    }
  }
}

TEST_CASE("different graphs give distinct words") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(), bonds.size(), 6);
  auto words_of = [&](const char* s) {
    return m.encoder.encode_array(ftseq::flatten(chem::parse_smiles(s), bonds));
  };
  nn::Array<float> a = words_of("CCO");
  nn::Array<float> b = words_of("c1ccccc1");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    dot += a.v[i] * b.v[i];
    na += a.v[i] * a.v[i];
    nb += b.v[i] * b.v[i];
  }
  CHECK(dot / std::sqrt(na * nb) < 1.0);
}

TEST_CASE("conditioned encoding: empty conditions match plain encode") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(1, 3), bonds.size(), 8);
  ftseq::FTSeq seq = ftseq::flatten(chem::parse_smiles("CCO"), bonds);
  nn::Array<float> plain = m.encoder.encode_array(seq);
  nn::Array<float> conditioned = m.encoder.encode_array(seq, {}, {});
  CHECK(plain.v == conditioned.v);
}

TEST_CASE("conditioned encoding: zero scalar leaves only the base token") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(1, 3), bonds.size(), 8);
  ftseq::FTSeq seq = ftseq::flatten(chem::parse_smiles("CCO"), bonds);
  nn::Array<float> base = m.encoder.encode_array(seq, {}, {{0, 0.0f}});
  // scrambling the scalar direction must not matter at scalar zero
  for (float& x : m.encoder.cond_dir.value.v) x += 5.0f;
  nn::Array<float> scrambled = m.encoder.encode_array(seq, {}, {{0, 0.0f}});
  for (std::size_t i = 0; i < base.v.size(); ++i)
    CHECK(base.v[i] == doctest::Approx(scrambled.v[i]));
  // a nonzero scalar does change the words
  nn::Array<float> shifted = m.encoder.encode_array(seq, {}, {{0, 1.5f}});
  bool differs = false;
  for (std::size_t i = 0; i < base.v.size(); ++i) differs |= base.v[i] != shifted.v[i];
  CHECK(differs);
  // unknown condition index
  CHECK_THROWS_AS((void)m.encoder.encode_array(seq, {}, {{7, 1.0f}}), ValidationError);
}

TEST_CASE("encoder context overflow raises") {
  vocab::BondDict bonds = shared_dict();
  model::ModelConfig cfg = tiny_config();
  cfg.encoder.m = 4;  // context limit = 2*4 + 1 + 4 = 13
  cfg.decoder.m = 4;
  model::ModelF m(cfg, bonds.size(), 3);
  std::mt19937_64 rng(1);
  chem::RandomMolOptions opt;
  opt.min_atoms = 12;
  opt.max_atoms = 14;
  chem::MolecularGraph big = chem::random_molecule(rng, opt);
  CHECK_THROWS_AS((void)m.encoder.encode_array(ftseq::flatten(big, bonds)), ValidationError);
}

// --- step 2/3 oracle -------------------------------------------------------

namespace {

struct RefPlace {
  int attach_index;
  double attach_sim;
  bool case1;
  int place_index;
};

// Literal transcription of the decision equations: cosine scores against the
// used rows, argmax attachment, threshold comparison for placement.
RefPlace reference_steps(const std::vector<double>& pred_l, const std::vector<double>& pred_r,
                         const nn::Array<double>& codebook, int used, double eps) {
  auto cosine_scores = [&](const std::vector<double>& pred) {
    double norm = 0;
    for (double x : pred) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<double> c(used);
    for (int i = 0; i < used; ++i) {
      double dot = 0, rn = 0;
      for (int d = 0; d < codebook.cols(); ++d) {
        dot += pred[d] * codebook.at(i, d);
        rn += codebook.at(i, d) * codebook.at(i, d);
      }
      c[i] = dot / (norm * std::sqrt(rn));
    }
    return c;
  };
  auto argmax_first = [](const std::vector<double>& c) {
    int best = 0;
    for (std::size_t i = 1; i < c.size(); ++i)
      if (c[i] > c[best]) best = static_cast<int>(i);
    return best;
  };
  RefPlace out{};
  std::vector<double> cl = cosine_scores(pred_l);
  out.attach_index = argmax_first(cl);
  out.attach_sim = cl[out.attach_index];
  std::vector<double> cr = cosine_scores(pred_r);
  int ur = argmax_first(cr);
  if (cr[ur] > eps) {
    out.case1 = true;
    out.place_index = ur;
  } else {
    out.case1 = false;
    out.place_index = used;
  }
  return out;
}

}  // namespace

TEST_CASE("attachment and placement match the literal reference on random states") {
  std::mt19937_64 rng(31);
  const double eps = 0.5;
  for (int trial = 0; trial < 500; ++trial) {
    int d_p = std::uniform_int_distribution<int>(2, 8)(rng);
    int m = std::uniform_int_distribution<int>(1, 10)(rng);
    int used = std::uniform_int_distribution<int>(1, m)(rng);
    nn::Array<double> codebook = nn::randn<double>(rng, nn::Shape::mat(m, d_p), 1.0);
    nn::renormalize_rows(codebook);
    nn::Array<double> pl = nn::randn<double>(rng, nn::Shape::mat(1, d_p), 1.0);
    nn::Array<double> pr = nn::randn<double>(rng, nn::Shape::mat(1, d_p), 1.0);

    RefPlace ref = reference_steps(
        std::vector<double>(pl.v.begin(), pl.v.end()),
        std::vector<double>(pr.v.begin(), pr.v.end()), codebook, used, eps);

    model::AttachResult attach = model::attach_decision(
        model::normalize_vec(pl.data(), d_p), codebook, used);
    model::PlaceResult place = model::place_decision(
        model::normalize_vec(pr.data(), d_p), codebook, used, eps);

    CHECK(attach.index == ref.attach_index);
    CHECK(attach.similarity == doctest::Approx(ref.attach_sim).epsilon(1e-9));
    CHECK(place.existing == ref.case1);
    CHECK(place.index == ref.place_index);
  }
}

TEST_CASE("placement at exactly the threshold allocates a new node") {
  // codebook row 0 has first coordinate exactly 0.5; the prediction (1,0,..)
  // normalizes to itself, so the best cosine is exactly 0.5 and the strict
  // comparison must choose case 2.
  const int d_p = 4;
  nn::Array<double> codebook(nn::Shape::mat(2, d_p));
  codebook.at(0, 0) = 0.5;
  codebook.at(0, 1) = std::sqrt(3.0) / 2.0;
  codebook.at(1, 2) = -1.0;
  nn::Array<double> pred(nn::Shape::mat(1, d_p));
  pred.at(0, 0) = 1.0;
  auto pn = model::normalize_vec(pred.data(), d_p);
  REQUIRE(pn[0] == 1.0);
  model::PlaceResult place = model::place_decision(pn, codebook, 2, 0.5);
  CHECK(place.similarity == 0.5);
  CHECK_FALSE(place.existing);
  CHECK(place.index == 2);

  // a single candidate always wins attachment
  model::AttachResult attach = model::attach_decision(pn, codebook, 1);
  CHECK(attach.index == 0);

  // exact self-similarity attaches case 1
  nn::Array<double> self_pred(nn::Shape::mat(1, d_p));
  self_pred.at(0, 2) = -2.0;
  model::PlaceResult self_place =
      model::place_decision(model::normalize_vec(self_pred.data(), d_p), codebook, 2, 0.5);
  CHECK(self_place.existing);
  CHECK(self_place.index == 1);
}

// --- teacher-forced loss reference ------------------------------------------

namespace {

struct RefLosses {
  double token = 0;
  double attach = 0;
};

// Straight-line recomputation of both losses from the decoder's hidden
// states, head weights and codebook.
RefLosses reference_losses(model::Decoder<double>& dec, const nn::Array<double>& words,
                           const ftseq::FTSeq& target) {
  auto blocks = ftseq::blocks_of(target);
  nn::Tape<double> tape;
  nn::Var<double> hidden = dec.hidden_states(tape, tape.constant(words), target.tokens, blocks);
  const nn::Array<double>& h = hidden.val();
  const int k = words.rows();
  const int base = k + 1;

  auto head = [&](const nn::Array<double>& w, const nn::Array<double>& b, int pos) {
    std::vector<double> out(w.cols(), 0.0);
    for (int c = 0; c < w.cols(); ++c) {
      double acc = b.v[c];
      for (int d = 0; d < w.rows(); ++d) acc += h.at(pos, d) * w.at(d, c);
      out[c] = acc;
    }
    return out;
  };
  auto nll = [](const std::vector<double>& logits, int target_class) {
    double z = 0;
    for (double l : logits) z += std::exp(l);
    double p = std::exp(logits[target_class]) / z;
    return -std::log(p);
  };

  RefLosses ref;
  ref.token += nll(head(dec.pred_v_w.value, dec.pred_v_b.value, k), target.tokens[0].dict_id);
  const int n_blocks = static_cast<int>(blocks.size());
  for (int b = 0; b < n_blocks; ++b) {
    int pos = base + blocks[b].begin + blocks[b].length - 1;
    int cls = b + 1 < n_blocks ? target.tokens[blocks[b + 1].begin].dict_id : dec.layout.n_bonds;
    ref.token += nll(head(dec.pred_e_w.value, dec.pred_e_b.value, pos), cls);
  }

  const nn::Array<double>& cb = dec.embedder.codebook.value;
  const int m = cb.rows();
  double neg = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      double dot = 0;
      for (int d = 0; d < cb.cols(); ++d) dot += cb.at(i, d) * cb.at(j, d);
      neg += std::abs(dot);
    }
  }
  neg /= static_cast<double>(m) * (m - 1);

  for (int b = 1; b < n_blocks; ++b) {
    int pos = base + blocks[b - 1].begin + blocks[b - 1].length - 1;
    const ftseq::FtToken& edge = target.tokens[blocks[b].begin];
    for (int side = 0; side < 2; ++side) {
      auto pred = head(side == 0 ? dec.pred_l_w.value : dec.pred_r_w.value,
                       side == 0 ? dec.pred_l_b.value : dec.pred_r_b.value, pos);
      double norm = 0;
      for (double x : pred) norm += x * x;
      norm = std::sqrt(norm);
      int slot = side == 0 ? edge.slot_left : edge.slot_right;
      double s_pos = 0;
      for (int d = 0; d < cb.cols(); ++d) s_pos += (pred[d] / norm) * cb.at(slot, d);
      ref.attach += (1.0 - s_pos) + neg;
    }
  }
  return ref;
}

}  // namespace

TEST_CASE("teacher-forced losses match the straight-line reference") {
  std::mt19937_64 rng(41);
  chem::RandomMolOptions opt;
  opt.min_atoms = 1;
  opt.max_atoms = 9;
  std::vector<std::vector<chem::MolecularGraph>> batches(20);
  std::vector<chem::MolecularGraph> all;
  for (auto& batch : batches) {
    for (int ex = 0; ex < 4; ++ex) {
      batch.push_back(chem::random_molecule(rng, opt));
      all.push_back(batch.back());
    }
  }
  vocab::BondDict bonds = vocab::BondDict::build(all);
  for (int batch = 0; batch < 20; ++batch) {
    model::Model<double> m(tiny_config(), bonds.size(), 100 + batch);
    for (int ex = 0; ex < 4; ++ex) {
      const chem::MolecularGraph& g = batches[batch][ex];
      ftseq::FTSeq seq = ftseq::flatten(g, bonds);

      nn::Array<double> words = m.encoder.encode_array(seq);
      nn::Tape<double> tape;
      auto losses = m.decoder.teacher_losses(tape, tape.constant(words), seq);
      RefLosses ref = reference_losses(m.decoder, words, seq);
      CHECK(losses.token.scalar() == doctest::Approx(ref.token).epsilon(1e-5));
      CHECK(losses.attach.scalar() == doctest::Approx(ref.attach).epsilon(1e-5));
      if (seq.edge_count() == 0) CHECK(losses.attach.scalar() == 0.0);
    }
  }
}

TEST_CASE("attach loss vanishes for perfect predictions on an orthonormal codebook") {
  // Eq-style optimum: s+ = 1 for every edge and zero off-diagonal similarity.
  vocab::BondDict bonds = shared_dict();
  model::ModelConfig cfg = tiny_config();
  cfg.decoder.d_p = 12;  // orthonormal basis needs d_p >= m
  cfg.encoder.d_p = 12;
  model::Model<double> m(cfg, bonds.size(), 50);
  auto& cb = m.decoder.embedder.codebook.value;
  std::fill(cb.v.begin(), cb.v.end(), 0.0);
  for (int r = 0; r < cb.rows(); ++r) cb.at(r, r) = 1.0;

  ftseq::FTSeq seq = ftseq::flatten(chem::parse_smiles("CCO"), bonds);
  auto blocks = ftseq::blocks_of(seq);

  // force each position-head output to the exact target slot vector
  // by zeroing weights and writing the target into the bias; all edge
  // predictions share one hidden position only when sequences are tiny, so
  // use a one-edge molecule per side instead.
  ftseq::FTSeq pair = ftseq::flatten(chem::parse_smiles("CO"), bonds);
  std::fill(m.decoder.pred_l_w.value.v.begin(), m.decoder.pred_l_w.value.v.end(), 0.0);
  std::fill(m.decoder.pred_r_w.value.v.begin(), m.decoder.pred_r_w.value.v.end(), 0.0);
  std::fill(m.decoder.pred_l_b.value.v.begin(), m.decoder.pred_l_b.value.v.end(), 0.0);
  std::fill(m.decoder.pred_r_b.value.v.begin(), m.decoder.pred_r_b.value.v.end(), 0.0);
  m.decoder.pred_l_b.value.v[0] = 1.0;  // slot 0
  m.decoder.pred_r_b.value.v[1] = 1.0;  // slot 1

  nn::Array<double> words(nn::Shape::mat(1, cfg.decoder.dim));
  nn::Tape<double> tape;
  auto losses = m.decoder.teacher_losses(tape, tape.constant(words), pair);
  CHECK(losses.attach.scalar() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("prefix causality: editing a later block never changes earlier states") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(), bonds.size(), 71);
  ftseq::FTSeq seq = ftseq::flatten(chem::parse_smiles("CCCO"), bonds);
  auto blocks = ftseq::blocks_of(seq);
  REQUIRE(blocks.size() == 4);

  std::mt19937_64 rng(5);
  nn::Array<float> words = nn::randn<float>(rng, nn::Shape::mat(1, 16), 1.0);

  auto hidden_of = [&](const std::vector<ftseq::FtToken>& toks) {
    nn::Tape<float> tape;
    return m.decoder.hidden_states(tape, tape.constant(words), toks, blocks).val();
  };
  nn::Array<float> base = hidden_of(seq.tokens);

  std::vector<ftseq::FtToken> edited = seq.tokens;
  edited[blocks[3].begin].dict_id = (edited[blocks[3].begin].dict_id + 1) % bonds.size();
  nn::Array<float> changed = hidden_of(edited);

  const int prefix = 2;
  int unchanged_until = prefix + blocks[3].begin;  // prefix + blocks 0..2
  for (int pos = 0; pos < unchanged_until; ++pos)
    for (int c = 0; c < base.cols(); ++c) REQUIRE(base.at(pos, c) == changed.at(pos, c));
  bool later_differs = false;
  for (int pos = unchanged_until; pos < base.rows(); ++pos)
    for (int c = 0; c < base.cols(); ++c) later_differs |= base.at(pos, c) != changed.at(pos, c);
  CHECK(later_differs);
}

// --- generation -------------------------------------------------------------

TEST_CASE("forced EOS bias yields a single-atom molecule with a complexity trace") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(), bonds.size(), 88);
  // bias the edge head towards EOS and the node head towards carbon
  auto force_class = [](nn::Parameter<float>& w, nn::Parameter<float>& b, int cls) {
    std::fill(w.value.v.begin(), w.value.v.end(), 0.f);
    std::fill(b.value.v.begin(), b.value.v.end(), 0.f);
    b.value.v[cls] = 10.f;
  };
  force_class(m.decoder.pred_e_w, m.decoder.pred_e_b, m.layout.n_bonds);  // EOS
  force_class(m.decoder.pred_v_w, m.decoder.pred_v_b, 5);                 // carbon

  nn::Array<float> words(nn::Shape::mat(1, 16));
  model::GenerateResult res = m.decoder.generate(words, bonds);
  REQUIRE(res.valid);
  CHECK(res.tokens.size() == 1);
  CHECK(res.graph->atom_count() == 1);
  CHECK(res.graph->atoms[0].atomic_number == 6);
  REQUIRE(res.trace.size() == 2);
  CHECK(res.trace[0].kind == "node");
  CHECK(res.trace[0].class_width == 118);
  CHECK(res.trace[1].kind == "eos");
  CHECK(res.trace[1].class_width == bonds.size() + 1);
}

TEST_CASE("argmax ties resolve to the lowest id") {
  nn::Array<float> logits(nn::Shape::vec(5));
  logits.v = {1.f, 3.f, 3.f, 2.f, 3.f};
  CHECK(nn::argmax_index(logits.data(), 5) == 1);
}

TEST_CASE("generation on a random model completes and traces token counts") {
  vocab::BondDict bonds = shared_dict();
  model::ModelConfig cfg = tiny_config();
  cfg.decoder.max_blocks = 6;
  model::ModelF m(cfg, bonds.size(), 3);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 20; ++i) {
    nn::Array<float> words = nn::randn<float>(rng, nn::Shape::mat(1, 16), 1.0);
    model::GenerateResult res = m.decoder.generate(words, bonds);
    if (res.valid) {
      CHECK(res.tokens.size() == res.graph->atom_count() + res.graph->bond_count());
    } else {
      CHECK_FALSE(res.failure.empty());
    }
    int edge_steps = 0;
    for (const auto& s : res.trace) {
      if (s.kind == "edge" || s.kind == "eos") CHECK(s.class_width == bonds.size() + 1);
      edge_steps += s.kind == "edge" ? 1 : 0;
    }
    if (res.valid) {
      CHECK(edge_steps == res.tokens.edge_count());
    } else {
      // a rejected step is traced without appending its token
      CHECK(edge_steps >= res.tokens.edge_count());
    }
  }
}

TEST_CASE("a decoder that never emits EOS stops truncated at the block cap") {
  vocab::BondDict bonds = shared_dict();
  model::ModelConfig cfg = tiny_config();
  cfg.decoder.max_blocks = 5;
  model::ModelF m(cfg, bonds.size(), 19);
  // find a homonuclear bond type so chains can grow indefinitely
  int cc_bond = -1;
  for (int id = 0; id < bonds.size(); ++id) {
    const vocab::BondTriple& t = bonds.decode(id);
    if (t.elem_lo == 6 && t.elem_hi == 6 && t.order == chem::BondOrder::Single) cc_bond = id;
  }
  REQUIRE(cc_bond >= 0);
  std::fill(m.decoder.pred_e_w.value.v.begin(), m.decoder.pred_e_w.value.v.end(), 0.f);
  std::fill(m.decoder.pred_e_b.value.v.begin(), m.decoder.pred_e_b.value.v.end(), 0.f);
  m.decoder.pred_e_b.value.v[cc_bond] = 10.f;
  std::fill(m.decoder.pred_v_w.value.v.begin(), m.decoder.pred_v_w.value.v.end(), 0.f);
  std::fill(m.decoder.pred_v_b.value.v.begin(), m.decoder.pred_v_b.value.v.end(), 0.f);
  m.decoder.pred_v_b.value.v[5] = 10.f;  // carbon

  nn::Array<float> words(nn::Shape::mat(1, 16));
  model::GenerateResult res = m.decoder.generate(words, bonds);
  CHECK_FALSE(res.valid);
  bool stopped = res.truncated || res.failure.find("exhaust") != std::string::npos ||
                 res.failure.find("exists") != std::string::npos ||
                 res.failure.find("self-loop") != std::string::npos;
  CHECK(stopped);

  // with a permissive cap but a tiny codebook, fresh slots run out instead
  model::ModelConfig small = tiny_config();
  small.decoder.m = 3;
  small.encoder.m = 3;
  small.decoder.max_blocks = 64;
  model::ModelF m2(small, bonds.size(), 20);
  std::fill(m2.decoder.pred_e_w.value.v.begin(), m2.decoder.pred_e_w.value.v.end(), 0.f);
  std::fill(m2.decoder.pred_e_b.value.v.begin(), m2.decoder.pred_e_b.value.v.end(), 0.f);
  m2.decoder.pred_e_b.value.v[cc_bond] = 10.f;
  std::fill(m2.decoder.pred_v_w.value.v.begin(), m2.decoder.pred_v_w.value.v.end(), 0.f);
  std::fill(m2.decoder.pred_v_b.value.v.begin(), m2.decoder.pred_v_b.value.v.end(), 0.f);
  m2.decoder.pred_v_b.value.v[5] = 10.f;
  // keep right placements away from used rows so every step opens a new slot
  std::fill(m2.decoder.pred_r_w.value.v.begin(), m2.decoder.pred_r_w.value.v.end(), 0.f);
  model::GenerateResult res2 = m2.decoder.generate(words, bonds);
  CHECK_FALSE(res2.valid);
  CHECK_FALSE(res2.failure.empty());
}

TEST_CASE("temperature sampling is seeded and reproducible") {
  vocab::BondDict bonds = shared_dict();
  model::ModelF m(tiny_config(), bonds.size(), 13);
  std::mt19937_64 rng1(42), rng2(42);
  nn::Array<float> words(nn::Shape::mat(1, 16));
  model::GenerateOptions o1;
  o1.temperature = 1.0;
  o1.rng = &rng1;
  model::GenerateOptions o2;
  o2.temperature = 1.0;
  o2.rng = &rng2;
  model::GenerateResult a = m.decoder.generate(words, bonds, o1);
  model::GenerateResult b = m.decoder.generate(words, bonds, o2);
  REQUIRE(a.tokens.size() == b.tokens.size());
  for (int i = 0; i < a.tokens.size(); ++i) {
    CHECK(a.tokens.tokens[i].dict_id == b.tokens.tokens[i].dict_id);
    CHECK(a.tokens.tokens[i].slot_left == b.tokens.tokens[i].slot_left);
  }
}

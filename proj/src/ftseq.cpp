#include "gw/ftseq.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace gw::ftseq {

int FTSeq::node_count() const {
  int n = 0;
  for (const FtToken& t : tokens) n += t.is_node() ? 1 : 0;
  return n;
}

int FTSeq::edge_count() const { return size() - node_count(); }

FTSeq flatten(const chem::MolecularGraph& g, int start, const vocab::BondDict& bonds) {
  chem::validate_graph(g);
  if (start < 0 || start >= g.atom_count())
    throw ValidationError("start atom out of range");

  auto adj = g.adjacency();
  std::vector<int> slot_of(g.atom_count(), -1);
  std::set<std::pair<int, int>> emitted;
  FTSeq seq;
  int next_slot = 0;

  auto bond_id = [&](int a, int b) {
    for (const chem::Bond& bond : g.bonds) {
      if ((bond.left == a && bond.right == b) || (bond.left == b && bond.right == a))
        return bonds.encode(bond, g);
    }
    throw std::logic_error("missing bond");
  };

  slot_of[start] = next_slot++;
  seq.tokens.push_back(FtToken::node(vocab::AtomDict::encode(g.atoms[start]), slot_of[start]));

  auto dfs = [&](auto&& self, int u) -> void {
    for (int v : adj[u]) {
      auto key = std::minmax(u, v);
      if (emitted.count(key)) continue;
      emitted.insert(key);
      bool fresh = slot_of[v] < 0;
      int right_slot = fresh ? next_slot : slot_of[v];
      seq.tokens.push_back(FtToken::edge(bond_id(u, v), slot_of[u], right_slot));
      if (fresh) {
        slot_of[v] = next_slot++;
        seq.tokens.push_back(FtToken::node(vocab::AtomDict::encode(g.atoms[v]), slot_of[v]));
        self(self, v);
      }
    }
  };
  dfs(dfs, start);

  if (static_cast<int>(emitted.size()) != g.bond_count())
    throw std::logic_error("flatten missed edges of a connected graph");
  return seq;
}

FTSeq flatten(const chem::MolecularGraph& g, const vocab::BondDict& bonds) {
  return flatten(g, g.origin_first_atom.value_or(0), bonds);
}

chem::MolecularGraph unflatten(const FTSeq& seq, const vocab::BondDict& bonds) {
  if (seq.tokens.empty()) throw ValidationError("empty token sequence");
  if (!seq.tokens[0].is_node())
    throw ValidationError("sequence must start with a node token");

  chem::MolecularGraph g;
  std::vector<int> atom_of_slot;  // slot -> atom index

  auto atom_for = [&](int slot) {
    if (slot < 0 || slot >= static_cast<int>(atom_of_slot.size()))
      throw ValidationError("token references an unknown slot " + std::to_string(slot));
    return atom_of_slot[slot];
  };

  const FtToken& first = seq.tokens[0];
  if (first.slot_left != first.slot_right)
    throw ValidationError("node token with mismatched slot pair");
  g.atoms.push_back(vocab::AtomDict::decode(first.dict_id));
  if (first.slot_left != 0) throw ValidationError("first node must use slot 0");
  atom_of_slot.push_back(0);

  int i = 1;
  while (i < seq.size()) {
    const FtToken& tok = seq.tokens[i];
    if (tok.is_node())
      throw ValidationError("node token without an introducing edge at index " +
                            std::to_string(i));
    const vocab::BondTriple& triple = bonds.decode(tok.dict_id);
    int left_atom = atom_for(tok.slot_left);
    int left_z = g.atoms[left_atom].atomic_number;
    if (left_z != triple.elem_lo && left_z != triple.elem_hi)
      throw ValidationError("edge endpoint element mismatch at index " + std::to_string(i));

    bool right_known =
        tok.slot_right >= 0 && tok.slot_right < static_cast<int>(atom_of_slot.size());
    if (right_known) {
      int right_atom = atom_of_slot[tok.slot_right];
      if (right_atom == left_atom)
        throw ValidationError("self-loop edge at index " + std::to_string(i));
      if (g.has_bond(left_atom, right_atom))
        throw ValidationError("duplicate edge at index " + std::to_string(i));
      int right_z = g.atoms[right_atom].atomic_number;
      int lo = std::min(left_z, right_z), hi = std::max(left_z, right_z);
      if (lo != triple.elem_lo || hi != triple.elem_hi)
        throw ValidationError("edge endpoint element mismatch at index " + std::to_string(i));
      g.bonds.push_back({left_atom, right_atom, triple.order});
      ++i;
    } else {
      if (tok.slot_right != static_cast<int>(atom_of_slot.size()))
        throw ValidationError("new node must take the next free slot at index " +
                              std::to_string(i));
      if (i + 1 >= seq.size() || !seq.tokens[i + 1].is_node())
        throw ValidationError("edge introduces a new slot without a node token at index " +
                              std::to_string(i));
      const FtToken& node_tok = seq.tokens[i + 1];
      if (node_tok.slot_left != node_tok.slot_right || node_tok.slot_left != tok.slot_right)
        throw ValidationError("node token slot does not match its introducing edge");
      chem::Atom atom = vocab::AtomDict::decode(node_tok.dict_id);
      // The bond type implies the new element; the node token must agree.
      int expected = (left_z == triple.elem_lo) ? triple.elem_hi : triple.elem_lo;
      if (triple.elem_lo != triple.elem_hi && atom.atomic_number != expected)
        throw ValidationError("node element contradicts its introducing bond type");
      if (triple.elem_lo == triple.elem_hi && atom.atomic_number != triple.elem_lo)
        throw ValidationError("node element contradicts its introducing bond type");
      g.atoms.push_back(atom);
      atom_of_slot.push_back(g.atom_count() - 1);
      g.bonds.push_back({left_atom, g.atom_count() - 1, triple.order});
      i += 2;
    }
  }

  g.origin_first_atom = 0;
  chem::validate_graph(g);
  return g;
}

std::vector<Block> blocks_of(const FTSeq& seq) {
  if (seq.tokens.empty()) throw ValidationError("empty token sequence");
  if (!seq.tokens[0].is_node())
    throw ValidationError("sequence must start with a node token");
  std::vector<Block> blocks;
  blocks.push_back({0, 1});
  int i = 1;
  while (i < seq.size()) {
    if (seq.tokens[i].is_node())
      throw ValidationError("node token outside a block at index " + std::to_string(i));
    int len = 1;
    if (i + 1 < seq.size() && seq.tokens[i + 1].is_node()) len = 2;
    blocks.push_back({i, len});
    i += len;
  }
  return blocks;
}

std::vector<int> shuffle_codebook(int m, std::uint64_t seed) {
  if (m < 1) throw ValidationError("codebook size must be positive");
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = m - 1; i > 0; --i) {
    std::uniform_int_distribution<int> dist(0, i);
    std::swap(perm[i], perm[dist(rng)]);
  }
  return perm;
}

std::string dump_tokens(const FTSeq& seq) {
  std::ostringstream os;
  for (const FtToken& t : seq.tokens) {
    os << (t.is_node() ? "node" : "edge") << '\t' << t.dict_id << '\t' << t.slot_left << '\t'
       << t.slot_right << '\n';
  }
  return os.str();
}

}  // namespace gw::ftseq

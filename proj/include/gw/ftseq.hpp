#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gw/chem.hpp"
#include "gw/vocab.hpp"

namespace gw::ftseq {

enum class Segment : std::uint8_t { Node = 0, Edge = 1 };

// A node token carries (atom id, slot, slot); an edge token carries
// (bond id, left slot, right slot). Slots are symbolic codebook indices
// assigned in node-visit order; permutations apply at embedding time.
struct FtToken {
  Segment segment = Segment::Node;
  int dict_id = 0;
  int slot_left = 0;
  int slot_right = 0;

  static FtToken node(int atom_id, int slot) { return {Segment::Node, atom_id, slot, slot}; }
  static FtToken edge(int bond_id, int left, int right) {
    return {Segment::Edge, bond_id, left, right};
  }
  bool is_node() const { return segment == Segment::Node; }
};

struct FTSeq {
  std::vector<FtToken> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  int node_count() const;
  int edge_count() const;
};

// Half-open token range forming one causal unit: the leading node alone,
// then (edge) or (edge, node) pairs.
struct Block {
  int begin = 0;
  int length = 0;
};

// Depth-first flattening from `start` (ascending neighbor order): every edge
// is appended in discovery order, followed by its far endpoint when that node
// is new. Output length is exactly node_count + edge_count.
FTSeq flatten(const chem::MolecularGraph& g, int start, const vocab::BondDict& bonds);

// Default start: the graph's recorded first atom.
FTSeq flatten(const chem::MolecularGraph& g, const vocab::BondDict& bonds);

// Inverse of flatten up to isomorphism. Checks sequence invariants, slot
// bookkeeping, duplicate edges and the consistency between each node token's
// element and its introducing bond's endpoint type.
chem::MolecularGraph unflatten(const FTSeq& seq, const vocab::BondDict& bonds);

// Partition into causal blocks; errors on malformed sequences.
std::vector<Block> blocks_of(const FTSeq& seq);

// Uniform random permutation of m slots; deterministic per seed.
std::vector<int> shuffle_codebook(int m, std::uint64_t seed);

// Tab-separated dump: kind, dictionary id, left slot, right slot.
std::string dump_tokens(const FTSeq& seq);

}  // namespace gw::ftseq

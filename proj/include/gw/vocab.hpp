#pragma once

#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gw/chem.hpp"

namespace gw::vocab {

// Atom token ids: 118 entries ordered by atomic number, id = Z - 1.
struct AtomDict {
  static constexpr int size() { return 118; }
  static int encode(const chem::Atom& a);
  static chem::Atom decode(int id);
};

// Endpoint-typed bond triple: elements canonicalized to (min, max).
struct BondTriple {
  int elem_lo = 0;
  int elem_hi = 0;
  chem::BondOrder order = chem::BondOrder::Single;

  auto key() const { return std::tuple(elem_lo, elem_hi, static_cast<int>(order)); }
  bool operator==(const BondTriple& o) const { return key() == o.key(); }
  bool operator<(const BondTriple& o) const { return key() < o.key(); }
};

BondTriple bond_triple(const chem::Bond& b, const chem::MolecularGraph& g);

// Bond token ids assigned in first-occurrence order over a corpus scan.
class BondDict {
public:
  static BondDict build(const std::vector<chem::MolecularGraph>& corpus, int cap = 4096);

  int size() const { return static_cast<int>(entries_.size()); }
  // Throws ValidationError for triples absent from the corpus scan.
  int encode(const chem::Bond& b, const chem::MolecularGraph& g) const;
  int encode_triple(const BondTriple& t) const;
  bool contains(const BondTriple& t) const { return index_.count(t.key()) > 0; }
  const BondTriple& decode(int id) const;

  // Text format: one "elemA elemB order id" line per entry.
  void save(const std::string& path) const;
  static BondDict load(const std::string& path);

  std::string to_text() const;
  static BondDict from_text(const std::string& text);

private:
  std::vector<BondTriple> entries_;
  std::map<std::tuple<int, int, int>, int> index_;
};

// Layout of the unified embedding-id space shared by encoder and decoder
// inputs: atoms, then bonds, then specials (and condition tokens when
// conditioning is enabled).
struct TokenLayout {
  int n_bonds = 0;
  int n_conditions = 0;

  int atom_id(int atom_token) const { return atom_token; }
  int bond_id(int bond_token) const { return AtomDict::size() + bond_token; }
  int bos() const { return AtomDict::size() + n_bonds; }
  int eos() const { return bos() + 1; }
  int pad() const { return bos() + 2; }
  int gp() const { return bos() + 3; }
  int condition(int c) const { return bos() + 4 + c; }
  int vocab_size() const { return bos() + 4 + n_conditions; }
};

}  // namespace gw::vocab

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gw/error.hpp"

namespace gw::chem {

enum class BondOrder : std::uint8_t { Single = 0, Double = 1, Triple = 2, Aromatic = 3 };

// Bond order contribution in half-units so aromatic (1.5) stays integral.
int bond_order_half_units(BondOrder order);
std::string_view bond_order_name(BondOrder order);
std::optional<BondOrder> bond_order_from_name(std::string_view name);

struct Atom {
  int atomic_number = 6;  // in [1, 118]
};

struct Bond {
  int left = 0;
  int right = 0;
  BondOrder order = BondOrder::Single;
};

// Connected heavy-atom molecular graph. Atoms are kept in insertion order;
// bonds are simple (no self loops, no parallel bonds).
struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::optional<int> origin_first_atom;

  int atom_count() const { return static_cast<int>(atoms.size()); }
  int bond_count() const { return static_cast<int>(bonds.size()); }
  bool has_bond(int a, int b) const;
  std::vector<std::vector<int>> adjacency() const;  // neighbor atom indices, ascending
};

// Validates index ranges, simple-graph constraints and connectivity.
// Throws ValidationError on violation.
void validate_graph(const MolecularGraph& g);

bool is_connected(const MolecularGraph& g);

// Maximum total bond order per element, aromatic counted as 1.5.
// Supported: B3 C4 N3 O2 F1 P5 S6 Cl1 Br1 I1.
class ValenceTable {
public:
  static const ValenceTable& standard();
  bool supports(int atomic_number) const;
  // Max valence in half-units; throws ValidationError for unsupported elements.
  int max_half_units(int atomic_number) const;

private:
  ValenceTable();
  int max_half_[119] = {};
};

std::string_view element_symbol(int atomic_number);
// 0 if the symbol names no element.
int element_from_symbol(std::string_view symbol);

// Parses the supported SMILES subset: organic-subset atoms, aromatic
// lowercase forms, bracket atoms without charge/isotope/stereo (an explicit
// hydrogen count is accepted and discarded), bond symbols - = # :, ring
// closure digits and parenthesised branches. Charges, stereo marks, isotopes,
// wildcard atoms and dot-separated fragments are rejected. The returned graph
// is connected, valence-checked and records the first atom of the string.
MolecularGraph parse_smiles(const std::string& text);

// Emits a string in the supported subset; parse_smiles(write_smiles(g)) is
// isomorphic to g.
std::string write_smiles(const MolecularGraph& g);

// True iff every atom's summed bond order stays within the valence table.
// Throws ValidationError for elements outside the table.
bool check_valence(const MolecularGraph& g, const ValenceTable& table = ValenceTable::standard());

// Permutation-invariant identity string computed by iterative neighborhood
// refinement with exhaustive individualization on ties. Graphs over 64 atoms
// or needing more than 8 tie-break levels are rejected.
std::string canonical_form(const MolecularGraph& g);

struct RandomMolOptions {
  int min_atoms = 2;
  int max_atoms = 12;
  double aromatic_ring_prob = 0.3;  // chance to seed a benzene-like ring
  double extra_ring_prob = 0.25;    // chance to close one extra ring
};

// Generates a random connected molecule that passes check_valence.
MolecularGraph random_molecule(std::mt19937_64& rng, const RandomMolOptions& opt = {});

// One molecule per line; '#'-prefixed comment lines and blank lines skipped.
struct SmilesRecord {
  std::size_t line_number = 0;
  std::string text;
};
std::vector<SmilesRecord> read_smiles_lines(const std::string& path);

}  // namespace gw::chem

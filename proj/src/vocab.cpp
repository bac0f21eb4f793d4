#include "gw/vocab.hpp"

#include <fstream>
#include <sstream>

namespace gw::vocab {

int AtomDict::encode(const chem::Atom& a) {
  if (a.atomic_number < 1 || a.atomic_number > 118)
    throw ValidationError("atomic number out of range");
  return a.atomic_number - 1;
}

chem::Atom AtomDict::decode(int id) {
  if (id < 0 || id >= size()) throw ValidationError("atom token id out of range");
  return chem::Atom{id + 1};
}

BondTriple bond_triple(const chem::Bond& b, const chem::MolecularGraph& g) {
  int zl = g.atoms[b.left].atomic_number;
  int zr = g.atoms[b.right].atomic_number;
  BondTriple t;
  t.elem_lo = std::min(zl, zr);
  t.elem_hi = std::max(zl, zr);
  t.order = b.order;
  return t;
}

BondDict BondDict::build(const std::vector<chem::MolecularGraph>& corpus, int cap) {
  if (corpus.empty()) throw ValidationError("bond dictionary needs a non-empty corpus");
  BondDict dict;
  for (const chem::MolecularGraph& g : corpus) {
    for (const chem::Bond& b : g.bonds) {
      BondTriple t = bond_triple(b, g);
      if (dict.index_.count(t.key())) continue;
      if (dict.size() >= cap)
        throw ValidationError("bond dictionary cap exceeded: " + std::to_string(cap));
      dict.index_[t.key()] = dict.size();
      dict.entries_.push_back(t);
    }
  }
  return dict;
}

int BondDict::encode(const chem::Bond& b, const chem::MolecularGraph& g) const {
  return encode_triple(bond_triple(b, g));
}

int BondDict::encode_triple(const BondTriple& t) const {
  auto it = index_.find(t.key());
  if (it == index_.end())
    throw ValidationError("bond type not in dictionary: " +
                          std::string(chem::element_symbol(t.elem_lo)) + "-" +
                          std::string(chem::element_symbol(t.elem_hi)) + " " +
                          std::string(chem::bond_order_name(t.order)));
  return it->second;
}

const BondTriple& BondDict::decode(int id) const {
  if (id < 0 || id >= size()) throw ValidationError("bond token id out of range");
  return entries_[id];
}

std::string BondDict::to_text() const {
  std::ostringstream os;
  for (int id = 0; id < size(); ++id) {
    const BondTriple& t = entries_[id];
    os << t.elem_lo << ' ' << t.elem_hi << ' ' << chem::bond_order_name(t.order) << ' ' << id
       << '\n';
  }
  return os.str();
}

BondDict BondDict::from_text(const std::string& text) {
  BondDict dict;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    BondTriple t;
    std::string order_name;
    int id = -1;
    if (!(ls >> t.elem_lo >> t.elem_hi >> order_name >> id))
      throw ValidationError("malformed bond dictionary line: " + line);
    auto order = chem::bond_order_from_name(order_name);
    if (!order) throw ValidationError("unknown bond order: " + order_name);
    t.order = *order;
    if (id != dict.size())
      throw ValidationError("bond dictionary ids must be dense and in order");
    dict.index_[t.key()] = id;
    dict.entries_.push_back(t);
  }
  if (dict.size() == 0) throw ValidationError("empty bond dictionary");
  return dict;
}

void BondDict::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << to_text();
}

BondDict BondDict::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

}  // namespace gw::vocab

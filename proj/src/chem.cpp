#include "gw/chem.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gw::chem {

namespace {

constexpr std::array<std::string_view, 119> kElementSymbols = {
    "?",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
    "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu",
    "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru",
    "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac",
    "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf",
    "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

constexpr int kCarbon = 6;

bool is_aromatic_capable(int z) {
  // Elements with a lowercase aromatic form in the supported subset.
  return z == 5 || z == 6 || z == 7 || z == 8 || z == 15 || z == 16;
}

}  // namespace

int bond_order_half_units(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 2;
    case BondOrder::Double: return 4;
    case BondOrder::Triple: return 6;
    case BondOrder::Aromatic: return 3;
  }
  throw std::logic_error("bad bond order");
}

std::string_view bond_order_name(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return "single";
    case BondOrder::Double: return "double";
    case BondOrder::Triple: return "triple";
    case BondOrder::Aromatic: return "aromatic";
  }
  throw std::logic_error("bad bond order");
}

std::optional<BondOrder> bond_order_from_name(std::string_view name) {
  if (name == "single") return BondOrder::Single;
  if (name == "double") return BondOrder::Double;
  if (name == "triple") return BondOrder::Triple;
  if (name == "aromatic") return BondOrder::Aromatic;
  return std::nullopt;
}

bool MolecularGraph::has_bond(int a, int b) const {
  for (const Bond& bond : bonds) {
    if ((bond.left == a && bond.right == b) || (bond.left == b && bond.right == a)) return true;
  }
  return false;
}

std::vector<std::vector<int>> MolecularGraph::adjacency() const {
  std::vector<std::vector<int>> adj(atoms.size());
  for (const Bond& b : bonds) {
    adj[b.left].push_back(b.right);
    adj[b.right].push_back(b.left);
  }
  for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
  return adj;
}

bool is_connected(const MolecularGraph& g) {
  if (g.atoms.empty()) return false;
  auto adj = g.adjacency();
  std::vector<char> seen(g.atoms.size(), 0);
  std::vector<int> stack = {0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == g.atom_count();
}

void validate_graph(const MolecularGraph& g) {
  const int n = g.atom_count();
  if (n == 0) throw ValidationError("graph has no atoms");
  for (const Atom& a : g.atoms) {
    if (a.atomic_number < 1 || a.atomic_number > 118)
      throw ValidationError("atomic number out of range: " + std::to_string(a.atomic_number));
  }
  std::set<std::pair<int, int>> seen;
  for (const Bond& b : g.bonds) {
    if (b.left < 0 || b.left >= n || b.right < 0 || b.right >= n)
      throw ValidationError("bond endpoint out of range");
    if (b.left == b.right) throw ValidationError("self-loop bond");
    auto key = std::minmax(b.left, b.right);
    if (!seen.insert(key).second) throw ValidationError("duplicate bond");
  }
  if (g.origin_first_atom && (*g.origin_first_atom < 0 || *g.origin_first_atom >= n))
    throw ValidationError("origin atom index out of range");
  if (!is_connected(g)) throw ValidationError("graph is not connected");
}

ValenceTable::ValenceTable() {
  auto set = [this](int z, double max_order) { max_half_[z] = static_cast<int>(max_order * 2); };
  set(5, 3);    // B
  set(6, 4);    // C
  set(7, 3);    // N
  set(8, 2);    // O
  set(9, 1);    // F
  set(15, 5);   // P
  set(16, 6);   // S
  set(17, 1);   // Cl
  set(35, 1);   // Br
  set(53, 1);   // I
}

const ValenceTable& ValenceTable::standard() {
  static const ValenceTable table;
  return table;
}

bool ValenceTable::supports(int atomic_number) const {
  return atomic_number >= 1 && atomic_number <= 118 && max_half_[atomic_number] > 0;
}

int ValenceTable::max_half_units(int atomic_number) const {
  if (!supports(atomic_number))
    throw ValidationError("element not in valence table: " +
                          std::string(element_symbol(atomic_number)));
  return max_half_[atomic_number];
}

std::string_view element_symbol(int atomic_number) {
  if (atomic_number < 1 || atomic_number > 118) return "?";
  return kElementSymbols[atomic_number];
}

int element_from_symbol(std::string_view symbol) {
  for (int z = 1; z <= 118; ++z) {
    if (kElementSymbols[z] == symbol) return z;
  }
  return 0;
}

bool check_valence(const MolecularGraph& g, const ValenceTable& table) {
  std::vector<int> sum_half(g.atoms.size(), 0);
  for (const Bond& b : g.bonds) {
    sum_half[b.left] += bond_order_half_units(b.order);
    sum_half[b.right] += bond_order_half_units(b.order);
  }
  for (int i = 0; i < g.atom_count(); ++i) {
    if (sum_half[i] > table.max_half_units(g.atoms[i].atomic_number)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// SMILES parsing
// ---------------------------------------------------------------------------

namespace {

struct RingOpening {
  int atom = -1;
  std::optional<BondOrder> order;
  std::size_t position = 0;
};

struct SmilesParser {
  const std::string& text;
  std::size_t i = 0;

  MolecularGraph graph;
  std::vector<char> aromatic;  // per atom: written lowercase
  std::vector<int> branch_stack;
  int prev_atom = -1;
  std::optional<BondOrder> pending;
  std::size_t pending_pos = 0;
  std::map<int, RingOpening> open_rings;

  explicit SmilesParser(const std::string& t) : text(t) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t pos) const {
    throw ParseError(msg, pos);
  }

  char peek() const { return i < text.size() ? text[i] : '\0'; }

  BondOrder default_order(int a, int b) const {
    return (aromatic[a] && aromatic[b]) ? BondOrder::Aromatic : BondOrder::Single;
  }

  void add_bond(int a, int b, BondOrder order, std::size_t pos) {
    if (a == b) fail("ring closure forms a self-loop", pos);
    if (graph.has_bond(a, b)) fail("duplicate bond", pos);
    graph.bonds.push_back({a, b, order});
  }

  int add_atom(int z, bool is_aromatic, std::size_t pos) {
    if (is_aromatic && !is_aromatic_capable(z))
      fail("element has no aromatic form: " + std::string(element_symbol(z)), pos);
    graph.atoms.push_back({z});
    aromatic.push_back(is_aromatic ? 1 : 0);
    int idx = graph.atom_count() - 1;
    if (prev_atom >= 0) {
      BondOrder order = pending ? *pending : default_order(prev_atom, idx);
      add_bond(prev_atom, idx, order, pos);
    } else if (pending) {
      fail("bond symbol before the first atom", pending_pos);
    }
    pending.reset();
    prev_atom = idx;
    return idx;
  }

  void handle_ring_digit(int digit, std::size_t pos) {
    if (prev_atom < 0) fail("ring closure before any atom", pos);
    auto it = open_rings.find(digit);
    if (it == open_rings.end()) {
      open_rings[digit] = {prev_atom, pending, pos};
      pending.reset();
      return;
    }
    RingOpening opening = it->second;
    open_rings.erase(it);
    std::optional<BondOrder> order = opening.order;
    if (pending) {
      if (order && *order != *pending) fail("mismatched ring closure bond order", pos);
      order = pending;
      pending.reset();
    }
    BondOrder resolved = order ? *order : default_order(opening.atom, prev_atom);
    add_bond(opening.atom, prev_atom, resolved, pos);
  }

  void parse_bracket_atom() {
    std::size_t start = i;
    ++i;  // '['
    if (i >= text.size()) fail("unterminated bracket atom", start);
    char c = text[i];
    if (std::isdigit(static_cast<unsigned char>(c))) fail("isotope labels not supported", i);
    if (c == '@') fail("stereochemistry not supported", i);
    if (c == '*') fail("wildcard atoms not supported", i);

    bool is_aromatic = false;
    std::string symbol;
    if (std::islower(static_cast<unsigned char>(c))) {
      is_aromatic = true;
      symbol = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      ++i;
      // two-letter lowercase aromatic symbols (se, as) fall outside the subset
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      symbol = c;
      ++i;
      if (i < text.size() && std::islower(static_cast<unsigned char>(text[i]))) {
        std::string two = symbol + text[i];
        if (element_from_symbol(two) != 0) {
          symbol = two;
          ++i;
        }
      }
    } else {
      fail("expected element symbol in bracket atom", i);
    }

    int z = element_from_symbol(symbol);
    if (z == 0) fail("unknown element symbol: " + symbol, start + 1);
    if (z == 1) fail("explicit hydrogen atoms not supported", start + 1);

    // Optional hydrogen count; heavy-atom graphs discard it.
    if (peek() == 'H') {
      ++i;
      while (std::isdigit(static_cast<unsigned char>(peek()))) ++i;
    }
    if (peek() == '+' || peek() == '-') fail("charges not supported", i);
    if (peek() == '@') fail("stereochemistry not supported", i);
    if (peek() != ']') fail("unterminated bracket atom", start);
    ++i;  // ']'
    add_atom(z, is_aromatic, start);
  }

  MolecularGraph run() {
    while (i < text.size()) {
      char c = text[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (graph.atom_count() > 0) break;  // trailing annotation ignored
        fail("leading whitespace", i);
      }
      switch (c) {
        case '-': case '=': case '#': case ':': {
          if (pending) fail("consecutive bond symbols", i);
          pending = c == '-'   ? BondOrder::Single
                    : c == '=' ? BondOrder::Double
                    : c == '#' ? BondOrder::Triple
                               : BondOrder::Aromatic;
          pending_pos = i;
          ++i;
          break;
        }
        case '(': {
          if (prev_atom < 0) fail("branch before any atom", i);
          if (pending) fail("bond symbol before branch open", pending_pos);
          branch_stack.push_back(prev_atom);
          ++i;
          break;
        }
        case ')': {
          if (branch_stack.empty()) fail("unmatched ')'", i);
          if (pending) fail("dangling bond symbol before ')'", pending_pos);
          prev_atom = branch_stack.back();
          branch_stack.pop_back();
          ++i;
          break;
        }
        case '[': parse_bracket_atom(); break;
        case '.': fail("disconnected molecules not supported", i);
        case '/': case '\\': case '@': fail("stereochemistry not supported", i);
        case '+': fail("charges not supported", i);
        case '*': fail("wildcard atoms not supported", i);
        case '%': fail("two-digit ring closures not supported", i);
        default: {
          if (std::isdigit(static_cast<unsigned char>(c))) {
            handle_ring_digit(c - '0', i);
            ++i;
            break;
          }
          if (std::islower(static_cast<unsigned char>(c))) {
            std::string sym(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            int z = element_from_symbol(sym);
            if (z == 0 || !is_aromatic_capable(z)) fail("unknown aromatic atom", i);
            ++i;
            add_atom(z, true, i - 1);
            break;
          }
          if (std::isupper(static_cast<unsigned char>(c))) {
            std::string sym(1, c);
            std::size_t pos = i;
            ++i;
            if (i < text.size() && std::islower(static_cast<unsigned char>(text[i]))) {
              std::string two = sym + text[i];
              // Only Cl and Br are two-letter symbols outside brackets.
              if (two == "Cl" || two == "Br") {
                sym = two;
                ++i;
              }
            }
            int z = element_from_symbol(sym);
            if (z == 0) fail("unknown element symbol: " + sym, pos);
            static const std::set<std::string> organic = {"B", "C", "N", "O", "P",
                                                          "S", "F", "Cl", "Br", "I"};
            if (!organic.count(sym))
              fail("element requires bracket notation: " + sym, pos);
            add_atom(z, false, pos);
            break;
          }
          fail(std::string("unexpected character '") + c + "'", i);
        }
      }
    }

    if (graph.atom_count() == 0) fail("empty SMILES", 0);
    if (!branch_stack.empty()) fail("unmatched '('", text.size());
    if (pending) fail("dangling bond symbol", pending_pos);
    if (!open_rings.empty()) fail("unclosed ring bond", open_rings.begin()->second.position);

    graph.origin_first_atom = 0;
    validate_graph(graph);
    if (!check_valence(graph))
      throw ValidationError("valence violation in '" + text + "'");
    return graph;
  }
};

}  // namespace

MolecularGraph parse_smiles(const std::string& text) {
  SmilesParser parser(text);
  return parser.run();
}

// ---------------------------------------------------------------------------
// SMILES writing
// ---------------------------------------------------------------------------

namespace {

struct SmilesWriter {
  const MolecularGraph& g;
  std::vector<std::vector<int>> adj;
  std::vector<char> aromatic_atom;          // incident to >=1 aromatic bond
  std::vector<int> visit_order;             // DFS pre-order
  std::vector<int> parent;
  std::vector<std::pair<int, int>> ring_edges;  // (opening atom, closing atom)
  std::string out;

  explicit SmilesWriter(const MolecularGraph& graph) : g(graph) {
    adj = g.adjacency();
    aromatic_atom.assign(g.atom_count(), 0);
    for (const Bond& b : g.bonds) {
      if (b.order == BondOrder::Aromatic) {
        aromatic_atom[b.left] = 1;
        aromatic_atom[b.right] = 1;
      }
    }
  }

  BondOrder order_of(int a, int b) const {
    for (const Bond& bond : g.bonds) {
      if ((bond.left == a && bond.right == b) || (bond.left == b && bond.right == a))
        return bond.order;
    }
    throw std::logic_error("missing bond");
  }

  bool atom_lower(int v) const {
    return aromatic_atom[v] && is_aromatic_capable(g.atoms[v].atomic_number);
  }

  // Empty when the parse-side default already yields this order.
  std::string bond_text(int a, int b) const {
    BondOrder order = order_of(a, b);
    bool both_lower = atom_lower(a) && atom_lower(b);
    if (order == BondOrder::Single && !both_lower) return "";
    if (order == BondOrder::Aromatic && both_lower) return "";
    switch (order) {
      case BondOrder::Single: return "-";
      case BondOrder::Double: return "=";
      case BondOrder::Triple: return "#";
      case BondOrder::Aromatic: return ":";
    }
    return "";
  }

  std::string atom_text(int v) const {
    std::string sym(element_symbol(g.atoms[v].atomic_number));
    if (atom_lower(v)) {
      for (char& c : sym) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return sym;
  }

  void classify(int start) {
    const int n = g.atom_count();
    parent.assign(n, -1);
    std::vector<char> seen(n, 0);
    std::set<std::pair<int, int>> tree_or_ring;

    // Recursive DFS with ascending neighbor order, matching the flattener.
    auto dfs = [&](auto&& self, int u) -> void {
      seen[u] = 1;
      visit_order.push_back(u);
      for (int v : adj[u]) {
        auto key = std::minmax(u, v);
        if (tree_or_ring.count(key)) continue;
        tree_or_ring.insert(key);
        if (!seen[v]) {
          parent[v] = u;
          self(self, v);
        } else {
          ring_edges.emplace_back(v, u);  // v was visited first
        }
      }
    };
    dfs(dfs, start);
    if (static_cast<int>(visit_order.size()) != n)
      throw ValidationError("cannot write a disconnected graph");
  }

  std::string run() {
    validate_graph(g);
    int start = g.origin_first_atom.value_or(0);
    classify(start);

    std::vector<int> rank(g.atom_count(), 0);
    for (std::size_t r = 0; r < visit_order.size(); ++r) rank[visit_order[r]] = static_cast<int>(r);

    // Ring digits assigned in emission order, reused once closed.
    std::vector<std::vector<std::pair<int, int>>> opens(g.atom_count());   // atom -> (other, edge id)
    std::vector<std::vector<std::pair<int, int>>> closes(g.atom_count());
    for (std::size_t e = 0; e < ring_edges.size(); ++e) {
      auto [a, b] = ring_edges[e];
      if (rank[a] > rank[b]) std::swap(a, b);
      opens[a].push_back({b, static_cast<int>(e)});
      closes[b].push_back({a, static_cast<int>(e)});
    }
    std::vector<int> digit_of(ring_edges.size(), -1);
    std::set<int> free_digits;
    for (int d = 1; d <= 9; ++d) free_digits.insert(d);

    auto emit_atom = [&](int v) {
      out += atom_text(v);
      for (auto [other, e] : closes[v]) {
        (void)other;
        out += std::to_string(digit_of[e]);
        free_digits.insert(digit_of[e]);
      }
      for (auto [other, e] : opens[v]) {
        if (free_digits.empty()) throw ValidationError("ring closure digits exhausted");
        int d = *free_digits.begin();
        free_digits.erase(free_digits.begin());
        digit_of[e] = d;
        out += bond_text(v, other);
        out += std::to_string(d);
      }
    };

    auto emit = [&](auto&& self, int u) -> void {
      emit_atom(u);
      std::vector<int> children;
      for (int v : adj[u]) {
        if (parent[v] == u) children.push_back(v);
      }
      std::sort(children.begin(), children.end(),
                [&](int a, int b) { return rank[a] < rank[b]; });
      for (std::size_t c = 0; c < children.size(); ++c) {
        bool last = c + 1 == children.size();
        if (!last) out += '(';
        out += bond_text(u, children[c]);
        self(self, children[c]);
        if (!last) out += ')';
      }
    };
    emit(emit, start);
    return out;
  }
};

}  // namespace

std::string write_smiles(const MolecularGraph& g) {
  SmilesWriter writer(g);
  return writer.run();
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

namespace {

constexpr int kMaxCanonAtoms = 64;
constexpr int kMaxTieDepth = 8;
constexpr int kMaxCanonLeaves = 20000;

struct Canonicalizer {
  const MolecularGraph& g;
  std::vector<std::vector<std::pair<int, int>>> adj;  // (neighbor, order half-units)
  int leaves = 0;
  std::string best;

  explicit Canonicalizer(const MolecularGraph& graph) : g(graph) {
    adj.resize(g.atom_count());
    for (const Bond& b : g.bonds) {
      int h = bond_order_half_units(b.order);
      adj[b.left].push_back({b.right, h});
      adj[b.right].push_back({b.left, h});
    }
  }

  // Stable recoloring by (color, sorted neighbor signature) until the
  // partition stops refining.
  std::vector<int> refine(std::vector<int> colors) const {
    const int n = g.atom_count();
    while (true) {
      std::vector<std::pair<std::vector<long long>, int>> keys(n);
      for (int v = 0; v < n; ++v) {
        std::vector<long long> sig;
        sig.push_back(colors[v]);
        std::vector<long long> nbr;
        for (auto [u, h] : adj[v]) nbr.push_back(static_cast<long long>(colors[u]) * 8 + h);
        std::sort(nbr.begin(), nbr.end());
        sig.insert(sig.end(), nbr.begin(), nbr.end());
        keys[v] = {std::move(sig), v};
      }
      std::vector<int> order(n);
      for (int v = 0; v < n; ++v) order[v] = v;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return keys[a].first < keys[b].first; });
      std::vector<int> next(n);
      int c = 0;
      for (int r = 0; r < n; ++r) {
        if (r > 0 && keys[order[r]].first != keys[order[r - 1]].first) ++c;
        next[order[r]] = c;
      }
      if (next == colors) return colors;
      colors = std::move(next);
    }
  }

  std::string serialize(const std::vector<int>& colors) const {
    const int n = g.atom_count();
    std::vector<int> pos(n);
    for (int v = 0; v < n; ++v) pos[v] = colors[v];
    std::ostringstream os;
    std::vector<int> by_pos(n);
    for (int v = 0; v < n; ++v) by_pos[pos[v]] = v;
    for (int p = 0; p < n; ++p) {
      if (p) os << ',';
      os << g.atoms[by_pos[p]].atomic_number;
    }
    os << '|';
    std::vector<std::array<int, 3>> edges;
    for (const Bond& b : g.bonds) {
      auto [lo, hi] = std::minmax(pos[b.left], pos[b.right]);
      edges.push_back({lo, hi, static_cast<int>(b.order)});
    }
    std::sort(edges.begin(), edges.end());
    for (const auto& e : edges) os << e[0] << '-' << e[1] << ':' << e[2] << ';';
    return os.str();
  }

  void search(std::vector<int> colors, int depth) {
    colors = refine(std::move(colors));
    const int n = g.atom_count();
    std::vector<int> size_of(n, 0);
    for (int v = 0; v < n; ++v) ++size_of[colors[v]];
    int target_color = -1;
    for (int c = 0; c < n; ++c) {
      if (size_of[c] > 1) {
        target_color = c;
        break;
      }
    }
    if (target_color < 0) {
      if (++leaves > kMaxCanonLeaves)
        throw ValidationError("canonicalization limit exceeded");
      std::string s = serialize(colors);
      if (best.empty() || s < best) best = std::move(s);
      return;
    }
    if (depth >= kMaxTieDepth) throw ValidationError("canonicalization limit exceeded");
    for (int v = 0; v < n; ++v) {
      if (colors[v] != target_color) continue;
      std::vector<int> child = colors;
      for (int u = 0; u < n; ++u) {
        if (child[u] >= target_color && u != v) child[u] += 1;
      }
      // v keeps target_color alone; peers shifted up by one.
      search(std::move(child), depth + 1);
    }
  }
};

}  // namespace

std::string canonical_form(const MolecularGraph& g) {
  validate_graph(g);
  if (g.atom_count() > kMaxCanonAtoms)
    throw ValidationError("canonical_form limited to 64 atoms");
  Canonicalizer canon(g);
  std::vector<int> initial(g.atom_count());
  std::vector<std::pair<int, int>> keyed(g.atom_count());
  for (int v = 0; v < g.atom_count(); ++v) keyed[v] = {g.atoms[v].atomic_number, v};
  std::vector<int> order(g.atom_count());
  for (int v = 0; v < g.atom_count(); ++v) order[v] = v;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return keyed[a].first < keyed[b].first; });
  int c = 0;
  for (int r = 0; r < g.atom_count(); ++r) {
    if (r > 0 && keyed[order[r]].first != keyed[order[r - 1]].first) ++c;
    initial[order[r]] = c;
  }
  canon.search(std::move(initial), 0);
  return canon.best;
}

// ---------------------------------------------------------------------------
// Random molecule generation
// ---------------------------------------------------------------------------

MolecularGraph random_molecule(std::mt19937_64& rng, const RandomMolOptions& opt) {
  if (opt.min_atoms < 1 || opt.max_atoms < opt.min_atoms)
    throw ValidationError("bad random molecule size range");
  const ValenceTable& table = ValenceTable::standard();

  auto uniform = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  auto chance = [&](double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
  };

  MolecularGraph g;
  std::vector<int> remaining_half;  // unused valence per atom

  auto push_atom = [&](int z) {
    g.atoms.push_back({z});
    remaining_half.push_back(table.max_half_units(z));
    return g.atom_count() - 1;
  };
  auto push_bond = [&](int a, int b, BondOrder order) {
    g.bonds.push_back({a, b, order});
    remaining_half[a] -= bond_order_half_units(order);
    remaining_half[b] -= bond_order_half_units(order);
  };

  const int n_target = uniform(opt.min_atoms, opt.max_atoms);

  if (n_target >= 6 && chance(opt.aromatic_ring_prob)) {
    for (int i = 0; i < 6; ++i) push_atom(kCarbon);
    for (int i = 0; i < 6; ++i) push_bond(i, (i + 1) % 6, BondOrder::Aromatic);
  } else {
    static const int first_choices[] = {6, 6, 6, 7, 8, 16};
    push_atom(first_choices[uniform(0, 5)]);
  }

  // Element pool weighted toward organic workhorses.
  static const int pool[] = {6, 6, 6, 6, 6, 6, 7, 7, 8, 8, 16, 9, 17, 35, 15, 5, 53};
  static const int pool_size = static_cast<int>(sizeof(pool) / sizeof(pool[0]));

  while (g.atom_count() < n_target) {
    std::vector<int> anchors;
    for (int v = 0; v < g.atom_count(); ++v) {
      if (remaining_half[v] >= 2) anchors.push_back(v);
    }
    if (anchors.empty()) break;
    int anchor = anchors[uniform(0, static_cast<int>(anchors.size()) - 1)];

    int z = pool[uniform(0, pool_size - 1)];
    BondOrder order = BondOrder::Single;
    int roll = uniform(0, 99);
    if (roll >= 85 && roll < 97) order = BondOrder::Double;
    else if (roll >= 97) order = BondOrder::Triple;
    int need = bond_order_half_units(order);
    if (remaining_half[anchor] < need || table.max_half_units(z) < need)
      order = BondOrder::Single, need = 2;
    if (remaining_half[anchor] < need) continue;

    int idx = push_atom(z);
    push_bond(anchor, idx, order);
  }

  if (g.atom_count() >= 4 && chance(opt.extra_ring_prob)) {
    // One attempt at an additional single-bond ring closure.
    for (int attempt = 0; attempt < 8; ++attempt) {
      int a = uniform(0, g.atom_count() - 1);
      int b = uniform(0, g.atom_count() - 1);
      if (a == b || g.has_bond(a, b)) continue;
      if (remaining_half[a] < 2 || remaining_half[b] < 2) continue;
      push_bond(a, b, BondOrder::Single);
      break;
    }
  }

  g.origin_first_atom = 0;
  validate_graph(g);
  if (!check_valence(g)) throw std::logic_error("random molecule violates valence budget");
  return g;
}

std::vector<SmilesRecord> read_smiles_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::vector<SmilesRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') continue;
    std::size_t last = line.find_last_not_of(" \t");
    records.push_back({line_no, line.substr(first, last - first + 1)});
  }
  return records;
}

}  // namespace gw::chem

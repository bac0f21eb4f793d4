#pragma once

// Shared test oracles, independent of the implementation paths they check.

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

#include "gw/chem.hpp"

namespace gwtest {

// Exhaustive backtracking graph-isomorphism check (elements + bond orders).
inline bool isomorphic(const gw::chem::MolecularGraph& a, const gw::chem::MolecularGraph& b) {
  using gw::chem::BondOrder;
  const int n = a.atom_count();
  if (n != b.atom_count() || a.bond_count() != b.bond_count()) return false;

  auto adjacency_orders = [](const gw::chem::MolecularGraph& g) {
    std::vector<std::vector<int>> m(g.atom_count(), std::vector<int>(g.atom_count(), 0));
    for (const gw::chem::Bond& bond : g.bonds) {
      int o = static_cast<int>(bond.order) + 1;
      m[bond.left][bond.right] = o;
      m[bond.right][bond.left] = o;
    }
    return m;
  };
  auto am = adjacency_orders(a);
  auto bm = adjacency_orders(b);

  auto degree = [](const std::vector<std::vector<int>>& m, int v) {
    int d = 0;
    for (int x : m[v])
      if (x) ++d;
    return d;
  };

  std::vector<int> map_ab(n, -1);
  std::vector<char> used(n, 0);
  auto backtrack = [&](auto&& self, int i) -> bool {
    if (i == n) return true;
    for (int cand = 0; cand < n; ++cand) {
      if (used[cand]) continue;
      if (a.atoms[i].atomic_number != b.atoms[cand].atomic_number) continue;
      if (degree(am, i) != degree(bm, cand)) continue;
      bool ok = true;
      for (int u = 0; u < i && ok; ++u)
        if (am[u][i] != bm[map_ab[u]][cand]) ok = false;
      if (!ok) continue;
      map_ab[i] = cand;
      used[cand] = 1;
      if (self(self, i + 1)) return true;
      used[cand] = 0;
      map_ab[i] = -1;
    }
    return false;
  };
  return backtrack(backtrack, 0);
}

// Relabels atoms by the given permutation: new index perm[i] for old i.
inline gw::chem::MolecularGraph permute_graph(const gw::chem::MolecularGraph& g,
                                              const std::vector<int>& perm) {
  gw::chem::MolecularGraph out;
  out.atoms.resize(g.atoms.size());
  for (std::size_t i = 0; i < g.atoms.size(); ++i) out.atoms[perm[i]] = g.atoms[i];
  for (const gw::chem::Bond& b : g.bonds)
    out.bonds.push_back({perm[b.left], perm[b.right], b.order});
  if (g.origin_first_atom) out.origin_first_atom = perm[*g.origin_first_atom];
  return out;
}

}  // namespace gwtest

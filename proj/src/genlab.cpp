#include "gw/genlab.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gw::genlab {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t h = a * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull;
  h ^= b + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdull;
  h ^= c + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h ^ (h >> 33);
}

}  // namespace

int Fingerprint::popcount() const {
  int n = 0;
  for (std::uint64_t w : words) n += std::popcount(w);
  return n;
}

Fingerprint fingerprint(const chem::MolecularGraph& g) {
  constexpr int kMaxPathBonds = 7;
  Fingerprint fp;
  auto adj = g.adjacency();

  // Path signature over elements and bond orders; the lexically smaller of
  // the two read directions keeps it orientation-free.
  std::vector<int> path_atoms;
  std::vector<int> path_orders;
  auto emit = [&]() {
    auto render = [&](bool reversed) {
      std::ostringstream os;
      int n = static_cast<int>(path_atoms.size());
      for (int i = 0; i < n; ++i) {
        int ai = reversed ? n - 1 - i : i;
        os << g.atoms[path_atoms[ai]].atomic_number;
        if (i + 1 < n) {
          int oi = reversed ? n - 2 - i : i;
          os << ':' << path_orders[oi] << ':';
        }
      }
      return os.str();
    };
    std::string fwd = render(false), rev = render(true);
    fp.set(static_cast<int>(fnv1a(fwd < rev ? fwd : rev) % Fingerprint::kBits));
  };

  std::vector<char> in_path(g.atoms.size(), 0);
  auto walk = [&](auto&& self, int u) -> void {
    emit();
    if (static_cast<int>(path_orders.size()) >= kMaxPathBonds) return;
    for (int v : adj[u]) {
      if (in_path[v]) continue;
      int order = 0;
      for (const chem::Bond& b : g.bonds) {
        if ((b.left == u && b.right == v) || (b.left == v && b.right == u)) {
          order = chem::bond_order_half_units(b.order);
          break;
        }
      }
      in_path[v] = 1;
      path_atoms.push_back(v);
      path_orders.push_back(order);
      self(self, v);
      path_orders.pop_back();
      path_atoms.pop_back();
      in_path[v] = 0;
    }
  };
  for (int a = 0; a < g.atom_count(); ++a) {
    in_path[a] = 1;
    path_atoms.push_back(a);
    walk(walk, a);
    path_atoms.pop_back();
    in_path[a] = 0;
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i) {
    inter += std::popcount(a.words[i] & b.words[i]);
    uni += std::popcount(a.words[i] | b.words[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::set<std::string> canonical_set(const std::vector<chem::MolecularGraph>& graphs) {
  std::set<std::string> out;
  for (const chem::MolecularGraph& g : graphs) out.insert(chem::canonical_form(g));
  return out;
}

GenSetMetrics compute_metrics(const std::vector<std::optional<chem::MolecularGraph>>& generated,
                              const std::set<std::string>& training_canon) {
  if (generated.empty()) throw ValidationError("metrics need a non-empty generated set");
  GenSetMetrics m;
  m.n_total = static_cast<int>(generated.size());

  std::vector<const chem::MolecularGraph*> valid;
  for (const auto& g : generated) {
    if (!g) continue;
    try {
      if (chem::check_valence(*g)) valid.push_back(&*g);
    } catch (const ValidationError&) {
      // element outside the valence table: counted invalid
    }
  }
  m.n_valid = static_cast<int>(valid.size());
  m.validity = static_cast<double>(m.n_valid) / m.n_total;
  if (valid.empty()) return m;

  std::set<std::string> unique;
  for (const chem::MolecularGraph* g : valid) unique.insert(chem::canonical_form(*g));
  m.n_unique = static_cast<int>(unique.size());
  m.uniqueness = static_cast<double>(m.n_unique) / m.n_valid;

  for (const std::string& s : unique)
    if (!training_canon.count(s)) ++m.n_novel;
  m.novelty = m.n_unique > 0 ? static_cast<double>(m.n_novel) / m.n_unique : 0.0;

  std::vector<Fingerprint> fps;
  fps.reserve(valid.size());
  for (const chem::MolecularGraph* g : valid) fps.push_back(fingerprint(*g));
  double sum1 = 0, sum2 = 0;
  for (const Fingerprint& a : fps) {
    for (const Fingerprint& b : fps) {
      double t = tanimoto(a, b);
      sum1 += t;
      sum2 += t * t;
    }
  }
  double n2 = static_cast<double>(fps.size()) * static_cast<double>(fps.size());
  m.intdiv1 = 1.0 - sum1 / n2;
  m.intdiv2 = 1.0 - std::sqrt(sum2 / n2);
  return m;
}

std::string GenSetMetrics::report_line() const {
  std::ostringstream os;
  os << "validity\t" << validity << "\tuniqueness\t" << uniqueness << "\tnovelty\t" << novelty
     << "\tintdiv1\t" << intdiv1 << "\tintdiv2\t" << intdiv2 << "\tn\t" << n_total;
  return os.str();
}

// ---------------------------------------------------------------------------
// Word bank
// ---------------------------------------------------------------------------

WordBank encode_bank(model::ModelF& m, const vocab::BondDict& bonds,
                     const std::vector<chem::MolecularGraph>& molecules) {
  WordBank bank;
  bank.k = m.cfg.encoder.word_count;
  bank.dim = m.cfg.encoder.dim;
  for (const chem::MolecularGraph& g : molecules) {
    ftseq::FTSeq seq = ftseq::flatten(g, bonds);
    bank.entries.push_back(m.encoder.encode_array(seq));
    bank.source_canonical.push_back(chem::canonical_form(g));
  }
  return bank;
}

namespace {
constexpr char kWordsMagic[4] = {'G', 'W', 'W', 'D'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ValidationError("truncated words file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}
}  // namespace

void save_words(const std::string& path, const WordBank& bank, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  if (binary) {
    out.write(kWordsMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(bank.size()));
    put_u32(out, static_cast<std::uint32_t>(bank.k));
    put_u32(out, static_cast<std::uint32_t>(bank.dim));
    for (const auto& w : bank.entries)
      out.write(reinterpret_cast<const char*>(w.v.data()),
                static_cast<std::streamsize>(w.v.size() * sizeof(float)));
  } else {
    std::ostringstream os;
    os.precision(9);
    for (const auto& w : bank.entries) {
      for (std::size_t i = 0; i < w.v.size(); ++i) os << (i ? " " : "") << w.v[i];
      os << '\n';
    }
    out << os.str();
  }
  if (!out) throw std::runtime_error("words write failed: " + path);
}

WordBank load_words(const std::string& path, int expect_k, int expect_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  WordBank bank;
  if (in && std::memcmp(magic, kWordsMagic, 4) == 0) {
    std::uint32_t count = get_u32(in), k = get_u32(in), dim = get_u32(in);
    bank.k = static_cast<int>(k);
    bank.dim = static_cast<int>(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
      nn::Array<float> w(nn::Shape::mat(bank.k, bank.dim));
      in.read(reinterpret_cast<char*>(w.v.data()),
              static_cast<std::streamsize>(w.v.size() * sizeof(float)));
      if (!in) throw ValidationError("truncated words file");
      bank.entries.push_back(std::move(w));
    }
  } else {
    if (expect_k <= 0 || expect_dim <= 0)
      throw ValidationError("text word files need the model to fix k and dim");
    in.clear();
    in.seekg(0);
    bank.k = expect_k;
    bank.dim = expect_dim;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      nn::Array<float> w(nn::Shape::mat(bank.k, bank.dim));
      for (float& x : w.v)
        if (!(ls >> x)) throw ValidationError("malformed words line: " + line);
      bank.entries.push_back(std::move(w));
    }
  }
  if (expect_k > 0 && bank.k != expect_k)
    throw ValidationError("word count mismatch between file and model");
  if (expect_dim > 0 && bank.dim != expect_dim)
    throw ValidationError("word dimension mismatch between file and model");
  return bank;
}

// ---------------------------------------------------------------------------
// Few-shot sampling
// ---------------------------------------------------------------------------

SampleOutcome fewshot_sample(model::ModelF& m, const vocab::BondDict& bonds,
                             const WordBank& bank, double s, int count, std::uint64_t seed) {
  if (bank.size() == 0) throw ValidationError("empty word bank");
  if (s < 0) throw ValidationError("variance must be non-negative");
  if (count < 1) throw ValidationError("sample count must be >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, bank.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = std::sqrt(s);

  SampleOutcome out;
  std::vector<std::optional<chem::MolecularGraph>> graphs;
  for (int i = 0; i < count; ++i) {
    int component = pick(rng);
    out.components.push_back(component);
    nn::Array<float> words = bank.entries[component];
    if (s > 0) {
      for (float& x : words.v) x += static_cast<float>(sigma * noise(rng));
    }
    model::GenerateResult gen = m.decoder.generate(words, bonds);
    graphs.push_back(gen.valid ? gen.graph : std::nullopt);
    out.generations.push_back(std::move(gen));
  }
  std::set<std::string> train_canon(bank.source_canonical.begin(), bank.source_canonical.end());
  out.metrics = compute_metrics(graphs, train_canon);
  return out;
}

// ---------------------------------------------------------------------------
// Latent operations
// ---------------------------------------------------------------------------

namespace {
void require_same_shape(const nn::Array<float>& a, const nn::Array<float>& b) {
  if (a.shape != b.shape)
    throw ValidationError("graph word shapes differ: " + a.shape.to_string() + " vs " +
                          b.shape.to_string());
}
}  // namespace

nn::Array<float> mixup(const nn::Array<float>& a, const nn::Array<float>& b, double lambda) {
  require_same_shape(a, b);
  if (lambda < 0.0 || lambda > 1.0) throw ValidationError("lambda must lie in [0,1]");
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;
  nn::Array<float> out(a.shape);
  for (std::size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = static_cast<float>(lambda * a.v[i] + (1.0 - lambda) * b.v[i]);
  return out;
}

std::vector<nn::Array<float>> interpolate(const nn::Array<float>& source,
                                          const nn::Array<float>& target,
                                          const std::vector<double>& alphas) {
  require_same_shape(source, target);
  std::vector<nn::Array<float>> out;
  out.reserve(alphas.size());
  for (double alpha : alphas) {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("alpha must lie in [0,1]");
    out.push_back(mixup(target, source, alpha));  // (1-alpha)*source + alpha*target
  }
  return out;
}

nn::Array<float> hybridize(const nn::Array<float>& source, const nn::Array<float>& target,
                           const std::vector<int>& indices) {
  require_same_shape(source, target);
  nn::Array<float> out = source;
  for (int i : indices) {
    if (i < 0 || i >= source.rows())
      throw ValidationError("hybridization index out of range: " + std::to_string(i));
    for (int c = 0; c < source.cols(); ++c) out.at(i, c) = target.at(i, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutation consistency
// ---------------------------------------------------------------------------

ConsistencyReport permutation_consistency(model::ModelF* m, const vocab::BondDict& bonds,
                                          const std::vector<chem::MolecularGraph>& molecules,
                                          int n_permutations, std::uint64_t seed) {
  if (molecules.empty()) throw ValidationError("consistency needs at least one molecule");
  if (n_permutations < 1) throw ValidationError("need at least one permutation");

  ConsistencyReport rep;
  rep.n_permutations = n_permutations;
  for (std::size_t mol = 0; mol < molecules.size(); ++mol) {
    ftseq::FTSeq seq = ftseq::flatten(molecules[mol], bonds);
    std::map<std::string, int> outcomes;
    for (int p = 0; p < n_permutations; ++p) {
      std::string result;
      if (m == nullptr) {
        result = chem::canonical_form(ftseq::unflatten(seq, bonds));
      } else {
        std::vector<int> perm = ftseq::shuffle_codebook(
            m->cfg.encoder.m, mix_seed(seed, static_cast<std::uint64_t>(mol),
                                       static_cast<std::uint64_t>(p)));
        nn::Array<float> words = m->encoder.encode_array(seq, perm);
        model::GenerateResult gen = m->decoder.generate(words, bonds);
        result = gen.valid ? chem::canonical_form(*gen.graph) : "<invalid>";
      }
      ++outcomes[result];
    }
    int best = 0;
    for (const auto& [key, n] : outcomes) best = std::max(best, n);
    rep.per_molecule.push_back(static_cast<double>(best) / n_permutations);
  }
  for (double c : rep.per_molecule) rep.average += c;
  rep.average /= rep.per_molecule.size();
  for (int q : {25, 50, 75, 100}) {
    int hits = 0;
    for (double c : rep.per_molecule)
      if (c * 100.0 >= q - 1e-9) ++hits;
    rep.c_at_percent[q] = static_cast<double>(hits) / rep.per_molecule.size();
  }
  return rep;
}

std::string ConsistencyReport::report_line() const {
  std::ostringstream os;
  os << "avg_consistency\t" << average;
  for (const auto& [q, frac] : c_at_percent) os << "\tC@" << q << "%\t" << frac;
  os << "\tmolecules\t" << per_molecule.size() << "\tpermutations\t" << n_permutations;
  return os.str();
}

}  // namespace gw::genlab

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gw/model.hpp"

namespace gw::genlab {

// 2048-bit fingerprint of hashed linear atom/bond paths (up to 7 bonds).
struct Fingerprint {
  static constexpr int kBits = 2048;
  std::array<std::uint64_t, kBits / 64> words{};

  void set(int bit) { words[bit >> 6] |= (1ull << (bit & 63)); }
  int popcount() const;
  bool empty() const { return popcount() == 0; }
};

Fingerprint fingerprint(const chem::MolecularGraph& g);

// |a & b| / |a | b|; 1 when both are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

struct GenSetMetrics {
  double validity = 0;
  double uniqueness = 0;
  double novelty = 0;
  double intdiv1 = 0;
  double intdiv2 = 0;
  int n_total = 0;
  int n_valid = 0;
  int n_unique = 0;
  int n_novel = 0;

  std::string report_line() const;
};

// validity: decoded and valence-clean fraction of all samples;
// uniqueness: unique canonical forms among valid; novelty: unique forms not in
// the training set; IntDiv_p: 1 - (mean of pairwise Tanimoto^p)^(1/p) over the
// valid multiset, self-pairs included.
GenSetMetrics compute_metrics(const std::vector<std::optional<chem::MolecularGraph>>& generated,
                              const std::set<std::string>& training_canon);

std::set<std::string> canonical_set(const std::vector<chem::MolecularGraph>& graphs);

// --- stored graph words -----------------------------------------------------

struct WordBank {
  int k = 0;
  int dim = 0;
  std::vector<nn::Array<float>> entries;      // each [k, dim]
  std::vector<std::string> source_canonical;  // aligned with entries (may be empty)

  int size() const { return static_cast<int>(entries.size()); }
};

WordBank encode_bank(model::ModelF& m, const vocab::BondDict& bonds,
                     const std::vector<chem::MolecularGraph>& molecules);

// Binary format: magic "GWWD", u32 count/k/dim, f32 payload. Text format: one
// molecule per line, k*dim floats. Readers detect the format by magic.
void save_words(const std::string& path, const WordBank& bank, bool binary);
WordBank load_words(const std::string& path, int expect_k = -1, int expect_dim = -1);

// --- few-shot sampling ------------------------------------------------------

struct SampleOutcome {
  std::vector<model::GenerateResult> generations;
  std::vector<int> components;  // bank row each sample was drawn around
  GenSetMetrics metrics;
};

// Equal-weight Gaussian mixture around stored words: pick a bank row uniformly
// and add isotropic noise of standard deviation sqrt(s). s = 0 reproduces the
// bank rows bit-exactly.
SampleOutcome fewshot_sample(model::ModelF& m, const vocab::BondDict& bonds,
                             const WordBank& bank, double s, int count, std::uint64_t seed);

// --- latent operations ------------------------------------------------------

// lambda * a + (1 - lambda) * b; endpoints returned bit-exactly.
nn::Array<float> mixup(const nn::Array<float>& a, const nn::Array<float>& b, double lambda);

// (1 - alpha) * source + alpha * target per alpha.
std::vector<nn::Array<float>> interpolate(const nn::Array<float>& source,
                                          const nn::Array<float>& target,
                                          const std::vector<double>& alphas);

// Replace the source rows listed in `indices` (0-based) with target rows.
nn::Array<float> hybridize(const nn::Array<float>& source, const nn::Array<float>& target,
                           const std::vector<int>& indices);

// --- permutation consistency -----------------------------------------------

struct ConsistencyReport {
  std::vector<double> per_molecule;     // max agreement fraction per molecule
  double average = 0;
  std::map<int, double> c_at_percent;   // {25, 50, 75, 100} -> fraction of molecules
  int n_permutations = 0;

  std::string report_line() const;
};

// Encodes each molecule under `n_permutations` fresh codebook shuffles and
// decodes each; consistency is the largest fraction of identical decodes.
// With a null model the codec alone is exercised (always 100%).
ConsistencyReport permutation_consistency(model::ModelF* m, const vocab::BondDict& bonds,
                                          const std::vector<chem::MolecularGraph>& molecules,
                                          int n_permutations, std::uint64_t seed);

}  // namespace gw::genlab

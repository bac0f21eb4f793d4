#include "gw/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gw::train {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t h = a * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull;
  h ^= b + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdull;
  h ^= c + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xc4ceb9fe1a85ec53ull;
  return h ^ (h >> 33);
}

// Fixed single-carbon scaffold used as encoder input for conditional models.
ftseq::FTSeq scaffold_seq() {
  ftseq::FTSeq s;
  s.tokens.push_back(ftseq::FtToken::node(5, 0));  // carbon, slot 0
  return s;
}

std::vector<model::Encoder<float>::Condition> conditions_for(const Example& ex,
                                                             const Corpus& corpus) {
  auto norm = [](double v, double mean, double std) {
    return static_cast<float>((v - mean) / (std > 0 ? std : 1.0));
  };
  return {
      {0, norm(ex.props.atoms, corpus.prop_mean.atoms, corpus.prop_std.atoms)},
      {1, norm(ex.props.bonds, corpus.prop_mean.bonds, corpus.prop_std.bonds)},
      {2, norm(ex.props.rings, corpus.prop_mean.rings, corpus.prop_std.rings)},
  };
}

}  // namespace

GraphProperties graph_properties(const chem::MolecularGraph& g) {
  GraphProperties p;
  p.atoms = g.atom_count();
  p.bonds = g.bond_count();
  p.rings = g.bond_count() - g.atom_count() + 1;
  return p;
}

Corpus prepare_corpus(const std::vector<chem::MolecularGraph>& graphs,
                      const vocab::BondDict& bonds) {
  if (graphs.empty()) throw ValidationError("empty corpus");
  Corpus corpus;
  corpus.examples.reserve(graphs.size());
  for (const chem::MolecularGraph& g : graphs) {
    Example ex;
    ex.graph = g;
    ex.seq = ftseq::flatten(g, bonds);
    ex.props = graph_properties(g);
    corpus.examples.push_back(std::move(ex));
  }
  auto stat = [&](auto get, double& mean, double& std) {
    double s = 0;
    for (const Example& e : corpus.examples) s += get(e.props);
    mean = s / corpus.size();
    double v = 0;
    for (const Example& e : corpus.examples) {
      double d = get(e.props) - mean;
      v += d * d;
    }
    std = std::sqrt(v / corpus.size());
  };
  stat([](const GraphProperties& p) { return p.atoms; }, corpus.prop_mean.atoms,
       corpus.prop_std.atoms);
  stat([](const GraphProperties& p) { return p.bonds; }, corpus.prop_mean.bonds,
       corpus.prop_std.bonds);
  stat([](const GraphProperties& p) { return p.rings; }, corpus.prop_mean.rings,
       corpus.prop_std.rings);
  return corpus;
}

std::vector<chem::MolecularGraph> random_corpus(int count, std::uint64_t seed,
                                                const chem::RandomMolOptions& opt) {
  std::mt19937_64 rng(seed);
  std::vector<chem::MolecularGraph> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(chem::random_molecule(rng, opt));
  return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, const TrainConfig& cfg,
                                const model::EncoderConfig& enc, long epoch, int* skipped) {
  std::vector<int> order;
  for (int i = 0; i < corpus.size(); ++i) {
    int len = corpus.examples[i].seq.size();
    int extra = cfg.conditions ? 3 + 1 : 0;  // condition tokens + scaffold node
    if (enc.word_count + extra + (cfg.conditions ? 1 : len) > enc.context_limit() ||
        corpus.examples[i].seq.node_count() > enc.m || len + 1 > enc.context_limit()) {
      if (skipped) ++(*skipped);
      continue;
    }
    order.push_back(i);
  }
  if (order.empty()) throw ValidationError("every corpus example exceeds the context limit");

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x6f72646572ull, static_cast<std::uint64_t>(epoch)));
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::uniform_int_distribution<int> dist(0, i);
    std::swap(order[i], order[dist(rng)]);
  }

  std::vector<Batch> batches;
  for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
    Batch b;
    std::size_t end = std::min(order.size(), at + cfg.batch_size);
    for (std::size_t i = at; i < end; ++i) {
      BatchEntry entry;
      entry.example = order[i];
      entry.perm_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(order[i]) + 1);
      b.entries.push_back(entry);
      b.max_seq_len = std::max(b.max_seq_len, corpus.examples[order[i]].seq.size());
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

namespace {

struct BatchLosses {
  nn::Var<float> token;
  nn::Var<float> attach;
  nn::Var<float> total;
};

BatchLosses batch_losses(model::ModelF& m, const Corpus& corpus, const Batch& batch,
                         const TrainConfig& cfg, nn::Tape<float>& tape) {
  if (batch.entries.empty()) throw ValidationError("empty batch");
  std::vector<nn::Var<float>> token_parts, attach_parts;
  for (const BatchEntry& entry : batch.entries) {
    const Example& ex = corpus.examples[entry.example];
    std::vector<int> perm;
    if (cfg.shuffle_codebook)
      perm = ftseq::shuffle_codebook(m.cfg.encoder.m, entry.perm_seed);
    nn::Var<float> words;
    if (cfg.conditions) {
      ftseq::FTSeq scaf = scaffold_seq();
      words = m.encoder.encode(tape, scaf, perm, conditions_for(ex, corpus));
    } else {
      words = m.encoder.encode(tape, ex.seq, perm, {}, batch.max_seq_len);
    }
    auto losses = m.decoder.teacher_losses(tape, words, ex.seq, batch.max_seq_len);
    token_parts.push_back(losses.token);
    attach_parts.push_back(losses.attach);
  }
  float inv = 1.0f / static_cast<float>(batch.entries.size());
  BatchLosses out;
  out.token = nn::scale(nn::add_n(token_parts), inv);
  out.attach = nn::scale(nn::add_n(attach_parts), inv);
  out.total = nn::add(out.token, out.attach);
  return out;
}

}  // namespace

StepStats eval_losses(model::ModelF& m, const Corpus& corpus, const Batch& batch,
                      const TrainConfig& cfg) {
  nn::Tape<float> tape;
  BatchLosses l = batch_losses(m, corpus, batch, cfg, tape);
  return {l.token.scalar(), l.attach.scalar(), l.total.scalar()};
}

StepStats train_step(model::ModelF& m, const Corpus& corpus, const Batch& batch,
                     const TrainConfig& cfg, nn::AdamW<float>& opt, double lr) {
  m.zero_grad();
  nn::Tape<float> tape;
  BatchLosses l = batch_losses(m, corpus, batch, cfg, tape);
  StepStats stats{l.token.scalar(), l.attach.scalar(), l.total.scalar()};
  if (!std::isfinite(stats.total))
    throw std::runtime_error("non-finite loss at optimizer step " +
                             std::to_string(opt.step_count() + 1) + " (token=" +
                             std::to_string(stats.l_token) +
                             ", attach=" + std::to_string(stats.l_attach) + ")");
  tape.backward(l.total);
  auto params = m.parameters();
  opt.step(params, lr);
  m.renormalize_codebooks();
  return stats;
}

TrainResult train(model::ModelF& m, const Corpus& corpus, const TrainConfig& cfg,
                  std::ostream* log_stream) {
  cfg.validate();
  TrainResult result;
  nn::AdamW<float> opt(cfg.weight_decay);
  long step = 0;
  long epoch = 0;
  bool stop = false;
  while (!stop && step < cfg.total_steps) {
    int skipped = 0;
    std::vector<Batch> batches = make_batches(corpus, cfg, m.cfg.encoder, epoch, &skipped);
    if (epoch == 0) result.skipped_examples = skipped;
    for (const Batch& batch : batches) {
      if (step >= cfg.total_steps) break;
      double lr = nn::cosine_warmup_lr(step, cfg.warmup_steps, cfg.total_steps, cfg.lr_max,
                                       cfg.lr_min);
      StepStats stats = train_step(m, corpus, batch, cfg, opt, lr);
      if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps) {
        TrainLogRow row{step, lr, stats.l_token, stats.l_attach};
        result.log.push_back(row);
        if (log_stream)
          (*log_stream) << row.step << '\t' << row.lr << '\t' << row.l_token << '\t'
                        << row.l_attach << '\n';
      }
      ++step;
      if (cfg.early_stop_total > 0 && stats.total < cfg.early_stop_total) {
        stop = true;
        break;
      }
    }
    ++epoch;
  }
  result.steps_run = step;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'W', 'G', 'T'};
constexpr std::uint32_t kVersion = 1;

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
  if (!in) throw ValidationError("truncated checkpoint file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

std::string config_text(const model::ModelConfig& cfg, const CheckpointExtras& extras) {
  std::ostringstream os;
  os << "enc.layers=" << cfg.encoder.layers << '\n';
  os << "enc.heads=" << cfg.encoder.heads << '\n';
  os << "enc.dim=" << cfg.encoder.dim << '\n';
  os << "enc.words=" << cfg.encoder.word_count << '\n';
  os << "enc.dp=" << cfg.encoder.d_p << '\n';
  os << "enc.m=" << cfg.encoder.m << '\n';
  os << "enc.ffn=" << cfg.encoder.ffn_mult << '\n';
  os << "enc.conditions=" << cfg.encoder.n_conditions << '\n';
  os << "dec.layers=" << cfg.decoder.layers << '\n';
  os << "dec.heads=" << cfg.decoder.heads << '\n';
  os << "dec.dim=" << cfg.decoder.dim << '\n';
  os << "dec.dp=" << cfg.decoder.d_p << '\n';
  os << "dec.m=" << cfg.decoder.m << '\n';
  os << "dec.ffn=" << cfg.decoder.ffn_mult << '\n';
  os << "dec.eps=" << cfg.decoder.place_threshold << '\n';
  os << "dec.max_blocks=" << cfg.decoder.max_blocks << '\n';
  os << "n_bonds=" << cfg.n_bonds << '\n';
  os << "prop.mean=" << extras.prop_mean.atoms << ',' << extras.prop_mean.bonds << ','
     << extras.prop_mean.rings << '\n';
  os << "prop.std=" << extras.prop_std.atoms << ',' << extras.prop_std.bonds << ','
     << extras.prop_std.rings << '\n';
  return os.str();
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void save_checkpoint(model::ModelF& m, const std::string& path, const CheckpointExtras& extras) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  std::string cfg = config_text(m.cfg, extras);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  auto params = m.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (nn::Parameter<float>* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(out, static_cast<std::uint32_t>(p->value.shape.ndim));
    for (int d = 0; d < p->value.shape.ndim; ++d)
      put_u32(out, static_cast<std::uint32_t>(p->value.shape.dim[d]));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(p->value.v.data()),
              static_cast<std::streamsize>(p->value.v.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("not a checkpoint file (bad magic): " + path);
  std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t cfg_len = get_u32(in);
  std::string cfg_str(cfg_len, '\0');
  in.read(cfg_str.data(), cfg_len);
  if (!in) throw ValidationError("truncated checkpoint file");
  auto kv = parse_kv(cfg_str);
  auto req = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError("checkpoint missing config key " + key);
    return it->second;
  };

  model::ModelConfig cfg;
  cfg.encoder.layers = std::stoi(req("enc.layers"));
  cfg.encoder.heads = std::stoi(req("enc.heads"));
  cfg.encoder.dim = std::stoi(req("enc.dim"));
  cfg.encoder.word_count = std::stoi(req("enc.words"));
  cfg.encoder.d_p = std::stoi(req("enc.dp"));
  cfg.encoder.m = std::stoi(req("enc.m"));
  cfg.encoder.ffn_mult = std::stoi(req("enc.ffn"));
  cfg.encoder.n_conditions = std::stoi(req("enc.conditions"));
  cfg.decoder.layers = std::stoi(req("dec.layers"));
  cfg.decoder.heads = std::stoi(req("dec.heads"));
  cfg.decoder.dim = std::stoi(req("dec.dim"));
  cfg.decoder.d_p = std::stoi(req("dec.dp"));
  cfg.decoder.m = std::stoi(req("dec.m"));
  cfg.decoder.ffn_mult = std::stoi(req("dec.ffn"));
  cfg.decoder.place_threshold = std::stod(req("dec.eps"));
  cfg.decoder.max_blocks = std::stoi(req("dec.max_blocks"));
  int n_bonds = std::stoi(req("n_bonds"));

  CheckpointExtras extras;
  auto parse3 = [](const std::string& s, double& a, double& b, double& c) {
    std::istringstream is(s);
    char comma;
    is >> a >> comma >> b >> comma >> c;
  };
  parse3(req("prop.mean"), extras.prop_mean.atoms, extras.prop_mean.bonds,
         extras.prop_mean.rings);
  parse3(req("prop.std"), extras.prop_std.atoms, extras.prop_std.bonds, extras.prop_std.rings);

  LoadedModel loaded{model::ModelF(cfg, n_bonds, 0), extras};
  auto params = loaded.model.parameters();
  std::uint32_t count = get_u32(in);
  if (count != params.size())
    throw ValidationError("checkpoint parameter count mismatch");
  for (nn::Parameter<float>* p : params) {
    std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in || name != p->name)
      throw ValidationError("checkpoint parameter order mismatch at " + p->name);
    std::uint32_t ndim = get_u32(in);
    nn::Shape s;
    s.ndim = static_cast<int>(ndim);
    if (ndim > 4) throw ValidationError("bad checkpoint shape");
    for (std::uint32_t d = 0; d < ndim; ++d) s.dim[d] = static_cast<int>(get_u32(in));
    if (s != p->value.shape)
      throw ValidationError("checkpoint shape mismatch for " + p->name);
    in.read(reinterpret_cast<char*>(p->value.v.data()),
            static_cast<std::streamsize>(p->value.v.size() * sizeof(float)));
    if (!in) throw ValidationError("truncated checkpoint file");
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

ProbeResult linear_probe(const std::vector<std::vector<float>>& words,
                         const std::vector<double>& labels, bool classification, int epochs,
                         std::uint64_t seed) {
  if (words.size() != labels.size() || words.empty())
    throw ValidationError("probe inputs misaligned or empty");
  const int n = static_cast<int>(words.size());
  const int dim = static_cast<int>(words[0].size());
  for (const auto& w : words)
    if (static_cast<int>(w.size()) != dim) throw ValidationError("ragged word bank");

  {
    double lo = *std::min_element(labels.begin(), labels.end());
    double hi = *std::max_element(labels.begin(), labels.end());
    if (lo == hi) throw ValidationError("degenerate constant labels");
  }
  if (classification) {
    for (double y : labels)
      if (y != 0.0 && y != 1.0)
        throw ValidationError("classification probe expects binary {0,1} labels");
  }

  // Stratified 80/20 split (two strata: classes, or median halves).
  double median = 0;
  {
    std::vector<double> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    median = sorted[sorted.size() / 2];
  }
  auto stratum = [&](int i) {
    return classification ? (labels[i] > 0.5 ? 1 : 0) : (labels[i] >= median ? 1 : 0);
  };
  std::vector<int> train_idx, test_idx;
  std::mt19937_64 rng(seed);
  for (int sclass = 0; sclass < 2; ++sclass) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (stratum(i) == sclass) members.push_back(i);
    for (int i = static_cast<int>(members.size()) - 1; i > 0; --i) {
      std::uniform_int_distribution<int> dist(0, i);
      std::swap(members[i], members[dist(rng)]);
    }
    std::size_t cut = (members.size() * 8 + 9) / 10;  // ceil(0.8n)
    if (cut == members.size() && cut > 1) --cut;      // keep a held-out sample
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < cut ? train_idx : test_idx).push_back(members[i]);
  }
  if (test_idx.empty()) throw ValidationError("probe needs enough samples for a test split");

  // Feature standardization from the training split.
  std::vector<double> mean(dim, 0), stdv(dim, 0);
  for (int i : train_idx)
    for (int d = 0; d < dim; ++d) mean[d] += words[i][d];
  for (int d = 0; d < dim; ++d) mean[d] /= train_idx.size();
  for (int i : train_idx)
    for (int d = 0; d < dim; ++d) {
      double x = words[i][d] - mean[d];
      stdv[d] += x * x;
    }
  for (int d = 0; d < dim; ++d) stdv[d] = std::sqrt(stdv[d] / train_idx.size()) + 1e-8;

  double y_mean = 0, y_std = 1;
  if (!classification) {
    for (int i : train_idx) y_mean += labels[i];
    y_mean /= train_idx.size();
    double v = 0;
    for (int i : train_idx) v += (labels[i] - y_mean) * (labels[i] - y_mean);
    y_std = std::sqrt(v / train_idx.size()) + 1e-12;
  }

  std::vector<double> w(dim, 0);
  double bias = 0;
  std::vector<double> mw(dim, 0), vw(dim, 0);
  double mb = 0, vb = 0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long t = 0;
  auto feature = [&](int i, int d) { return (words[i][d] - mean[d]) / stdv[d]; };

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<double> gw(dim, 0);
    double gb = 0;
    for (int i : train_idx) {
      double z = bias;
      for (int d = 0; d < dim; ++d) z += w[d] * feature(i, d);
      double err;
      if (classification) {
        double p = 1.0 / (1.0 + std::exp(-z));
        err = p - labels[i];
      } else {
        err = z - (labels[i] - y_mean) / y_std;
      }
      for (int d = 0; d < dim; ++d) gw[d] += err * feature(i, d);
      gb += err;
    }
    double inv = 1.0 / train_idx.size();
    ++t;
    double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (int d = 0; d < dim; ++d) {
      double g = gw[d] * inv;
      mw[d] = b1 * mw[d] + (1 - b1) * g;
      vw[d] = b2 * vw[d] + (1 - b2) * g * g;
      w[d] -= lr * (mw[d] / c1) / (std::sqrt(vw[d] / c2) + eps);
    }
    double g = gb * inv;
    mb = b1 * mb + (1 - b1) * g;
    vb = b2 * vb + (1 - b2) * g * g;
    bias -= lr * (mb / c1) / (std::sqrt(vb / c2) + eps);
  }

  ProbeResult res;
  res.classification = classification;
  if (classification) {
    int correct = 0;
    for (int i : test_idx) {
      double z = bias;
      for (int d = 0; d < dim; ++d) z += w[d] * feature(i, d);
      int pred = z > 0 ? 1 : 0;
      if (pred == static_cast<int>(labels[i])) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / test_idx.size();
  } else {
    double abs_err = 0;
    for (int i : test_idx) {
      double z = bias;
      for (int d = 0; d < dim; ++d) z += w[d] * feature(i, d);
      double pred = z * y_std + y_mean;
      abs_err += std::abs(pred - labels[i]);
    }
    res.mae = abs_err / test_idx.size();
  }
  return res;
}

}  // namespace gw::train

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gw/model.hpp"

namespace gw::train {

struct TrainConfig {
  int batch_size = 32;
  long total_steps = 2000;
  long warmup_steps = 100;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  bool shuffle_codebook = true;  // per-example encoder codebook permutation
  bool conditions = false;       // property tokens + fixed scaffold input
  double early_stop_total = 0;   // stop when batch total loss drops below (0 = off)
  int log_every = 50;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (total_steps < 1) throw ValidationError("total steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
      throw ValidationError("warmup must be shorter than total steps");
  }
};

// Computable graph properties used as generation conditions.
struct GraphProperties {
  double atoms = 0;
  double bonds = 0;
  double rings = 0;  // cyclomatic count for a connected graph
};
GraphProperties graph_properties(const chem::MolecularGraph& g);

struct Example {
  chem::MolecularGraph graph;
  ftseq::FTSeq seq;
  GraphProperties props;
};

struct Corpus {
  std::vector<Example> examples;
  GraphProperties prop_mean;
  GraphProperties prop_std;

  int size() const { return static_cast<int>(examples.size()); }
};

// Tokenizes every graph and fixes the condition normalization statistics.
Corpus prepare_corpus(const std::vector<chem::MolecularGraph>& graphs,
                      const vocab::BondDict& bonds);

// Bundled desk corpus: random valid molecules.
std::vector<chem::MolecularGraph> random_corpus(int count, std::uint64_t seed,
                                                const chem::RandomMolOptions& opt = {});

struct BatchEntry {
  int example = 0;
  std::uint64_t perm_seed = 0;  // encoder codebook shuffle seed
};

struct Batch {
  std::vector<BatchEntry> entries;
  int max_seq_len = 0;  // padding target across the batch
};

// Deterministic stream of batches for one epoch: seeded example order and a
// fresh permutation seed per example per epoch. Examples whose sequences
// exceed the encoder context are skipped (counted in `skipped`).
std::vector<Batch> make_batches(const Corpus& corpus, const TrainConfig& cfg,
                                const model::EncoderConfig& enc, long epoch, int* skipped);

struct StepStats {
  double l_token = 0;
  double l_attach = 0;
  double total = 0;
};

// Forward (encoder -> words -> teacher-forced decoder), backward, AdamW step,
// codebook row renormalization. Throws on non-finite loss.
StepStats train_step(model::ModelF& m, const Corpus& corpus, const Batch& batch,
                     const TrainConfig& cfg, nn::AdamW<float>& opt, double lr);

// Loss evaluation without the optimizer update (shared by tests).
StepStats eval_losses(model::ModelF& m, const Corpus& corpus, const Batch& batch,
                      const TrainConfig& cfg);

struct TrainLogRow {
  long step = 0;
  double lr = 0;
  double l_token = 0;
  double l_attach = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  long steps_run = 0;
  int skipped_examples = 0;
};

// Full pretraining loop; `log_stream` (optional) receives tab-separated rows
// "step lr l_token l_attach".
TrainResult train(model::ModelF& m, const Corpus& corpus, const TrainConfig& cfg,
                  std::ostream* log_stream = nullptr);

// --- checkpoints -----------------------------------------------------------
// Layout (little endian): magic "GWGT", u32 version, u32 config length,
// config text (key=value lines), u32 record count, then per parameter:
// u32 name length, name bytes, u32 ndim, u32 dims[ndim], f32 payload.

struct CheckpointExtras {
  // Condition normalization statistics, persisted for conditional models.
  GraphProperties prop_mean;
  GraphProperties prop_std;
};

void save_checkpoint(model::ModelF& m, const std::string& path,
                     const CheckpointExtras& extras = {});

struct LoadedModel {
  model::ModelF model;
  CheckpointExtras extras;
};
LoadedModel load_checkpoint(const std::string& path);

// --- linear probe ----------------------------------------------------------

struct ProbeResult {
  bool classification = false;
  double accuracy = 0;  // held-out accuracy (classification)
  double mae = 0;       // held-out MAE (regression)
};

// Trains only a linear head on frozen word vectors; stratified 80/20 split.
// Classification expects binary labels {0,1}; constant labels are an error.
ProbeResult linear_probe(const std::vector<std::vector<float>>& words,
                         const std::vector<double>& labels, bool classification, int epochs,
                         std::uint64_t seed);

}  // namespace gw::train

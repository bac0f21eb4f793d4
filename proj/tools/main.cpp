#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "gw/chem.hpp"
#include "gw/ftseq.hpp"
#include "gw/genlab.hpp"
#include "gw/model.hpp"
#include "gw/training.hpp"
#include "gw/vocab.hpp"

namespace {

using namespace gw;

struct ParsedCorpus {
  std::vector<chem::MolecularGraph> graphs;
  std::vector<std::string> smiles;
};

ParsedCorpus load_molecules(const std::string& path) {
  ParsedCorpus out;
  for (const chem::SmilesRecord& rec : chem::read_smiles_lines(path)) {
    try {
      out.graphs.push_back(chem::parse_smiles(rec.text));
      out.smiles.push_back(rec.text);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(rec.line_number) + ": " + e.what());
    }
  }
  if (out.graphs.empty()) throw ValidationError("no molecules in " + path);
  return out;
}

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw ValidationError("cannot write file: " + path);
  return file;
}

void echo_config(const CLI::App* sub) {
  std::ostringstream os;
  os << "config " << sub->get_name() << ":";
  for (const CLI::Option* opt : sub->get_options()) {
    std::string name = opt->get_name();
    if (name == "--help" || name.empty()) continue;
    std::string value;
    if (!opt->results().empty()) {
      for (const std::string& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else if (opt->get_expected_min() == 0) {
      value = opt->count() ? "true" : "false";
    } else {
      value = opt->get_default_str();
      if (value.empty()) value = "<unset>";
    }
    os << ' ' << name << '=' << value;
  }
  std::cerr << os.str() << '\n';
}

void write_generation_outputs(const std::vector<model::GenerateResult>& gens,
                              const std::string& out_path, const std::string& trace_path) {
  std::ofstream out_file;
  std::ostream& out = open_or_stdout(out_file, out_path);
  for (const model::GenerateResult& g : gens) {
    if (g.valid)
      out << chem::write_smiles(*g.graph) << '\n';
    else
      out << "# invalid: " << g.failure << '\n';
  }
  if (!trace_path.empty()) {
    std::ofstream trace(trace_path, std::ios::binary);
    if (!trace) throw ValidationError("cannot write file: " + trace_path);
    for (std::size_t i = 0; i < gens.size(); ++i) {
      trace << "# molecule " << i << (gens[i].valid ? "" : " (invalid)") << '\n';
      for (const model::GenTraceStep& s : gens[i].trace)
        trace << s.kind << '\t' << s.chosen << '\t' << s.place_case << '\t' << s.similarity
              << '\t' << s.class_width << '\n';
    }
  }
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw ValidationError("empty list: " + text);
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (double d : parse_double_list(text)) out.push_back(static_cast<int>(d));
  return out;
}

// Flat key=value config files. Values fill in before the user's flags, so
// explicit flags always win (every option takes the last occurrence).
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() < 2 || args[1].empty() || args[1][0] == '-') return args;

  std::string config_path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw ValidationError("cannot open config file: " + config_path);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(in, line)) {
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line is not key=value: " + line);
    std::string key = line.substr(first, eq - first);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      std::size_t a = s.find_first_not_of(" \t");
      std::size_t b = s.find_last_not_of(" \t\r");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    trim(key);
    trim(value);
    if (key.empty()) throw ValidationError("config line is not key=value: " + line);
    if (value == "true" || value == "yes") {
      injected.push_back("--" + key);
    } else if (value == "false" || value == "no") {
      // absent flag
    } else {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }

  std::vector<std::string> out;
  out.push_back(args[0]);
  out.push_back(args[1]);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"graphwords: lossless molecule<->sequence codec with a fixed-length latent "
               "word encoder and an edge-centric autoregressive decoder"};
  app.require_subcommand(1);
  std::string config_file;
  auto take_last = [](CLI::App* sub) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  };

  // ---- tokenize ----
  auto* c_tok = app.add_subcommand("tokenize", "dump flexible token sequences");
  take_last(c_tok);
  std::string tok_in, tok_bonds, tok_out;
  int tok_start = -1;
  c_tok->add_option("--in", tok_in, "SMILES line file")->required();
  c_tok->add_option("--bonds", tok_bonds, "bond dictionary (default: built from input)");
  c_tok->add_option("--out", tok_out, "output file (default stdout)");
  c_tok->add_option("--start", tok_start, "override start atom index")->capture_default_str();
  c_tok->add_option("--config", config_file, "key=value config file");

  // ---- roundtrip ----
  auto* c_rt = app.add_subcommand("roundtrip", "verify flatten/unflatten round trips");
  take_last(c_rt);
  std::string rt_in;
  int rt_random = 0, rt_max_atoms = 16;
  std::uint64_t rt_seed = 0;
  c_rt->add_option("--in", rt_in, "SMILES line file");
  c_rt->add_option("--random", rt_random, "use N random molecules instead of a file")
      ->capture_default_str();
  c_rt->add_option("--max-atoms", rt_max_atoms, "random molecule size cap")
      ->capture_default_str();
  c_rt->add_option("--seed", rt_seed, "random seed")->capture_default_str();
  c_rt->add_option("--config", config_file, "key=value config file");

  // ---- pretrain ----
  auto* c_pre = app.add_subcommand("pretrain", "train encoder+decoder on a corpus");
  take_last(c_pre);
  std::string pre_in, pre_out = "model.ckpt", pre_bonds = "bonds.txt", pre_log, pre_corpus_out;
  int pre_random = 0, pre_max_atoms = 12, pre_bond_cap = 4096;
  train::TrainConfig tc;
  model::ModelConfig mc;
  bool pre_no_shuffle = false, pre_conditions = false;
  c_pre->add_option("--in", pre_in, "SMILES corpus file");
  c_pre->add_option("--random-corpus", pre_random, "generate N random molecules as the corpus")
      ->capture_default_str();
  c_pre->add_option("--max-atoms", pre_max_atoms, "random corpus molecule size cap")
      ->capture_default_str();
  c_pre->add_option("--out", pre_out, "checkpoint output path")->capture_default_str();
  c_pre->add_option("--bonds-out", pre_bonds, "bond dictionary output path")
      ->capture_default_str();
  c_pre->add_option("--bond-cap", pre_bond_cap, "bond dictionary cap")->capture_default_str();
  c_pre->add_option("--corpus-out", pre_corpus_out, "write the training corpus as SMILES");
  c_pre->add_option("--log", pre_log, "training log file (tab-separated)");
  c_pre->add_option("--steps", tc.total_steps, "total optimizer steps")->capture_default_str();
  c_pre->add_option("--batch", tc.batch_size, "batch size")->capture_default_str();
  c_pre->add_option("--warmup", tc.warmup_steps, "warmup steps")->capture_default_str();
  c_pre->add_option("--lr-max", tc.lr_max, "peak learning rate")->capture_default_str();
  c_pre->add_option("--lr-min", tc.lr_min, "final learning rate")->capture_default_str();
  c_pre->add_option("--weight-decay", tc.weight_decay, "AdamW weight decay")
      ->capture_default_str();
  c_pre->add_option("--early-stop", tc.early_stop_total,
                    "stop when the batch loss drops below this value (0 = off)")
      ->capture_default_str();
  c_pre->add_option("--seed", tc.seed, "random seed")->capture_default_str();
  c_pre->add_option("--k", mc.encoder.word_count, "graph word count")->capture_default_str();
  c_pre->add_option("--dim", mc.encoder.dim, "hidden size")->capture_default_str();
  c_pre->add_option("--layers", mc.encoder.layers, "transformer layers per component")
      ->capture_default_str();
  c_pre->add_option("--heads", mc.encoder.heads, "attention heads")->capture_default_str();
  c_pre->add_option("--dp", mc.encoder.d_p, "slot vector dimension")->capture_default_str();
  c_pre->add_option("--m", mc.encoder.m, "position codebook slots")->capture_default_str();
  c_pre->add_option("--ffn", mc.encoder.ffn_mult, "feed-forward width multiplier")
      ->capture_default_str();
  c_pre->add_option("--eps", mc.decoder.place_threshold, "right-placement threshold")
      ->capture_default_str();
  c_pre->add_option("--max-blocks", mc.decoder.max_blocks, "generation block cap")
      ->capture_default_str();
  c_pre->add_flag("--no-shuffle", pre_no_shuffle, "disable per-example codebook shuffling");
  c_pre->add_flag("--conditions", pre_conditions,
                  "train with property condition tokens (atoms, bonds, rings)");
  c_pre->add_option("--config", config_file, "key=value config file");

  // ---- encode ----
  auto* c_enc = app.add_subcommand("encode", "encode molecules into graph words");
  take_last(c_enc);
  std::string enc_model, enc_bonds, enc_in, enc_out, enc_format = "binary";
  std::vector<double> enc_cond;
  c_enc->add_option("--model", enc_model, "checkpoint path")->required();
  c_enc->add_option("--bonds", enc_bonds, "bond dictionary path")->required();
  c_enc->add_option("--in", enc_in, "SMILES line file")->required();
  c_enc->add_option("--out", enc_out, "words output file")->required();
  c_enc->add_option("--format", enc_format, "binary|text")->capture_default_str();
  c_enc->add_option("--cond", enc_cond,
                    "raw condition values atoms,bonds,rings (conditional models)")
      ->expected(3);
  c_enc->add_option("--config", config_file, "key=value config file");

  // ---- generate ----
  auto* c_gen = app.add_subcommand("generate", "decode graph words into molecules");
  take_last(c_gen);
  std::string gen_model, gen_bonds, gen_words, gen_out, gen_trace;
  double gen_temp = 0;
  int gen_max_blocks = 0;
  std::uint64_t gen_seed = 0;
  c_gen->add_option("--model", gen_model, "checkpoint path")->required();
  c_gen->add_option("--bonds", gen_bonds, "bond dictionary path")->required();
  c_gen->add_option("--words", gen_words, "graph words file (binary or text)")->required();
  c_gen->add_option("--out", gen_out, "SMILES output (default stdout)");
  c_gen->add_option("--trace", gen_trace, "per-step trace file");
  c_gen->add_option("--temperature", gen_temp, "sampling temperature (0 = greedy)")
      ->capture_default_str();
  c_gen->add_option("--max-blocks", gen_max_blocks, "override generation block cap")
      ->capture_default_str();
  c_gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
  c_gen->add_option("--config", config_file, "key=value config file");

  // ---- sample ----
  auto* c_smp = app.add_subcommand("sample", "few-shot sampling around encoded molecules");
  take_last(c_smp);
  std::string smp_model, smp_bonds, smp_in, smp_out, smp_trace;
  double smp_s = 0.5;
  int smp_count = 100;
  std::uint64_t smp_seed = 0;
  c_smp->add_option("--model", smp_model, "checkpoint path")->required();
  c_smp->add_option("--bonds", smp_bonds, "bond dictionary path")->required();
  c_smp->add_option("--in", smp_in, "bank molecules (SMILES line file)")->required();
  c_smp->add_option("--s", smp_s, "mixture component variance")->capture_default_str();
  c_smp->add_option("--count", smp_count, "number of samples")->capture_default_str();
  c_smp->add_option("--out", smp_out, "SMILES output (default stdout)");
  c_smp->add_option("--trace", smp_trace, "per-step trace file");
  c_smp->add_option("--seed", smp_seed, "random seed")->capture_default_str();
  c_smp->add_option("--config", config_file, "key=value config file");

  // ---- latent ----
  auto* c_lat = app.add_subcommand("latent", "latent-space word operations");
  c_lat->require_subcommand(1);
  std::string lat_model, lat_bonds, lat_a, lat_b, lat_out;
  double lat_lambda = 0.5;
  std::string lat_alphas = "0,0.25,0.5,0.75,1";
  std::string lat_indices;
  auto add_lat_common = [&](CLI::App* s) {
    s->add_option("--model", lat_model, "checkpoint path")->required();
    s->add_option("--bonds", lat_bonds, "bond dictionary path")->required();
    s->add_option("--a", lat_a, "source molecule SMILES")->required();
    s->add_option("--b", lat_b, "target molecule SMILES")->required();
    s->add_option("--out", lat_out, "output file (default stdout)");
  };
  auto* c_mix = c_lat->add_subcommand("mix", "decode lambda*A + (1-lambda)*B");
  add_lat_common(c_mix);
  c_mix->add_option("--lambda", lat_lambda, "mixing weight on A")->capture_default_str();
  auto* c_interp = c_lat->add_subcommand("interp", "decode an interpolation path A -> B");
  add_lat_common(c_interp);
  c_interp->add_option("--alphas", lat_alphas, "comma-separated alphas in [0,1]")
      ->capture_default_str();
  auto* c_hyb = c_lat->add_subcommand("hybrid", "replace word rows of A with rows of B");
  add_lat_common(c_hyb);
  c_hyb->add_option("--indices", lat_indices, "comma-separated 1-based word rows")->required();

  // ---- metrics ----
  auto* c_met = app.add_subcommand("metrics", "generation metrics for a SMILES file");
  take_last(c_met);
  std::string met_gen, met_train, met_verbose;
  c_met->add_option("--generated", met_gen, "generated SMILES line file")->required();
  c_met->add_option("--train", met_train, "training-set SMILES line file")->required();
  c_met->add_option("--verbose", met_verbose, "per-molecule status file");
  c_met->add_option("--config", config_file, "key=value config file");

  // ---- consistency ----
  auto* c_con = app.add_subcommand("consistency", "permutation-consistency harness");
  take_last(c_con);
  std::string con_model, con_bonds, con_in;
  bool con_codec_only = false;
  int con_n = 16;
  std::uint64_t con_seed = 0;
  c_con->add_option("--in", con_in, "SMILES line file")->required();
  c_con->add_option("--model", con_model, "checkpoint path");
  c_con->add_option("--bonds", con_bonds, "bond dictionary path");
  c_con->add_flag("--codec-only", con_codec_only, "skip the model; test flatten/unflatten");
  c_con->add_option("--n", con_n, "permutations per molecule")->capture_default_str();
  c_con->add_option("--seed", con_seed, "random seed")->capture_default_str();
  c_con->add_option("--config", config_file, "key=value config file");

  // ---- probe ----
  auto* c_prb = app.add_subcommand("probe", "linear probe on frozen graph words");
  take_last(c_prb);
  std::string prb_model, prb_bonds, prb_in, prb_task = "cls";
  int prb_epochs = 200;
  std::uint64_t prb_seed = 0;
  c_prb->add_option("--model", prb_model, "checkpoint path")->required();
  c_prb->add_option("--bonds", prb_bonds, "bond dictionary path")->required();
  c_prb->add_option("--in", prb_in, "tab-separated file: SMILES<TAB>label")->required();
  c_prb->add_option("--task", prb_task, "cls|reg")->capture_default_str();
  c_prb->add_option("--epochs", prb_epochs, "probe training epochs")->capture_default_str();
  c_prb->add_option("--seed", prb_seed, "random seed")->capture_default_str();
  c_prb->add_option("--config", config_file, "key=value config file");

  std::vector<std::string> expanded = expand_config_args(argc, argv);
  std::vector<const char*> cargv;
  cargv.reserve(expanded.size());
  for (const std::string& s : expanded) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  CLI::App* active = app.get_subcommands().front();
  echo_config(active);

  // ------------------------------------------------------------------
  if (active == c_tok) {
    ParsedCorpus corpus = load_molecules(tok_in);
    vocab::BondDict bonds = tok_bonds.empty() ? vocab::BondDict::build(corpus.graphs)
                                              : vocab::BondDict::load(tok_bonds);
    std::ofstream file;
    std::ostream& out = open_or_stdout(file, tok_out);
    for (std::size_t i = 0; i < corpus.graphs.size(); ++i) {
      if (corpus.graphs.size() > 1) out << "# molecule " << i << '\t' << corpus.smiles[i] << '\n';
      const chem::MolecularGraph& g = corpus.graphs[i];
      int start = tok_start >= 0 ? tok_start : g.origin_first_atom.value_or(0);
      out << ftseq::dump_tokens(ftseq::flatten(g, start, bonds));
    }
    return 0;
  }

  if (active == c_rt) {
    std::vector<chem::MolecularGraph> graphs;
    if (rt_random > 0) {
      chem::RandomMolOptions opt;
      opt.max_atoms = rt_max_atoms;
      graphs = train::random_corpus(rt_random, rt_seed, opt);
    } else if (!rt_in.empty()) {
      graphs = load_molecules(rt_in).graphs;
    } else {
      throw ValidationError("roundtrip needs --in or --random");
    }
    vocab::BondDict bonds = vocab::BondDict::build(graphs);
    int ok = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      ftseq::FTSeq seq = ftseq::flatten(graphs[i], bonds);
      chem::MolecularGraph back = ftseq::unflatten(seq, bonds);
      if (chem::canonical_form(back) == chem::canonical_form(graphs[i]))
        ++ok;
      else
        std::cerr << "round trip mismatch at molecule " << i << '\n';
    }
    std::cout << ok << "/" << graphs.size() << " exact round trips\n";
    return 0;
  }

  if (active == c_pre) {
    std::vector<chem::MolecularGraph> graphs;
    if (pre_random > 0) {
      chem::RandomMolOptions opt;
      opt.max_atoms = pre_max_atoms;
      graphs = train::random_corpus(pre_random, tc.seed, opt);
    } else if (!pre_in.empty()) {
      graphs = load_molecules(pre_in).graphs;
    } else {
      throw ValidationError("pretrain needs --in or --random-corpus");
    }
    vocab::BondDict bonds = vocab::BondDict::build(graphs, pre_bond_cap);
    if (!pre_corpus_out.empty()) {
      std::ofstream corpus_file(pre_corpus_out, std::ios::binary);
      if (!corpus_file) throw ValidationError("cannot write file: " + pre_corpus_out);
      for (const chem::MolecularGraph& g : graphs)
        corpus_file << chem::write_smiles(g) << '\n';
    }
    tc.shuffle_codebook = !pre_no_shuffle;
    tc.conditions = pre_conditions;
    mc.encoder.n_conditions = pre_conditions ? 3 : 0;
    mc.decoder.dim = mc.encoder.dim;
    mc.decoder.layers = mc.encoder.layers;
    mc.decoder.heads = mc.encoder.heads;
    mc.decoder.d_p = mc.encoder.d_p;
    mc.decoder.m = mc.encoder.m;
    mc.decoder.ffn_mult = mc.encoder.ffn_mult;

    train::Corpus corpus = train::prepare_corpus(graphs, bonds);
    model::ModelF m(mc, bonds.size(), tc.seed);
    std::ofstream log_file;
    std::ostream* log_stream = nullptr;
    if (!pre_log.empty()) {
      log_file.open(pre_log, std::ios::binary);
      if (!log_file) throw ValidationError("cannot write file: " + pre_log);
      log_stream = &log_file;
    }
    train::TrainResult res = train::train(m, corpus, tc, log_stream);
    std::cerr << "trained " << res.steps_run << " steps (skipped " << res.skipped_examples
              << " oversized examples)\n";
    train::CheckpointExtras extras{corpus.prop_mean, corpus.prop_std};
    bonds.save(pre_bonds);
    train::save_checkpoint(m, pre_out, extras);
    std::cout << "model\t" << pre_out << "\tbonds\t" << pre_bonds << "\tsteps\t" << res.steps_run
              << '\n';
    return 0;
  }

  if (active == c_enc) {
    train::LoadedModel loaded = train::load_checkpoint(enc_model);
    vocab::BondDict bonds = vocab::BondDict::load(enc_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    ParsedCorpus corpus = load_molecules(enc_in);
    std::vector<model::Encoder<float>::Condition> conds;
    if (!enc_cond.empty()) {
      if (loaded.model.cfg.encoder.n_conditions != 3)
        throw ValidationError("--cond requires a conditional model");
      auto norm = [](double v, double mean, double std) {
        return static_cast<float>((v - mean) / (std > 0 ? std : 1.0));
      };
      conds = {{0, norm(enc_cond[0], loaded.extras.prop_mean.atoms,
                        loaded.extras.prop_std.atoms)},
               {1, norm(enc_cond[1], loaded.extras.prop_mean.bonds,
                        loaded.extras.prop_std.bonds)},
               {2, norm(enc_cond[2], loaded.extras.prop_mean.rings,
                        loaded.extras.prop_std.rings)}};
    }
    genlab::WordBank bank;
    bank.k = loaded.model.cfg.encoder.word_count;
    bank.dim = loaded.model.cfg.encoder.dim;
    for (const chem::MolecularGraph& g : corpus.graphs) {
      ftseq::FTSeq seq = ftseq::flatten(g, bonds);
      bank.entries.push_back(loaded.model.encoder.encode_array(seq, {}, conds));
      bank.source_canonical.push_back(chem::canonical_form(g));
    }
    if (enc_format != "binary" && enc_format != "text")
      throw ValidationError("--format must be binary or text");
    genlab::save_words(enc_out, bank, enc_format == "binary");
    std::cerr << "encoded " << bank.size() << " molecules\n";
    return 0;
  }

  if (active == c_gen) {
    train::LoadedModel loaded = train::load_checkpoint(gen_model);
    vocab::BondDict bonds = vocab::BondDict::load(gen_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    genlab::WordBank bank = genlab::load_words(gen_words, loaded.model.cfg.encoder.word_count,
                                               loaded.model.cfg.encoder.dim);
    std::mt19937_64 rng(gen_seed);
    model::GenerateOptions opt;
    opt.temperature = gen_temp;
    opt.rng = &rng;
    if (gen_max_blocks > 0) opt.max_blocks = gen_max_blocks;
    std::vector<model::GenerateResult> gens;
    for (const auto& words : bank.entries)
      gens.push_back(loaded.model.decoder.generate(words, bonds, opt));
    write_generation_outputs(gens, gen_out, gen_trace);
    return 0;
  }

  if (active == c_smp) {
    train::LoadedModel loaded = train::load_checkpoint(smp_model);
    vocab::BondDict bonds = vocab::BondDict::load(smp_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    ParsedCorpus corpus = load_molecules(smp_in);
    genlab::WordBank bank = genlab::encode_bank(loaded.model, bonds, corpus.graphs);
    genlab::SampleOutcome outcome =
        genlab::fewshot_sample(loaded.model, bonds, bank, smp_s, smp_count, smp_seed);
    write_generation_outputs(outcome.generations, smp_out, smp_trace);
    std::cout << outcome.metrics.report_line() << '\n';
    return 0;
  }

  if (c_lat->parsed()) {
    CLI::App* lat_active = c_lat->get_subcommands().front();
    train::LoadedModel loaded = train::load_checkpoint(lat_model);
    vocab::BondDict bonds = vocab::BondDict::load(lat_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    auto encode_one = [&](const std::string& smiles) {
      chem::MolecularGraph g = chem::parse_smiles(smiles);
      return loaded.model.encoder.encode_array(ftseq::flatten(g, bonds));
    };
    nn::Array<float> wa = encode_one(lat_a);
    nn::Array<float> wb = encode_one(lat_b);
    std::ofstream file;
    std::ostream& out = open_or_stdout(file, lat_out);
    auto decode_to = [&](const nn::Array<float>& words, const std::string& tag) {
      model::GenerateResult gen = loaded.model.decoder.generate(words, bonds);
      out << tag << '\t'
          << (gen.valid ? chem::write_smiles(*gen.graph) : "# invalid: " + gen.failure) << '\n';
    };
    if (lat_active == c_mix) {
      decode_to(genlab::mixup(wa, wb, lat_lambda), "lambda=" + std::to_string(lat_lambda));
    } else if (lat_active == c_interp) {
      std::vector<double> alphas = parse_double_list(lat_alphas);
      std::vector<nn::Array<float>> path = genlab::interpolate(wa, wb, alphas);
      for (std::size_t i = 0; i < path.size(); ++i)
        decode_to(path[i], "alpha=" + std::to_string(alphas[i]));
    } else {
      std::vector<int> idx = parse_int_list(lat_indices);
      for (int& i : idx) {
        if (i < 1 || i > loaded.model.cfg.encoder.word_count)
          throw ValidationError("hybrid index out of range: " + std::to_string(i));
        i -= 1;
      }
      decode_to(genlab::hybridize(wa, wb, idx), "indices=" + lat_indices);
    }
    return 0;
  }

  if (active == c_met) {
    std::vector<std::optional<chem::MolecularGraph>> generated;
    std::vector<std::string> status;
    // "# invalid:" markers written by generate/sample count as failed samples
    std::ifstream gen_file(met_gen);
    if (!gen_file) throw ValidationError("cannot open file: " + met_gen);
    std::string line;
    while (std::getline(gen_file, line)) {
      std::size_t first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      std::string text = line.substr(first);
      if (text.rfind("# invalid", 0) == 0) {
        generated.emplace_back(std::nullopt);
        status.push_back("invalid: marked by the generator");
        continue;
      }
      if (text[0] == '#') continue;
      try {
        generated.emplace_back(chem::parse_smiles(text));
        status.push_back("valid");
      } catch (const ValidationError& e) {
        generated.emplace_back(std::nullopt);
        status.push_back(std::string("invalid: ") + e.what());
      }
    }
    if (generated.empty()) throw ValidationError("no molecules in " + met_gen);
    ParsedCorpus train_corpus = load_molecules(met_train);
    genlab::GenSetMetrics m =
        genlab::compute_metrics(generated, genlab::canonical_set(train_corpus.graphs));
    std::cout << m.report_line() << '\n';
    if (!met_verbose.empty()) {
      std::ofstream v(met_verbose, std::ios::binary);
      if (!v) throw ValidationError("cannot write file: " + met_verbose);
      for (std::size_t i = 0; i < status.size(); ++i) v << i << '\t' << status[i] << '\n';
    }
    return 0;
  }

  if (active == c_con) {
    ParsedCorpus corpus = load_molecules(con_in);
    if (con_codec_only) {
      vocab::BondDict bonds = vocab::BondDict::build(corpus.graphs);
      genlab::ConsistencyReport rep =
          genlab::permutation_consistency(nullptr, bonds, corpus.graphs, con_n, con_seed);
      std::cout << rep.report_line() << '\n';
      return 0;
    }
    if (con_model.empty() || con_bonds.empty())
      throw ValidationError("consistency needs --codec-only or --model and --bonds");
    train::LoadedModel loaded = train::load_checkpoint(con_model);
    vocab::BondDict bonds = vocab::BondDict::load(con_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    genlab::ConsistencyReport rep =
        genlab::permutation_consistency(&loaded.model, bonds, corpus.graphs, con_n, con_seed);
    std::cout << rep.report_line() << '\n';
    return 0;
  }

  if (active == c_prb) {
    train::LoadedModel loaded = train::load_checkpoint(prb_model);
    vocab::BondDict bonds = vocab::BondDict::load(prb_bonds);
    if (bonds.size() != loaded.model.cfg.n_bonds)
      throw ValidationError("bond dictionary does not match the checkpoint");
    if (prb_task != "cls" && prb_task != "reg")
      throw ValidationError("--task must be cls or reg");
    std::vector<std::vector<float>> words;
    std::vector<double> labels;
    for (const chem::SmilesRecord& rec : chem::read_smiles_lines(prb_in)) {
      std::size_t tab = rec.text.find('\t');
      if (tab == std::string::npos)
        throw ValidationError(prb_in + ":" + std::to_string(rec.line_number) +
                              ": expected SMILES<TAB>label");
      chem::MolecularGraph g = chem::parse_smiles(rec.text.substr(0, tab));
      labels.push_back(std::stod(rec.text.substr(tab + 1)));
      nn::Array<float> w =
          loaded.model.encoder.encode_array(ftseq::flatten(g, bonds));
      words.emplace_back(w.v.begin(), w.v.end());
    }
    train::ProbeResult res =
        train::linear_probe(words, labels, prb_task == "cls", prb_epochs, prb_seed);
    if (res.classification)
      std::cout << "probe_accuracy\t" << res.accuracy << "\tn\t" << words.size() << '\n';
    else
      std::cout << "probe_mae\t" << res.mae << "\tn\t" << words.size() << '\n';
    return 0;
  }

  throw std::runtime_error("unhandled subcommand");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gw::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
}

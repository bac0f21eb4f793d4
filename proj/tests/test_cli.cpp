// End-to-end CLI checks: every subcommand once, exit codes, config files.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
  if (!ok) ++failures;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) {
  int rc = std::system(cmd.c_str());
  return rc < 0 ? rc : WEXITSTATUS(rc);
}

}  // namespace

int main() {
  const std::string cli = GW_CLI_PATH;
  const std::string dir = "cli_e2e_tmp";
  if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) return 1;
  auto in = [&](const std::string& f) { return dir + "/" + f; };
  auto quiet = [&](const std::string& args, const std::string& out_file = "") {
    std::string redirect =
        out_file.empty() ? " >" + dir + "/stdout.txt" : " >" + dir + "/" + out_file;
    return run(cli + " " + args + redirect + " 2>" + dir + "/stderr.txt");
  };

  {
    std::ofstream f(in("mols.smi"));
    f << "# demo molecules\nCCO\nCC(=O)NC\nc1ccccc1\nCCC\nCCN\nCCCl\n";
    std::ofstream bad(in("bad.smi"));
    bad << "C(\n";
    std::ofstream cfg(in("train.cfg"));
    cfg << "steps=40\nbatch=4\ndim=16\nlayers=1\nheads=2\ndp=8\nm=12\nffn=2\nwarmup=5\n";
  }

  for (const char* sub : {"tokenize", "roundtrip", "pretrain", "encode", "generate", "sample",
                          "latent", "metrics", "consistency", "probe"})
    check(quiet(std::string(sub) + " --help") == 0, std::string(sub) + " --help");

  check(quiet("tokenize --in " + in("mols.smi") + " --out " + in("tok.tsv")) == 0,
        "tokenize runs");
  check(slurp(in("tok.tsv")).find("node\t5") != std::string::npos, "token dump content");

  check(quiet("tokenize --in " + in("bad.smi")) == 1, "parse error maps to exit 1");
  check(quiet("tokenize --in " + in("missing.smi")) == 1, "missing file maps to exit 1");
  check(quiet("tokenize") != 0, "missing required flag rejected");
  check(quiet("tokenize --in " + in("mols.smi") + " --bogus-flag 1") != 0,
        "unknown flag rejected");

  check(quiet("roundtrip --random 50 --seed 3") == 0, "roundtrip random corpus");
  check(slurp(dir + "/stdout.txt").find("50/50") != std::string::npos, "roundtrip reports 50/50");
  check(quiet("roundtrip --in " + in("mols.smi")) == 0, "roundtrip file corpus");

  // config file supplies the training hyperparameters; flags still win
  check(quiet("pretrain --random-corpus 8 --max-atoms 6 --seed 5 --config " + in("train.cfg") +
              " --steps 30 --out " + in("m.ckpt") + " --bonds-out " + in("b.txt") +
              " --corpus-out " + in("corpus.smi") + " --log " + in("log.tsv")) == 0,
        "pretrain with config file");
  {
    std::string log = slurp(in("log.tsv"));
    // 30 steps from the flag override (config said 40): final row starts at 29
    check(log.find("29\t") != std::string::npos && log.find("39\t") == std::string::npos,
          "command-line flags override the config file");
  }
  check(!slurp(in("m.ckpt")).empty() && slurp(in("m.ckpt")).substr(0, 4) == "GWGT",
        "checkpoint written with magic");
  check(!slurp(in("b.txt")).empty(), "bond dictionary written");

  std::string model_args = " --model " + in("m.ckpt") + " --bonds " + in("b.txt");
  check(quiet("encode" + model_args + " --in " + in("corpus.smi") + " --out " + in("w.bin") +
              " --format binary") == 0,
        "encode binary");
  check(slurp(in("w.bin")).substr(0, 4) == "GWWD", "binary words magic");
  check(quiet("encode" + model_args + " --in " + in("corpus.smi") + " --out " + in("w.txt") +
              " --format text") == 0,
        "encode text");

  check(quiet("encode" + model_args + " --in " + in("corpus.smi") + " --out " + in("wc.bin") +
              " --cond 5 4 0") == 1,
        "condition values rejected for an unconditional model");

  check(quiet("generate" + model_args + " --words " + in("w.bin") + " --out " + in("gen.smi") +
              " --trace " + in("trace.tsv")) == 0,
        "generate from binary words");
  check(quiet("generate" + model_args + " --words " + in("w.txt") + " --out " +
              in("gen_txt.smi")) == 0,
        "generate from text words");
  check(slurp(in("gen.smi")) == slurp(in("gen_txt.smi")), "text and binary words decode alike");
  check(!slurp(in("trace.tsv")).empty(), "trace sidecar written");

  check(quiet("sample" + model_args + " --in " + in("corpus.smi") +
              " --s 0.5 --count 20 --seed 2 --out " + in("samples.smi")) == 0,
        "sample");
  check(slurp(dir + "/stdout.txt").find("validity\t") != std::string::npos,
        "sample prints a metrics line");

  check(quiet("latent mix" + model_args + " --a CCO --b CCC --lambda 0.5 --out " +
              in("mix.tsv")) == 0,
        "latent mix");
  check(quiet("latent interp" + model_args + " --a CCO --b CCC --alphas 0,0.5,1 --out " +
              in("interp.tsv")) == 0,
        "latent interp");
  {
    std::string body = slurp(in("interp.tsv"));
    check(body.find("alpha=0.000000") != std::string::npos &&
              body.find("alpha=1.000000") != std::string::npos,
          "interp output annotated");
  }
  check(quiet("latent hybrid" + model_args + " --a CCO --b CCC --indices 1 --out " +
              in("hyb.tsv")) == 0,
        "latent hybrid");
  check(quiet("latent hybrid" + model_args + " --a CCO --b CCC --indices 2") == 1,
        "hybrid index beyond k rejected");

  check(quiet("metrics --generated " + in("gen.smi") + " --train " + in("corpus.smi") +
              " --verbose " + in("verbose.tsv")) == 0,
        "metrics");
  check(slurp(dir + "/stdout.txt").find("intdiv1") != std::string::npos, "metrics line");
  check(!slurp(in("verbose.tsv")).empty(), "metrics verbose file");

  check(quiet("consistency --codec-only --in " + in("mols.smi") + " --n 8 --seed 1") == 0,
        "consistency codec-only");
  check(slurp(dir + "/stdout.txt").find("avg_consistency\t1") != std::string::npos,
        "codec-only reports 100%");
  check(quiet("consistency" + model_args + " --in " + in("corpus.smi") + " --n 4 --seed 1") ==
            0,
        "consistency with model");

  // labels derived from the training corpus keep every bond in-dictionary
  {
    std::ifstream corpus_file(in("corpus.smi"));
    std::ofstream labeled(in("labeled.tsv"));
    std::string line;
    int i = 0;
    while (std::getline(corpus_file, line))
      labeled << line << '\t' << (i++ % 2) << '\n';
  }
  check(quiet("probe" + model_args + " --in " + in("labeled.tsv") +
              " --task cls --epochs 50 --seed 2") == 0,
        "probe classification");
  check(slurp(dir + "/stdout.txt").find("probe_accuracy") != std::string::npos,
        "probe prints accuracy");
  check(quiet("probe" + model_args + " --in " + in("labeled.tsv") +
              " --task reg --epochs 50 --seed 2") == 0,
        "probe regression");

  // stale bond dictionary must be rejected against a fresh checkpoint
  {
    std::ofstream f(in("other.smi"));
    f << "CCO\nCC=O\nCCSC\nCC#N\nOCO\nCCCCCC\n";
  }
  check(quiet("pretrain --in " + in("other.smi") + " --steps 5 --batch 2 --dim 16 --layers 1 "
              "--heads 2 --dp 8 --m 12 --ffn 2 --warmup 1 --seed 1 --out " +
              in("m2.ckpt") + " --bonds-out " + in("b2.txt")) == 0,
        "pretrain on a SMILES file");
  check(quiet("encode --model " + in("m2.ckpt") + " --bonds " + in("b.txt") + " --in " +
              in("other.smi") + " --out " + in("w2.bin")) == 1,
        "mismatched bond dictionary rejected");

  (void)!std::system(("rm -rf " + dir).c_str());
  if (failures == 0) std::printf("cli end-to-end: all checks passed\n");
  return failures;
}

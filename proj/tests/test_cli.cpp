// End-to-end CLI checks: exit codes, file outputs, determinism, config
// round-trip. Invoked as: test_cli <mllm-binary> <toy-corpus-dir>.
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mllm/config.hpp"
#include "mllm/errors.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
  if (!ok) {
    ++failures;
    std::cerr << "FAILED: " << what << "\n";
  }
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& cmd) {
  const std::string out_file = "/tmp/mllm_cli_out.txt";
  const int rc = std::system((cmd + " > " + out_file + " 2>&1").c_str());
  RunResult res;
  res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream f(out_file);
  std::ostringstream os;
  os << f.rdbuf();
  res.output = os.str();
  return res;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: test_cli <mllm-binary> <toy-dir>\n";
    return 2;
  }
  const std::string mllm = argv[1];
  const fs::path toys = argv[2];
  const fs::path work = fs::temp_directory_path() / "mllm_cli_test";
  fs::remove_all(work);
  fs::create_directories(work);

  // Small config over two bundled toy languages.
  const fs::path cfg_path = work / "run.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "[data]\n";
    cfg << "languages = alpha beta\n";
    cfg << "corpus.alpha.train = " << (toys / "alpha.train.txt").string()
        << "\n";
    cfg << "corpus.alpha.test = " << (toys / "alpha.test.txt").string()
        << "\n";
    cfg << "corpus.beta.train = " << (toys / "beta.train.txt").string()
        << "\n";
    cfg << "corpus.beta.test = " << (toys / "beta.test.txt").string() << "\n";
    cfg << "threshold = 4000\n";
    cfg << "[model]\nembedding = 12\nhidden = 16\n";
    cfg << "[train]\nbatch_size = 4\nbase_length = 12\nmax_epochs = 2\n";
    cfg << "learning_rate = 2\nseed = 11\n";
    cfg << "[output]\ndir = " << (work / "out").string() << "\n";
  }

  // prepare: success, Table-1-style printout, packs on disk.
  auto prep = run(mllm + " --config " + cfg_path.string() + " prepare");
  check(prep.exit_code == 0, "prepare exits 0: " + prep.output);
  check(prep.output.find("Train") != std::string::npos &&
            prep.output.find("Valid.") != std::string::npos &&
            prep.output.find("Test") != std::string::npos,
        "prepare prints the split table");
  check(fs::exists(work / "out/packs/alpha__4K/vocab.txt"),
        "prepare wrote alpha pack");
  check(fs::exists(work / "out/effective.cfg"), "effective config dumped");

  // prepare again without --force refuses with exit 2.
  auto prep2 = run(mllm + " --config " + cfg_path.string() + " prepare");
  check(prep2.exit_code == 2, "second prepare refuses with exit 2");
  auto prep3 = run(mllm + " --config " + cfg_path.string() +
                   " --force prepare");
  check(prep3.exit_code == 0, "prepare --force overwrites");

  // train: monolingual variant on one language.
  auto train1 = run(mllm + " --config " + cfg_path.string() +
                    " train --variant mono-awd --languages alpha");
  check(train1.exit_code == 0, "train exits 0: " + train1.output);
  check(fs::exists(work / "out/best.ckpt"), "train wrote best.ckpt");
  check(fs::exists(work / "out/train.log"), "train wrote train.log");
  const std::string log1 = read_file(work / "out/train.log");

  // train again without --force refuses; with --force reruns identically.
  auto train2 = run(mllm + " --config " + cfg_path.string() +
                    " train --variant mono-awd --languages alpha");
  check(train2.exit_code == 2, "second train refuses with exit 2");
  auto train3 = run(mllm + " --config " + cfg_path.string() +
                    " --force train --variant mono-awd --languages alpha");
  check(train3.exit_code == 0, "train --force reruns");
  check(read_file(work / "out/train.log") == log1,
        "identical seed produces identical training log");

  // --max-epochs 0 is refused as a configuration error.
  auto train0 = run(mllm + " --config " + cfg_path.string() +
                    " --force train --variant mono-awd --languages alpha" +
                    " --max-epochs 0");
  check(train0.exit_code == 1, "--max-epochs 0 exits 1");

  // mono variant with several languages is a usage error.
  auto multi_bad = run(mllm + " --config " + cfg_path.string() +
                       " --force train --variant mono-awd");
  check(multi_bad.exit_code == 1, "mono variant with two languages exits 1");

  // eval: prints a two-decimal perplexity, exit 0.
  auto eval1 = run(mllm + " eval --checkpoint " +
                   (work / "out/best.ckpt").string() + " --pack " +
                   (work / "out/packs/alpha__4K").string() + " --split test");
  check(eval1.exit_code == 0, "eval exits 0: " + eval1.output);
  {
    double v = 0.0;
    int dot_decimals = -1;
    std::istringstream is(eval1.output);
    is >> v;
    const auto dot = eval1.output.find('.');
    if (dot != std::string::npos) {
      size_t end = dot + 1;
      while (end < eval1.output.size() && isdigit(eval1.output[end])) ++end;
      dot_decimals = static_cast<int>(end - dot - 1);
    }
    check(v > 1.0, "eval prints a perplexity > 1");
    check(dot_decimals == 2, "eval formats two decimals");
  }

  // eval against an incompatible pack (other language) exits 3.
  auto eval_bad = run(mllm + " eval --checkpoint " +
                      (work / "out/best.ckpt").string() + " --pack " +
                      (work / "out/packs/beta__4K").string());
  check(eval_bad.exit_code == 3, "eval with unknown language exits 3");

  // eval across vocabularies of different size exits 3: retrain checkpoint
  // against a re-prepared pack with a different threshold.
  {
    std::ofstream cfg(work / "thr.cfg");
    cfg << "[data]\nlanguages = alpha\n";
    cfg << "corpus.alpha.train = " << (toys / "alpha.train.txt").string()
        << "\n";
    cfg << "corpus.alpha.test = " << (toys / "alpha.test.txt").string()
        << "\n";
    cfg << "threshold = 150\n";
    cfg << "[model]\nembedding = 12\nhidden = 16\n";
    cfg << "[output]\ndir = " << (work / "out2").string() << "\n";
  }
  run(mllm + " --config " + (work / "thr.cfg").string() + " prepare");
  auto eval_vocab = run(mllm + " eval --checkpoint " +
                        (work / "out/best.ckpt").string() + " --pack " +
                        (work / "out2/packs/alpha__150").string());
  check(eval_vocab.exit_code == 3, "vocabulary size mismatch exits 3");
  check(eval_vocab.output.find("vocabulary size mismatch") !=
            std::string::npos,
        "mismatch message names the problem");

  // eval --split valid works.
  auto eval_valid = run(mllm + " eval --checkpoint " +
                        (work / "out/best.ckpt").string() + " --pack " +
                        (work / "out/packs/alpha__4K").string() +
                        " --split valid");
  check(eval_valid.exit_code == 0, "eval --split valid exits 0");

  // usage errors: unknown subcommand / missing required option.
  check(run(mllm + " frobnicate").exit_code == 1, "unknown command exits 1");
  check(run(mllm + " eval").exit_code == 1, "missing required flags exits 1");

  // unknown config key is rejected.
  {
    std::ofstream bad(work / "bad.cfg");
    bad << "[train]\nbatch_sizes = 4\n";
  }
  auto badrun = run(mllm + " --config " + (work / "bad.cfg").string() +
                    " prepare");
  check(badrun.exit_code == 1, "unknown config key exits 1");
  check(badrun.output.find("unknown key") != std::string::npos,
        "unknown key named in the error");

  // Config round-trip: dump parses back to an identical RunConfig.
  {
    mllm::RunConfig parsed = mllm::load_run_config(cfg_path);
    const std::string dumped = mllm::dump_run_config(parsed);
    mllm::RunConfig reparsed = mllm::parse_run_config(dumped);
    check(parsed == reparsed, "config dump round-trips");
    check(mllm::dump_run_config(reparsed) == dumped,
          "config dump is a fixed point");
  }

  // sweep: tiny smoke (one language, one variant, one threshold).
  {
    std::ofstream cfg(work / "sweep.cfg");
    cfg << "[data]\nlanguages = alpha\n";
    cfg << "corpus.alpha.train = " << (toys / "alpha.train.txt").string()
        << "\n";
    cfg << "corpus.alpha.test = " << (toys / "alpha.test.txt").string()
        << "\n";
    cfg << "[model]\nembedding = 8\nhidden = 10\n";
    cfg << "[train]\nbatch_size = 4\nbase_length = 10\nmax_epochs = 1\n";
    cfg << "learning_rate = 2\nseed = 5\n";
    cfg << "[sweep]\nvariants = mono-awd\nthresholds = 3000\nseeds = 1\n";
    cfg << "jobs = 1\n";
    cfg << "[output]\ndir = " << (work / "sweepout").string() << "\n";
  }
  auto sweep1 = run(mllm + " --config " + (work / "sweep.cfg").string() +
                    " sweep");
  check(sweep1.exit_code == 0, "sweep exits 0: " + sweep1.output);
  check(fs::exists(work / "sweepout/sweep/report.csv"), "sweep wrote CSV");
  check(sweep1.output.find("language: alpha") != std::string::npos,
        "sweep prints the text table");

  // rerun without --resume refuses; --resume skips the completed cell.
  auto sweep2 = run(mllm + " --config " + (work / "sweep.cfg").string() +
                    " sweep");
  check(sweep2.exit_code == 2, "sweep rerun refuses with exit 2");
  auto sweep3 = run(mllm + " --config " + (work / "sweep.cfg").string() +
                    " --resume sweep");
  check(sweep3.exit_code == 0, "sweep --resume exits 0");

  if (failures == 0) {
    std::cout << "test_cli: all checks passed\n";
    fs::remove_all(work);
    return 0;
  }
  std::cout << "test_cli: " << failures << " checks failed\n";
  return 1;
}

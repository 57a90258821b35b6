#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "mllm/config.hpp"
#include "mllm/errors.hpp"
#include "mllm/evaluator.hpp"

namespace fs = std::filesystem;
using namespace mllm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRefuseOverwrite = 2;
constexpr int kExitIncompatible = 3;
constexpr int kExitTrainingFailure = 4;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  bool resume = false;
};

RunConfig load_effective(const GlobalArgs& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = load_run_config(g.config_path);
  if (g.seed_set) cfg.train.config.seed = g.seed;
  if (!g.out_dir.empty()) cfg.output.dir = g.out_dir;
  return cfg;
}

void dump_effective(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "effective.cfg");
  f << dump_run_config(cfg);
}

int64_t threshold_for(const RunConfig& cfg, const std::string& lang) {
  auto it = cfg.data.language_thresholds.find(lang);
  return it == cfg.data.language_thresholds.end() ? cfg.data.threshold
                                                  : it->second;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string pack_dir_label(const std::string& lang, int64_t thr) {
  return lang + "__" + format_threshold(thr);
}

int cmd_prepare(const GlobalArgs& g) {
  RunConfig cfg = load_effective(g);
  validate_data_paths(cfg);
  const fs::path out = cfg.output.dir;
  const fs::path packs_dir = out / "packs";

  std::vector<fs::path> targets;
  for (const auto& lang : cfg.data.languages)
    targets.push_back(packs_dir / pack_dir_label(lang, threshold_for(cfg, lang)));
  for (const auto& dir : targets) {
    if (fs::exists(dir / "meta") && !g.force) {
      std::cerr << "pack " << dir.string()
                << " already exists; pass --force to overwrite\n";
      return kExitRefuseOverwrite;
    }
  }

  dump_effective(cfg, out);
  std::vector<LanguagePack> packs;
  for (const auto& lang : cfg.data.languages) {
    const auto& paths = cfg.data.corpora.at(lang);
    auto pack = prepare_pack(lang, read_file(paths.first),
                             read_file(paths.second),
                             threshold_for(cfg, lang), cfg.train.config.seed);
    save_pack(pack, packs_dir / pack_dir_label(lang, pack.threshold));
    packs.push_back(std::move(pack));
  }

  // Word counts per split, languages as columns.
  std::cout << std::left << std::setw(8) << "";
  for (const auto& p : packs)
    std::cout << std::right << std::setw(12) << p.language;
  std::cout << "\n" << std::left << std::setw(8) << "Train";
  for (const auto& p : packs)
    std::cout << std::right << std::setw(12) << p.train_words;
  std::cout << "\n" << std::left << std::setw(8) << "Valid.";
  for (const auto& p : packs)
    std::cout << std::right << std::setw(12) << p.valid_words;
  std::cout << "\n" << std::left << std::setw(8) << "Test";
  for (const auto& p : packs)
    std::cout << std::right << std::setw(12) << p.test_words;
  std::cout << "\n";
  return kExitOk;
}

int cmd_train(const GlobalArgs& g, const std::string& variant_flag,
              const std::string& languages_flag, int max_epochs_flag) {
  RunConfig cfg = load_effective(g);
  if (!variant_flag.empty()) cfg.train.variant = variant_flag;
  if (!languages_flag.empty()) {
    cfg.train.languages.clear();
    std::stringstream ss(languages_flag);
    std::string lang;
    while (std::getline(ss, lang, ','))
      if (!lang.empty()) cfg.train.languages.push_back(lang);
  }
  if (max_epochs_flag >= 0)
    cfg.train.config.max_epochs = static_cast<size_t>(max_epochs_flag);

  const Variant variant = parse_variant(cfg.train.variant);
  std::vector<std::string> languages =
      cfg.train.languages.empty() ? cfg.data.languages : cfg.train.languages;
  if (languages.empty()) throw ConfigError("no languages configured");
  if (variant != Variant::kMultiAwd && languages.size() != 1)
    throw ConfigError("variant " + variant_str(variant) +
                      " is monolingual; train one language at a time");

  const fs::path out = cfg.output.dir;
  const fs::path ckpt_path = out / "best.ckpt";
  if (fs::exists(ckpt_path) && !g.force) {
    std::cerr << "checkpoint " << ckpt_path.string()
              << " already exists; pass --force to overwrite\n";
    return kExitRefuseOverwrite;
  }

  std::vector<LanguagePack> packs;
  for (const auto& lang : languages)
    packs.push_back(load_pack(out / "packs" /
                              pack_dir_label(lang, threshold_for(cfg, lang))));
  std::vector<const LanguagePack*> pack_ptrs;
  for (const auto& p : packs) pack_ptrs.push_back(&p);

  ModelConfig model_cfg = model_config_from(cfg);
  model_cfg.pattern = variant == Variant::kMultiAwd
                          ? parse_pattern(cfg.model.pattern)
                          : variant_pattern(variant);
  TrainingConfig train_cfg = cfg.train.config;
  apply_variant(train_cfg, variant);
  train_cfg.validate();

  dump_effective(cfg, out);
  std::ofstream log(out / "train.log");
  TrainRunResult run = train_run(pack_ptrs, model_cfg, train_cfg, &log);
  save_model_checkpoint(ckpt_path, run.final_snapshot);

  std::cout << "best epoch " << run.best_epoch << " mean valid ppl "
            << std::fixed << std::setprecision(2) << run.best_mean_ppl
            << " (" << run.epochs_run << " epochs run)\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& pack_dir,
             const std::string& split, size_t batch) {
  TrainerSnapshot snap = load_model_checkpoint(ckpt);
  LanguagePack pack = load_pack(pack_dir);

  size_t lang_idx;
  try {
    lang_idx = snap.model.language_index(pack.language);
  } catch (const LookupError& e) {
    std::cerr << "checkpoint has no language '" << pack.language << "'\n";
    return kExitIncompatible;
  }
  const size_t model_vocab = snap.model.config.vocab_sizes[lang_idx];
  if (model_vocab != pack.vocab.size()) {
    std::cerr << "vocabulary size mismatch: checkpoint has " << model_vocab
              << " entries for " << pack.language << ", pack has "
              << pack.vocab.size() << "\n";
    return kExitIncompatible;
  }

  const std::vector<int32_t>& stream =
      split == "valid" ? pack.valid : pack.test;
  PerplexityOptions opts;
  opts.batch = batch;
  const double ppl = perplexity(snap.model, lang_idx, stream, opts);
  std::cout << std::fixed << std::setprecision(2) << ppl << "\n";
  return kExitOk;
}

int cmd_sweep(const GlobalArgs& g, size_t jobs_flag) {
  RunConfig cfg = load_effective(g);
  validate_data_paths(cfg);
  const fs::path out = fs::path(cfg.output.dir) / "sweep";

  if (fs::exists(out / "report.csv") && !g.resume && !g.force) {
    std::cerr << "sweep output " << out.string()
              << " already exists; pass --resume to continue or --force to "
                 "start over\n";
    return kExitRefuseOverwrite;
  }
  if (g.force && !g.resume) {
    fs::remove_all(out / "cells");
    fs::remove(out / "report.csv");
    fs::remove(out / "report.txt");
  }

  SweepSpec spec = sweep_spec_from(cfg);
  SweepOptions options;
  options.out_dir = out;
  options.jobs = jobs_flag > 0 ? jobs_flag : cfg.sweep.jobs;
  options.master_seed = cfg.train.config.seed;
  options.model = model_config_from(cfg);
  options.train = cfg.train.config;
  options.log = &std::cerr;

  dump_effective(cfg, out);
  SweepReport report = run_sweep(spec, options);
  write_report_csv(report, out / "report.csv");
  const std::string table = report_text_table(report);
  {
    std::ofstream tf(out / "report.txt");
    tf << table;
  }
  std::cout << table;

  size_t failed = 0;
  for (const auto& row : report.rows)
    if (row.failed) ++failed;
  if (failed > 0) {
    std::cerr << failed << " of " << report.rows.size()
              << " sweep cells failed\n";
    return kExitTrainingFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multilingual word-level LSTM language modeling"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "configuration file");
  app.add_option("--seed", g.seed, "master random seed")
      ->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out_dir, "output directory");
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.add_flag("--resume", g.resume, "skip completed work");

  auto* prepare = app.add_subcommand("prepare", "preprocess corpora into packs");

  auto* train = app.add_subcommand("train", "train a model on prepared packs");
  std::string variant_flag, languages_flag;
  int max_epochs_flag = -1;
  train->add_option("--variant", variant_flag,
                    "mono-lstm | mono-awd | multi-awd");
  train->add_option("--languages", languages_flag,
                    "comma-separated language subset");
  train->add_option("--max-epochs", max_epochs_flag, "epoch cap override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a pack");
  std::string ckpt_path, pack_path, split = "test";
  size_t eval_batch = 1;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--pack", pack_path, "prepared pack directory")->required();
  eval->add_option("--split", split, "test | valid")
      ->check(CLI::IsMember({"test", "valid"}));
  eval->add_option("--batch", eval_batch, "evaluation batch size");

  auto* sweep = app.add_subcommand("sweep", "run the data-scarcity sweep");
  size_t jobs_flag = 0;
  sweep->add_option("--jobs", jobs_flag, "parallel cell processes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(g);
    if (train->parsed())
      return cmd_train(g, variant_flag, languages_flag, max_epochs_flag);
    if (eval->parsed()) return cmd_eval(ckpt_path, pack_path, split, eval_batch);
    if (sweep->parsed()) return cmd_sweep(g, jobs_flag);
  } catch (const NumericError& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kExitTrainingFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

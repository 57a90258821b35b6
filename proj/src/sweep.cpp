#include "mllm/sweep.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mllm/errors.hpp"
#include "mllm/evaluator.hpp"

namespace mllm {

void SweepSpec::validate() const {
  if (data.languages.empty()) throw ConfigError("sweep: no languages");
  if (variants.empty()) throw ConfigError("sweep: no variants");
  if (thresholds.empty()) throw ConfigError("sweep: no thresholds");
  if (seeds_per_cell == 0)
    throw ConfigError("sweep: at least one seed per cell required");
  for (size_t i = 1; i < thresholds.size(); ++i) {
    const bool prev_full = thresholds[i - 1] == kFullThreshold;
    const bool incr = !prev_full && (thresholds[i] == kFullThreshold ||
                                     thresholds[i] > thresholds[i - 1]);
    if (!incr)
      throw ConfigError("sweep: thresholds must be strictly increasing "
                        "(FULL last)");
  }
  for (const auto& lang : data.languages)
    if (!data.corpora.count(lang))
      throw ConfigError("sweep: no corpus paths for language '" + lang + "'");
}

std::string SweepCell::id() const {
  return target_language + "__" + variant_str(variant) + "__t" +
         format_threshold(threshold) + "__s" + std::to_string(seed_index);
}

std::vector<std::pair<std::string, int64_t>> cell_pack_plan(
    const SweepSpec& spec, const SweepCell& cell) {
  std::vector<std::pair<std::string, int64_t>> plan;
  if (cell.variant == Variant::kMultiAwd) {
    for (const auto& lang : spec.data.languages)
      plan.emplace_back(lang, lang == cell.target_language ? cell.threshold
                                                           : kFullThreshold);
  } else {
    plan.emplace_back(cell.target_language, cell.threshold);
  }
  return plan;
}

std::string format_threshold(int64_t threshold) {
  if (threshold == kFullThreshold) return "FULL";
  if (threshold % 1000 == 0) return std::to_string(threshold / 1000) + "K";
  return std::to_string(threshold);
}

namespace {

std::string pack_dir_name(const std::string& lang, int64_t threshold) {
  return lang + "__" + format_threshold(threshold);
}

std::string csv_row(const SweepRow& row) {
  std::ostringstream os;
  os << row.language << "," << variant_str(parse_variant(row.variant)) << ","
     << format_threshold(row.threshold) << "," << row.seed_index << ",";
  auto num = [&](double v) {
    if (std::isnan(v))
      os << "nan";
    else
      os << std::fixed << std::setprecision(6) << v;
  };
  num(row.test_ppl);
  os << ",";
  num(row.valid_ppl);
  os << "," << row.epochs << "," << std::fixed << std::setprecision(3)
     << row.seconds;
  return os.str();
}

int64_t parse_threshold(const std::string& s) {
  if (s == "FULL") return kFullThreshold;
  if (!s.empty() && s.back() == 'K')
    return std::stoll(s.substr(0, s.size() - 1)) * 1000;
  return std::stoll(s);
}

bool parse_row(const std::string& line, SweepRow& row) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (fields.size() != 8) return false;
  try {
    row.language = fields[0];
    row.variant = fields[1];
    parse_variant(row.variant);
    row.threshold = parse_threshold(fields[2]);
    row.seed_index = std::stoull(fields[3]);
    row.test_ppl = fields[4] == "nan" ? std::nan("") : std::stod(fields[4]);
    row.valid_ppl = fields[5] == "nan" ? std::nan("") : std::stod(fields[5]);
    row.epochs = std::stoull(fields[6]);
    row.seconds = std::stod(fields[7]);
    row.failed = std::isnan(row.test_ppl);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Trains one cell and writes row.csv, train.log and best.ckpt into its
// directory. Runs inside a worker process.
void run_cell(const SweepSpec& spec, const SweepOptions& options,
              const SweepCell& cell) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cell_dir = options.out_dir / "cells" / cell.id();
  std::filesystem::create_directories(cell_dir);

  std::vector<LanguagePack> packs;
  std::vector<const LanguagePack*> pack_ptrs;
  for (const auto& [lang, thr] : cell_pack_plan(spec, cell)) {
    packs.push_back(
        load_pack(options.out_dir / "packs" / pack_dir_name(lang, thr)));
    }
  for (const auto& p : packs) pack_ptrs.push_back(&p);

  ModelConfig model_cfg = options.model;
  model_cfg.pattern = variant_pattern(cell.variant);
  TrainingConfig train_cfg = options.train;
  apply_variant(train_cfg, cell.variant);
  uint64_t mix = options.master_seed ^ fnv1a(cell.id());
  train_cfg.seed = splitmix64(mix);

  std::ofstream log(cell_dir / "train.log");
  TrainRunResult run = train_run(pack_ptrs, model_cfg, train_cfg, &log);

  const size_t target_idx =
      run.best_model.language_index(cell.target_language);
  const LanguagePack* target_pack = nullptr;
  for (const auto& p : packs)
    if (p.language == cell.target_language) target_pack = &p;
  PerplexityOptions eval_opts;
  eval_opts.chunk = std::max<size_t>(train_cfg.base_length, 280);
  const double test_ppl =
      perplexity(run.best_model, target_idx, target_pack->test, eval_opts);

  save_model_checkpoint(cell_dir / "best.ckpt", run.final_snapshot);

  SweepRow row;
  row.language = cell.target_language;
  row.variant = variant_str(cell.variant);
  row.threshold = cell.threshold;
  row.seed_index = cell.seed_index;
  row.test_ppl = test_ppl;
  row.valid_ppl = run.best_mean_ppl;
  row.epochs = run.epochs_run;
  row.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::ofstream rf(cell_dir / "row.csv");
  rf << csv_row(row) << "\n";
  if (!rf) throw IoError("cannot write " + (cell_dir / "row.csv").string());
}

}  // namespace

SweepReport run_sweep(const SweepSpec& spec, const SweepOptions& options) {
  spec.validate();
  std::filesystem::create_directories(options.out_dir / "packs");
  std::filesystem::create_directories(options.out_dir / "cells");

  // Packs are keyed by (language, threshold); donors reuse the FULL pack.
  std::map<std::string, std::pair<std::string, int64_t>> needed;
  std::vector<SweepCell> cells;
  for (const auto& lang : spec.data.languages)
    for (const auto& variant : spec.variants)
      for (const auto thr : spec.thresholds)
        for (size_t s = 0; s < spec.seeds_per_cell; ++s) {
          SweepCell cell{lang, variant, thr, s};
          for (const auto& p : cell_pack_plan(spec, cell))
            needed[pack_dir_name(p.first, p.second)] = p;
          cells.push_back(std::move(cell));
        }

  for (const auto& [dir_name, key] : needed) {
    const auto dir = options.out_dir / "packs" / dir_name;
    if (std::filesystem::exists(dir / "meta")) continue;
    const auto& [train_path, test_path] = spec.data.corpora.at(key.first);
    auto pack = prepare_pack(key.first, read_text_file(train_path),
                             read_text_file(test_path), key.second,
                             options.master_seed);
    save_pack(pack, dir);
    if (options.log)
      *options.log << "prepared pack " << dir_name << " (train "
                   << pack.train_words << " words)\n";
  }

  // Completed cells are recognized by a parseable row.csv and skipped.
  std::map<std::string, SweepRow> done;
  std::vector<SweepCell> pending;
  for (const auto& cell : cells) {
    const auto row_path = options.out_dir / "cells" / cell.id() / "row.csv";
    SweepRow row;
    bool ok = false;
    if (std::filesystem::exists(row_path)) {
      std::ifstream rf(row_path);
      std::string line;
      ok = std::getline(rf, line) && parse_row(line, row);
    }
    if (ok)
      done[cell.id()] = row;
    else
      pending.push_back(cell);
  }
  if (options.log)
    *options.log << "sweep: " << cells.size() << " cells, " << done.size()
                 << " already complete, " << pending.size() << " to run\n";

  const size_t jobs = std::max<size_t>(1, options.jobs);
  std::map<pid_t, size_t> running;
  size_t next = 0;
  auto spawn = [&]() {
    const SweepCell& cell = pending[next];
    const pid_t pid = fork();
    if (pid < 0) throw IoError("fork failed");
    if (pid == 0) {
      try {
        run_cell(spec, options, cell);
        _exit(0);
      } catch (const std::exception& e) {
        {
          // Scoped so the stream flushes before _exit skips destructors.
          std::ofstream ef(options.out_dir / "cells" / cell.id() /
                           "error.txt");
          ef << e.what() << "\n";
        }
        _exit(1);
      }
    }
    running[pid] = next;
    ++next;
  };
  while (next < pending.size() || !running.empty()) {
    while (next < pending.size() && running.size() < jobs) spawn();
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw IoError("waitpid failed");
    auto it = running.find(pid);
    if (it == running.end()) continue;
    const SweepCell& cell = pending[it->second];
    running.erase(it);
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (options.log)
      *options.log << "cell " << cell.id() << (ok ? " done" : " FAILED")
                   << "\n";
  }

  SweepReport report;
  for (const auto& cell : cells) {
    auto it = done.find(cell.id());
    if (it != done.end()) {
      report.rows.push_back(it->second);
      continue;
    }
    const auto cell_dir = options.out_dir / "cells" / cell.id();
    SweepRow row;
    bool ok = false;
    if (std::filesystem::exists(cell_dir / "row.csv")) {
      std::ifstream rf(cell_dir / "row.csv");
      std::string line;
      ok = std::getline(rf, line) && parse_row(line, row);
    }
    if (!ok) {
      row.language = cell.target_language;
      row.variant = variant_str(cell.variant);
      row.threshold = cell.threshold;
      row.seed_index = cell.seed_index;
      row.test_ppl = std::nan("");
      row.valid_ppl = std::nan("");
      row.failed = true;
      if (std::filesystem::exists(cell_dir / "error.txt"))
        row.error = read_text_file(cell_dir / "error.txt");
    }
    report.rows.push_back(row);
  }
  return report;
}

void write_report_csv(const SweepReport& report,
                      const std::filesystem::path& path) {
  if (report.rows.empty()) throw ConfigError("emit_report: empty report");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "language,variant,threshold,seed,test_ppl,valid_ppl,epochs,seconds\n";
  for (const auto& row : report.rows) f << csv_row(row) << "\n";
  if (!f) throw IoError("short write to " + path.string());
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

std::string report_text_table(const SweepReport& report) {
  if (report.rows.empty()) throw ConfigError("emit_report: empty report");
  std::vector<std::string> languages, variants;
  std::vector<int64_t> thresholds;
  for (const auto& row : report.rows) {
    if (std::find(languages.begin(), languages.end(), row.language) ==
        languages.end())
      languages.push_back(row.language);
    if (std::find(variants.begin(), variants.end(), row.variant) ==
        variants.end())
      variants.push_back(row.variant);
    if (std::find(thresholds.begin(), thresholds.end(), row.threshold) ==
        thresholds.end())
      thresholds.push_back(row.threshold);
  }
  std::sort(thresholds.begin(), thresholds.end(), [](int64_t a, int64_t b) {
    if (a == kFullThreshold) return false;
    if (b == kFullThreshold) return true;
    return a < b;
  });

  size_t name_w = 8;
  for (const auto& v : variants) name_w = std::max(name_w, v.size());

  std::ostringstream os;
  os << "test perplexity (median over seeds)\n";
  for (const auto& lang : languages) {
    os << "\nlanguage: " << lang << "\n";
    os << std::left << std::setw(static_cast<int>(name_w)) << "model"
       << std::right;
    for (const auto thr : thresholds)
      os << " | " << std::setw(9) << format_threshold(thr);
    os << "\n";

    // Column best over the median values.
    std::map<int64_t, double> best;
    std::map<std::string, std::map<int64_t, double>> value;
    for (const auto& variant : variants) {
      for (const auto thr : thresholds) {
        std::vector<double> seeds;
        for (const auto& row : report.rows)
          if (row.language == lang && row.variant == variant &&
              row.threshold == thr && !std::isnan(row.test_ppl))
            seeds.push_back(row.test_ppl);
        const double med = median(std::move(seeds));
        value[variant][thr] = med;
        if (!std::isnan(med) &&
            (!best.count(thr) || med < best[thr]))
          best[thr] = med;
      }
    }
    for (const auto& variant : variants) {
      os << std::left << std::setw(static_cast<int>(name_w)) << variant
         << std::right;
      for (const auto thr : thresholds) {
        const double med = value[variant][thr];
        os << " | ";
        if (std::isnan(med)) {
          os << std::setw(9) << "-";
          continue;
        }
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << med;
        const bool flag = best.count(thr) && med == best[thr];
        os << std::setw(8) << cell.str() << (flag ? "*" : " ");
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace mllm

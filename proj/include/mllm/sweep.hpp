#pragma once

#include <filesystem>
#include <iosfwd>

#include "mllm/trainer.hpp"

namespace mllm {

struct SweepDataset {
  std::vector<std::string> languages;
  // language -> (train corpus path, test corpus path)
  std::unordered_map<std::string,
                     std::pair<std::filesystem::path, std::filesystem::path>>
      corpora;
};

struct SweepSpec {
  SweepDataset data;
  std::vector<Variant> variants;
  std::vector<int64_t> thresholds;  // strictly increasing; kFullThreshold last
  size_t seeds_per_cell = 1;

  void validate() const;
};

struct SweepCell {
  std::string target_language;
  Variant variant;
  int64_t threshold;
  size_t seed_index;

  std::string id() const;
};

// When the target language's text is restricted, a multilingual cell still
// trains on the full texts of the other languages; monolingual cells see
// only the target.
std::vector<std::pair<std::string, int64_t>> cell_pack_plan(
    const SweepSpec& spec, const SweepCell& cell);

struct SweepRow {
  std::string language;
  std::string variant;
  int64_t threshold = kFullThreshold;
  size_t seed_index = 0;
  double test_ppl = 0.0;
  double valid_ppl = 0.0;
  size_t epochs = 0;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

struct SweepOptions {
  std::filesystem::path out_dir;
  size_t jobs = 1;
  uint64_t master_seed = 42;
  ModelConfig model;     // sizes; pattern is set per variant
  TrainingConfig train;  // base config; variant toggles applied per cell
  std::ostream* log = nullptr;
};

// Trains every (language, variant, threshold, seed) cell to its best
// checkpoint and evaluates test perplexity. Cells are independent processes;
// completed cells (a valid row.csv on disk) are skipped on rerun, failures
// are recorded and the sweep continues.
SweepReport run_sweep(const SweepSpec& spec, const SweepOptions& options);

std::string format_threshold(int64_t threshold);

void write_report_csv(const SweepReport& report,
                      const std::filesystem::path& path);
// Table pivot per language: variants as rows, thresholds as columns, cell
// values are medians over seeds, best value per column flagged with '*'.
std::string report_text_table(const SweepReport& report);

}  // namespace mllm

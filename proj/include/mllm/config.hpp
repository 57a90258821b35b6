#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mllm/sweep.hpp"

namespace mllm {

struct DataConfig {
  std::vector<std::string> languages;
  // language -> (train path, test path)
  std::map<std::string, std::pair<std::string, std::string>> corpora;
  int64_t threshold = kFullThreshold;
  std::map<std::string, int64_t> language_thresholds;  // overrides

  bool operator==(const DataConfig&) const = default;
};

struct ModelSection {
  size_t embedding = 64;  // desk-scale defaults; paper_scale flips to 512
  size_t hidden = 128;
  std::string pattern = "S,S,P";

  bool operator==(const ModelSection&) const = default;
};

struct TrainSection {
  TrainingConfig config;
  std::string variant = "multi-awd";
  std::vector<std::string> languages;  // subset; empty = all data languages

  bool operator==(const TrainSection&) const = default;
};

struct SweepSection {
  std::vector<std::string> variants = {"mono-lstm", "mono-awd", "multi-awd"};
  std::vector<int64_t> thresholds = {5000, 10000, 20000, 40000, 80000,
                                     kFullThreshold};
  size_t seeds = 3;
  size_t jobs = 1;

  bool operator==(const SweepSection&) const = default;
};

struct OutputSection {
  std::string dir = "out";

  bool operator==(const OutputSection&) const = default;
};

// Parsed union of the config file sections; flag overrides are applied on
// top by the CLI. paper_scale switches model sizes and the sweep grid to
// the full-scale configuration.
struct RunConfig {
  DataConfig data;
  ModelSection model;
  TrainSection train;
  SweepSection sweep;
  OutputSection output;
  bool paper_scale = false;

  bool operator==(const RunConfig&) const = default;
};

int64_t parse_threshold_value(const std::string& text);

// Sectioned key-value text; unknown sections or keys are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical dump; parsing it back yields an identical RunConfig.
std::string dump_run_config(const RunConfig& config);

// Paths referenced by [data] must exist.
void validate_data_paths(const RunConfig& config);

ModelConfig model_config_from(const RunConfig& config);
SweepSpec sweep_spec_from(const RunConfig& config);

}  // namespace mllm

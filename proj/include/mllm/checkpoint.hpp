#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mllm/model.hpp"

namespace mllm {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'L', 'M'};

struct CheckpointRecord {
  Shape shape;
  std::vector<double> values;
};

// Records keyed by name; std::map keeps the on-disk order deterministic.
using CheckpointMap = std::map<std::string, CheckpointRecord>;

// Magic "MLLM", u32 version, then per record: u32 name length, name bytes,
// u32 rank, u64 dims, f64 payload (all little-endian).
void write_checkpoint(const std::filesystem::path& path,
                      const CheckpointMap& records);
CheckpointMap read_checkpoint(const std::filesystem::path& path);

// Everything a training checkpoint carries.
struct TrainerSnapshot {
  ModelParams model;
  double lr = 0.0;
  int no_improve = 0;
  int anneal_count = 0;
  bool asgd_active = false;
  size_t asgd_samples = 0;
  size_t epoch = 0;
  std::vector<double> valid_ppls;  // per language, config order
  std::map<std::string, std::vector<double>> averaged;  // ASGD tail, optional
};

void save_model_checkpoint(const std::filesystem::path& path,
                           const TrainerSnapshot& snapshot);
// Rebuilds the full model from the file alone; the stored config hash is
// re-verified against the reconstructed structure.
TrainerSnapshot load_model_checkpoint(const std::filesystem::path& path);

// Throws ConfigError when the checkpoint was produced under a different
// model configuration.
void verify_checkpoint_compatible(const TrainerSnapshot& snapshot,
                                  const ModelConfig& expected);

}  // namespace mllm

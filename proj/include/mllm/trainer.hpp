#pragma once

#include <iosfwd>
#include <optional>

#include "mllm/checkpoint.hpp"
#include "mllm/corpus.hpp"
#include "mllm/model.hpp"

namespace mllm {

enum class Variant { kMonoLstm, kMonoAwd, kMultiAwd };
Variant parse_variant(const std::string& text);
std::string variant_str(Variant v);

struct TrainingConfig {
  size_t batch_size = 20;
  size_t base_length = 70;
  double learning_rate = 30.0;
  size_t max_epochs = 200;
  double dropout_input = 0.65;
  double dropout_output = 0.4;
  double dropout_hidden = 0.3;  // variational, between LSTM layers
  double dropout_embedding = 0.1;
  double weight_drop = 0.5;
  double alpha = 2.0;  // activation regularization
  double beta = 1.0;   // temporal activation regularization
  double grad_clip = 0.25;
  int patience = 5;
  double lr_floor = 1e-3;  // anneal stop threshold
  bool variable_length = true;
  bool asgd = false;  // averaged-SGD tail mode
  // Alternative embedding-dropout scope: one decision per type per batch
  // row instead of per segment.
  bool embedding_drop_per_row = false;
  uint64_t seed = 42;

  void validate() const;
  bool operator==(const TrainingConfig&) const = default;
};

// mono-lstm keeps only input/output dropout; mono-awd and multi-awd carry
// the full regularizer set.
void apply_variant(TrainingConfig& config, Variant v);
SharingPattern variant_pattern(Variant v);

// One language's segment in timestep-major layout.
struct SegmentBatch {
  size_t batch = 0, length = 0;
  std::vector<int32_t> inputs, targets;  // [t * batch + b]
};
SegmentBatch to_time_major(const BatchStream::Segment& segment);

struct LanguageLoss {
  double ce = 0.0, ar = 0.0, tar = 0.0;
};

struct JointLoss {
  double total = 0.0;   // (1/M) * sum CE + sum (AR + TAR)
  double ce_sum = 0.0;  // raw sum of per-language CE
  std::vector<LanguageLoss> per_language;
};

// Builds the joint graph over all languages, optionally runs backward
// (gradients land in the parameter tensors), and replaces `states` with the
// detached final states. Masks are supplied by the caller and fixed for the
// whole segment.
JointLoss joint_step(ModelParams& model,
                     const std::vector<SegmentBatch>& segments,
                     const std::vector<LanguageMasks>& masks,
                     std::vector<std::vector<LstmState>>& states,
                     const TrainingConfig& config, bool do_backward);

// Per-segment dropout masks for every language; weight-drop masks for
// shared layers are sampled once and reused across languages.
std::vector<LanguageMasks> sample_masks(const ModelParams& model,
                                        const TrainingConfig& config,
                                        Rng& seg_rng);

// Scales every gradient so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(const ModelParams& model, double max_norm);

struct EpochStats {
  std::vector<double> train_ce;  // per language, mean over segments
  double joint_mean = 0.0;
  double ce_mean = 0.0;  // (1/(M*N_e)) * sum over segments and languages
  size_t segments = 0;
  double seconds = 0.0;
};

EpochStats train_epoch(ModelParams& model, std::vector<BatchStream>& streams,
                       const TrainingConfig& config, double lr,
                       Rng& run_rng, size_t epoch_no,
                       std::map<std::string, std::vector<double>>* averaged,
                       size_t* asgd_samples);

enum class ScheduleAction { kContinue, kAnneal, kSwitchAveraging, kStop };

struct ScheduleState {
  double lr = 0.0;
  double best_ppl = 0.0;
  int best_epoch = -1;  // 1-based; -1 = none yet
  int no_improve = 0;
  int anneal_count = 0;
  bool asgd_active = false;
};

// Mean validation perplexity drives annealing (lr/4 after `patience` epochs
// without improvement), the optional switch to tail averaging, and the stop
// on lr underflow.
ScheduleAction validate_and_schedule(ScheduleState& state,
                                     double mean_valid_ppl,
                                     const TrainingConfig& config,
                                     size_t epoch);

struct TrainRunResult {
  ModelParams best_model;
  std::vector<double> best_valid_ppls;  // per language at the best epoch
  double best_mean_ppl = 0.0;
  int best_epoch = -1;
  size_t epochs_run = 0;
  std::vector<std::string> log_lines;
  TrainerSnapshot final_snapshot;
};

// Full training loop: epochs of joint segments, per-epoch validation,
// annealing schedule, best-checkpoint tracking. Deterministic given the
// config seed. Log lines carry only deterministic fields.
TrainRunResult train_run(const std::vector<const LanguagePack*>& packs,
                         ModelConfig model_config,
                         const TrainingConfig& config, std::ostream* log);

}  // namespace mllm

#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "mllm/lstm.hpp"

namespace mllm {

enum class LayerScope { kShared, kPerLanguage };

// One tag per stacked LSTM layer. The proposed architecture is
// [shared, shared, per-language].
using SharingPattern = std::array<LayerScope, 3>;

inline constexpr SharingPattern kDefaultPattern{
    LayerScope::kShared, LayerScope::kShared, LayerScope::kPerLanguage};

// "S,S,P" (also accepts "ssp"); anything that is not exactly 3 tags is a
// configuration error.
SharingPattern parse_pattern(const std::string& text);
std::string pattern_str(const SharingPattern& pattern);

struct ModelConfig {
  size_t embedding = 512;
  size_t hidden = 1150;
  SharingPattern pattern = kDefaultPattern;
  std::vector<std::string> languages;
  std::vector<size_t> vocab_sizes;
};

struct LanguageParams {
  std::string language;
  TensorPtr embedding;     // V x emb; also the decoder weight (tied)
  TensorPtr decoder_bias;  // V
  std::unordered_map<size_t, LstmLayerParams> own_layers;  // slot -> params
};

// Shared-slot parameters plus per-language parameter sets. Layer dims are
// emb->hidden, hidden->hidden, hidden->emb so that decoder tying is
// dimensionally possible.
struct ModelParams {
  ModelConfig config;  // pattern canonicalized to per-language when M == 1
  std::unordered_map<size_t, LstmLayerParams> shared_layers;
  std::vector<LanguageParams> languages;

  size_t language_count() const { return languages.size(); }
  size_t language_index(const std::string& id) const;
  const LstmLayerParams& layer(size_t slot, size_t lang_idx) const;

  // Canonical (name, tensor) list; drives checkpoints and updates.
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
  size_t parameter_count() const;

  struct Partition {
    std::vector<TensorPtr> shared, specific;
  };
  // Disjoint sets whose union is every parameter used by forward_language.
  Partition parameters_of(size_t lang_idx) const;

  uint64_t config_hash() const;
};

// Seeds are drawn from per-parameter forks of `rng` keyed by canonical
// names, so identical structures initialize identically regardless of the
// sharing labels that produced them.
ModelParams build_model(const ModelConfig& config, const Rng& rng);

ModelParams clone_model(const ModelParams& model);

// Per-segment dropout state for one language's forward pass.
struct LanguageMasks {
  TensorPtr input;                     // B x emb
  TensorPtr output;                    // B x emb
  std::array<TensorPtr, 2> hidden{};   // B x hidden, after layers 1 and 2
  std::array<TensorPtr, 3> weight{};   // per slot, shape of that U
  std::vector<double> embedding_rows;  // V row scales; empty = no dropout
};

struct ForwardResult {
  TensorPtr logits;         // (T*B) x V, timestep-major
  TensorPtr dropped_final;  // final-layer output after output dropout
  std::vector<TensorPtr> raw_final_steps;  // per-timestep B x emb, no dropout
  std::vector<LstmState> final_states;     // per layer
  std::vector<LayerForward> layer_traces;
};

// tokens are timestep-major: tokens[t*batch + b]. States are carried by the
// caller and must match layer dimensions.
ForwardResult forward_language(Graph& g, const ModelParams& model,
                               size_t lang_idx,
                               const std::vector<int32_t>& tokens,
                               size_t batch, size_t timesteps,
                               const std::vector<LstmState>& states,
                               const LanguageMasks& masks);

std::vector<LstmState> zero_states(const ModelParams& model, size_t batch);

}  // namespace mllm

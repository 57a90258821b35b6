#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mllm/graph.hpp"
#include "mllm/rng.hpp"

namespace mllm {

// Packed-gate LSTM layer. W: input-to-hidden (4H_out x H_in), U:
// hidden-to-hidden (4H_out x H_out), bias 4H_out. Gate order is pinned as
// [input, forget, cell, output]; the checkpoint format depends on it.
struct LstmLayerParams {
  TensorPtr w, u, b;
  size_t in_dim = 0, out_dim = 0;
};

// Weights uniform in [-1/sqrt(H_out), 1/sqrt(H_out)], forget-gate bias 1,
// other biases 0.
LstmLayerParams init_lstm_layer(size_t in_dim, size_t out_dim, Rng rng);

struct LstmState {
  TensorPtr h, c;  // each B x H
};
LstmState zero_state(size_t batch, size_t hidden);
// Values copied into fresh graph-independent leaves (truncated BPTT).
LstmState detach(const LstmState& state);

// Bernoulli(1-p) scaled by 1/(1-p); entries are 0 or 1/(1-p). Rejects p>=1.
TensorPtr sample_variational_mask(size_t batch, size_t hidden, double p,
                                  Rng& rng);
TensorPtr sample_weight_drop_mask(const Shape& u_shape, double p, Rng& rng);
// One keep/drop decision per vocabulary row.
std::vector<double> sample_embedding_row_mask(size_t vocab, double p,
                                              Rng& rng);

// DropConnect on the recurrent matrix: U masked once for the whole segment.
// Evaluation mode returns U unchanged.
TensorPtr apply_weight_drop(Graph& g, const TensorPtr& u, double p, Rng& rng,
                            bool train_mode);

// Row-level embedding dropout followed by lookup: dropped types yield the
// zero vector at every occurrence, survivors are scaled by 1/(1-p). The
// caller invokes this once per segment, so decisions are per type per
// segment. Evaluation mode is a plain lookup.
TensorPtr embed_with_dropout(Graph& g, const TensorPtr& embedding,
                             const std::vector<int32_t>& tokens, double p,
                             Rng& rng, bool train_mode);

// B x H mask repeated for every timestep of a segment.
TensorPtr tile_mask(const TensorPtr& mask, size_t timesteps);

struct LayerForward {
  std::vector<TensorPtr> steps;  // per-timestep outputs, each B x out
  TensorPtr stacked;             // (T*B) x out, timestep-major
  LstmState final_state;
  TensorPtr applied_input_mask;  // tiled mask actually applied (may be null)
};

// One layer over a whole segment. x_all is (T*B) x in timestep-major; the
// optional boundary mask (B x in) is applied identically at every timestep;
// u_mask (shape of U) is the weight-drop mask.
LayerForward lstm_layer_forward(Graph& g, const LstmLayerParams& params,
                                const TensorPtr& x_all, size_t timesteps,
                                const LstmState& init,
                                const TensorPtr& boundary_mask,
                                const TensorPtr& u_mask);

struct StackMasks {
  // boundary_masks[i] gates the input of layer i (index 0 = the stack
  // input); u_masks[i] weight-drops layer i. Null entries mean no dropout.
  std::vector<TensorPtr> boundary_masks;
  std::vector<TensorPtr> u_masks;
};

// Stacked LSTM over one segment with variational masks at each boundary and
// weight drop inside each layer.
std::vector<LayerForward> lstm_stack_forward(
    Graph& g, const std::vector<const LstmLayerParams*>& layers,
    const TensorPtr& x_all, size_t timesteps,
    const std::vector<LstmState>& init, const StackMasks& masks);

}  // namespace mllm

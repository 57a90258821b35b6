#include "mllm/lstm.hpp"

#include <cmath>

#include "mllm/errors.hpp"

namespace mllm {

namespace {

void check_rate(double p, const char* what) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError(std::string(what) + ": drop rate " + std::to_string(p) +
                      " outside [0, 1)");
}

}  // namespace

LstmLayerParams init_lstm_layer(size_t in_dim, size_t out_dim, Rng rng) {
  LstmLayerParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  // 3/sqrt(H): at desk-scale widths the conventional 1/sqrt(H) leaves the
  // stack too close to its flat start to train within the epoch budget.
  const double bound = 3.0 / std::sqrt(static_cast<double>(out_dim));
  p.w = Tensor::zeros({4 * out_dim, in_dim}, true);
  for (auto& v : p.w->mutable_data()) v = rng.uniform(-bound, bound);
  p.u = Tensor::zeros({4 * out_dim, out_dim}, true);
  for (auto& v : p.u->mutable_data()) v = rng.uniform(-bound, bound);
  p.b = Tensor::zeros({4 * out_dim}, true);
  // Forget-gate sub-vector starts at 1 so early training does not flush the
  // cell state.
  auto& bias = p.b->mutable_data();
  for (size_t i = out_dim; i < 2 * out_dim; ++i) bias[i] = 1.0;
  return p;
}

LstmState zero_state(size_t batch, size_t hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
}

LstmState detach(const LstmState& state) {
  auto h = Tensor::zeros(state.h->shape());
  h->mutable_data() = state.h->data();
  auto c = Tensor::zeros(state.c->shape());
  c->mutable_data() = state.c->data();
  return {h, c};
}

TensorPtr sample_variational_mask(size_t batch, size_t hidden, double p,
                                  Rng& rng) {
  check_rate(p, "variational dropout");
  auto mask = Tensor::zeros({batch, hidden});
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : mask->mutable_data())
    v = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

TensorPtr sample_weight_drop_mask(const Shape& u_shape, double p, Rng& rng) {
  check_rate(p, "weight drop");
  auto mask = Tensor::zeros(u_shape);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : mask->mutable_data())
    v = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

std::vector<double> sample_embedding_row_mask(size_t vocab, double p,
                                              Rng& rng) {
  check_rate(p, "embedding dropout");
  std::vector<double> mask(vocab);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : mask) v = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

TensorPtr apply_weight_drop(Graph& g, const TensorPtr& u, double p, Rng& rng,
                            bool train_mode) {
  check_rate(p, "weight drop");
  if (!train_mode || p == 0.0) return u;
  return g.apply_mask(u, sample_weight_drop_mask(u->shape(), p, rng));
}

TensorPtr embed_with_dropout(Graph& g, const TensorPtr& embedding,
                             const std::vector<int32_t>& tokens, double p,
                             Rng& rng, bool train_mode) {
  check_rate(p, "embedding dropout");
  if (!train_mode || p == 0.0) return g.gather_rows(embedding, tokens);
  const auto row_mask = sample_embedding_row_mask(embedding->rows(), p, rng);
  std::vector<double> scales(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i)
    scales[i] = row_mask[static_cast<size_t>(tokens[i])];
  return g.gather_rows_scaled(embedding, tokens, scales);
}

TensorPtr tile_mask(const TensorPtr& mask, size_t timesteps) {
  const size_t b = mask->rows(), h = mask->cols();
  auto tiled = Tensor::zeros({timesteps * b, h});
  auto& out = tiled->mutable_data();
  for (size_t t = 0; t < timesteps; ++t)
    std::copy(mask->data().begin(), mask->data().end(),
              out.begin() + t * b * h);
  return tiled;
}

LayerForward lstm_layer_forward(Graph& g, const LstmLayerParams& params,
                                const TensorPtr& x_all, size_t timesteps,
                                const LstmState& init,
                                const TensorPtr& boundary_mask,
                                const TensorPtr& u_mask) {
  if (timesteps == 0) throw DimensionError("lstm forward: zero timesteps");
  if (x_all->rows() % timesteps != 0)
    throw DimensionError("lstm forward: input rows " +
                         shape_str(x_all->shape()) + " not divisible by " +
                         std::to_string(timesteps) + " timesteps");
  const size_t batch = x_all->rows() / timesteps;
  const size_t h = params.out_dim;
  if (x_all->cols() != params.in_dim)
    throw DimensionError("lstm forward: input " + shape_str(x_all->shape()) +
                         " vs layer expecting " +
                         std::to_string(params.in_dim) + " columns");
  if (init.h->shape() != Shape{batch, h} || init.c->shape() != Shape{batch, h})
    throw DimensionError("lstm forward: state " + shape_str(init.h->shape()) +
                         " does not match batch " + std::to_string(batch) +
                         ", hidden " + std::to_string(h));

  LayerForward out;
  TensorPtr x_in = x_all;
  if (boundary_mask) {
    out.applied_input_mask = tile_mask(boundary_mask, timesteps);
    x_in = g.apply_mask(x_all, out.applied_input_mask);
  }
  TensorPtr u_eff = u_mask ? g.apply_mask(params.u, u_mask) : params.u;
  // Input-side contributions and the bias for the whole segment in one pass.
  TensorPtr xw_all = g.add_rowwise(g.matmul_nt(x_in, params.w), params.b);

  TensorPtr h_prev = init.h, c_prev = init.c;
  out.steps.reserve(timesteps);
  for (size_t t = 0; t < timesteps; ++t) {
    auto xw_t = g.slice_rows(xw_all, t * batch, (t + 1) * batch);
    auto pre = g.add(xw_t, g.matmul_nt(h_prev, u_eff));
    auto i_gate = g.sigmoid(g.slice_cols(pre, 0, h));
    auto f_gate = g.sigmoid(g.slice_cols(pre, h, 2 * h));
    auto g_gate = g.tanh(g.slice_cols(pre, 2 * h, 3 * h));
    auto o_gate = g.sigmoid(g.slice_cols(pre, 3 * h, 4 * h));
    auto c_t = g.add(g.hadamard(f_gate, c_prev), g.hadamard(i_gate, g_gate));
    auto h_t = g.hadamard(o_gate, g.tanh(c_t));
    out.steps.push_back(h_t);
    h_prev = h_t;
    c_prev = c_t;
  }
  out.stacked = g.concat_rows(out.steps);
  out.final_state = {h_prev, c_prev};
  return out;
}

std::vector<LayerForward> lstm_stack_forward(
    Graph& g, const std::vector<const LstmLayerParams*>& layers,
    const TensorPtr& x_all, size_t timesteps,
    const std::vector<LstmState>& init, const StackMasks& masks) {
  if (init.size() != layers.size())
    throw DimensionError("lstm stack: " + std::to_string(init.size()) +
                         " states for " + std::to_string(layers.size()) +
                         " layers");
  std::vector<LayerForward> out;
  out.reserve(layers.size());
  TensorPtr x = x_all;
  for (size_t li = 0; li < layers.size(); ++li) {
    const TensorPtr boundary =
        li < masks.boundary_masks.size() ? masks.boundary_masks[li] : nullptr;
    const TensorPtr u_mask =
        li < masks.u_masks.size() ? masks.u_masks[li] : nullptr;
    out.push_back(lstm_layer_forward(g, *layers[li], x, timesteps, init[li],
                                     boundary, u_mask));
    x = out.back().stacked;
  }
  return out;
}

}  // namespace mllm

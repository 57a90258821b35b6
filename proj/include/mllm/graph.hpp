#pragma once

#include <cstdint>
#include <functional>
#include <unordered_set>
#include <vector>

#include "mllm/tensor.hpp"

namespace mllm {

// Define-by-run reverse-mode tape. Ops execute eagerly and append a node in
// topological order; backward() replays adjoints in reverse. Input tensors
// are frozen on consumption and thawed when the graph is destroyed, so
// parameter data can only change between graphs. One backward per graph.
class Graph {
 public:
  Graph() = default;
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // a[m,k] @ b[k,n]
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  // a[m,k] @ b[n,k]^T
  TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
  // a[m,n] + bias[n] broadcast over rows
  TensorPtr add_rowwise(const TensorPtr& a, const TensorPtr& bias);
  TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);
  // hadamard with a constant dropout mask; the mask must not require grad
  // and is always sampled outside the graph.
  TensorPtr apply_mask(const TensorPtr& a, const TensorPtr& mask);
  TensorPtr sigmoid(const TensorPtr& a);
  TensorPtr tanh(const TensorPtr& a);
  TensorPtr square(const TensorPtr& a);
  TensorPtr scale(const TensorPtr& a, double s);
  TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
  TensorPtr slice_rows(const TensorPtr& a, size_t r0, size_t r1);
  TensorPtr slice_cols(const TensorPtr& a, size_t c0, size_t c1);
  TensorPtr gather_rows(const TensorPtr& table,
                        const std::vector<int32_t>& idx);
  // gather with a per-output-row scale factor (embedding dropout path).
  TensorPtr gather_rows_scaled(const TensorPtr& table,
                               const std::vector<int32_t>& idx,
                               const std::vector<double>& row_scale);
  TensorPtr mean_all(const TensorPtr& a);
  // logits[n,v], one target index per row; returns the scalar mean of
  // -log softmax(logits_i)[target_i], stabilized by max subtraction.
  TensorPtr softmax_cross_entropy(const TensorPtr& logits,
                                  const std::vector<int32_t>& targets);

  void backward(const TensorPtr& loss);
  bool backward_done() const { return backward_done_; }
  size_t node_count() const { return tape_.size(); }

 private:
  TensorPtr make_out(Shape shape, bool requires_grad);
  void consume(const TensorPtr& t);
  // Ops whose output never received a gradient (not on the loss path) are
  // skipped during backward.
  void record(const TensorPtr& out, std::function<void()> fn) {
    tape_.push_back({[out, f = std::move(fn)] {
      if (!out->has_grad()) return;
      f();
    }});
  }

  struct Node {
    std::function<void()> backward_fn;
  };
  std::vector<Node> tape_;
  std::vector<TensorPtr> frozen_;
  std::unordered_set<const Tensor*> produced_;
  bool backward_done_ = false;
};

// Gradient-check oracle. `build` must deterministically reconstruct the loss
// from the current values of `params` (dropout masks held fixed). Returns
// max over parameter entries of |analytic - numeric| / max(1, |numeric|),
// with numeric the central difference at step eps.
double finite_difference_check(const std::function<TensorPtr(Graph&)>& build,
                               const std::vector<TensorPtr>& params,
                               double eps);

}  // namespace mllm

#include "mllm/graph.hpp"

#include <cblas.h>
#include <malloc.h>

#include <cmath>
#include <string>

#include "mllm/math.hpp"

namespace mllm {

extern "C" void openblas_set_num_threads(int);

namespace {

// Bitwise determinism requires a fixed reduction order, so the BLAS backend
// is pinned to one thread. Graph buffers churn fast; keeping freed chunks in
// the arena instead of returning them to the OS avoids re-faulting pages on
// every segment.
struct BlasInit {
  BlasInit() {
    openblas_set_num_threads(1);
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  }
};
const BlasInit blas_init;

void check_rank2(const char* op, const TensorPtr& t) {
  if (t->shape().size() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t->shape()));
}

void check_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a->shape()) + " vs " +
                         shape_str(b->shape()));
}

}  // namespace

Graph::~Graph() {
  for (auto& t : frozen_) t->thaw();
}

void Graph::consume(const TensorPtr& t) {
  t->freeze();
  frozen_.push_back(t);
}

TensorPtr Graph::make_out(Shape shape, bool requires_grad) {
  auto t = Tensor::uninit(std::move(shape), requires_grad);
  produced_.insert(t.get());
  return t;
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
  check_rank2("matmul", a);
  check_rank2("matmul", b);
  const size_t m = a->rows(), k = a->cols(), n = b->cols();
  if (b->rows() != k)
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a->shape()) + " vs " +
                         shape_str(b->shape()));
  consume(a);
  consume(b);
  auto out = make_out({m, n}, a->requires_grad() || b->requires_grad());
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)m, (int)n,
              (int)k, 1.0, a->data().data(), (int)k, b->data().data(), (int)n,
              0.0, out->mutable_data().data(), (int)n);
  record(out, [a, b, out, m, n, k] {
    const double* dc = out->grad().data();
    if (a->requires_grad())
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)m, (int)k,
                  (int)n, 1.0, dc, (int)n, b->data().data(), (int)n, 1.0,
                  a->grad_buffer().data(), (int)k);
    if (b->requires_grad())
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)k, (int)n,
                  (int)m, 1.0, a->data().data(), (int)k, dc, (int)n, 1.0,
                  b->grad_buffer().data(), (int)n);
  });
  return out;
}

TensorPtr Graph::matmul_nt(const TensorPtr& a, const TensorPtr& b) {
  check_rank2("matmul_nt", a);
  check_rank2("matmul_nt", b);
  const size_t m = a->rows(), k = a->cols(), n = b->rows();
  if (b->cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree, " +
                         shape_str(a->shape()) + " vs " +
                         shape_str(b->shape()) + " transposed");
  consume(a);
  consume(b);
  auto out = make_out({m, n}, a->requires_grad() || b->requires_grad());
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)m, (int)n, (int)k,
              1.0, a->data().data(), (int)k, b->data().data(), (int)k, 0.0,
              out->mutable_data().data(), (int)n);
  record(out, [a, b, out, m, n, k] {
    const double* dc = out->grad().data();
    if (a->requires_grad())
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)m, (int)k,
                  (int)n, 1.0, dc, (int)n, b->data().data(), (int)k, 1.0,
                  a->grad_buffer().data(), (int)k);
    if (b->requires_grad())
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)n, (int)k,
                  (int)m, 1.0, dc, (int)n, a->data().data(), (int)k, 1.0,
                  b->grad_buffer().data(), (int)k);
  });
  return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape("add", a, b);
  consume(a);
  consume(b);
  auto out = make_out(a->shape(), a->requires_grad() || b->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  const double* pb = b->data().data();
  double* po = out->mutable_data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  record(out, [a, b, out, n] {
    const double* dc = out->grad().data();
    if (a->requires_grad()) {
      double* da = a->grad_buffer().data();
      for (size_t i = 0; i < n; ++i) da[i] += dc[i];
    }
    if (b->requires_grad()) {
      double* db = b->grad_buffer().data();
      for (size_t i = 0; i < n; ++i) db[i] += dc[i];
    }
  });
  return out;
}

TensorPtr Graph::sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape("sub", a, b);
  consume(a);
  consume(b);
  auto out = make_out(a->shape(), a->requires_grad() || b->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  const double* pb = b->data().data();
  double* po = out->mutable_data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  record(out, [a, b, out, n] {
    const double* dc = out->grad().data();
    if (a->requires_grad()) {
      double* da = a->grad_buffer().data();
      for (size_t i = 0; i < n; ++i) da[i] += dc[i];
    }
    if (b->requires_grad()) {
      double* db = b->grad_buffer().data();
      for (size_t i = 0; i < n; ++i) db[i] -= dc[i];
    }
  });
  return out;
}

TensorPtr Graph::add_rowwise(const TensorPtr& a, const TensorPtr& bias) {
  check_rank2("add_rowwise", a);
  if (bias->shape().size() != 1 || bias->size() != a->cols())
    throw DimensionError("add_rowwise: bias " + shape_str(bias->shape()) +
                         " does not match columns of " +
                         shape_str(a->shape()));
  consume(a);
  consume(bias);
  auto out = make_out(a->shape(), a->requires_grad() || bias->requires_grad());
  const size_t m = a->rows(), n = a->cols();
  const double* pa = a->data().data();
  const double* pb = bias->data().data();
  double* po = out->mutable_data().data();
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < n; ++c) po[r * n + c] = pa[r * n + c] + pb[c];
  record(out, [a, bias, out, m, n] {
    const double* dc = out->grad().data();
    if (a->requires_grad()) {
      double* da = a->grad_buffer().data();
      for (size_t i = 0; i < m * n; ++i) da[i] += dc[i];
    }
    if (bias->requires_grad()) {
      double* db = bias->grad_buffer().data();
      for (size_t r = 0; r < m; ++r)
        for (size_t c = 0; c < n; ++c) db[c] += dc[r * n + c];
    }
  });
  return out;
}

TensorPtr Graph::hadamard(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape("hadamard", a, b);
  consume(a);
  consume(b);
  auto out = make_out(a->shape(), a->requires_grad() || b->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  const double* pb = b->data().data();
  double* po = out->mutable_data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  record(out, [a, b, out, n] {
    const double* dc = out->grad().data();
    if (a->requires_grad()) {
      double* da = a->grad_buffer().data();
      const double* pb2 = b->data().data();
      for (size_t i = 0; i < n; ++i) da[i] += dc[i] * pb2[i];
    }
    if (b->requires_grad()) {
      double* db = b->grad_buffer().data();
      const double* pa2 = a->data().data();
      for (size_t i = 0; i < n; ++i) db[i] += dc[i] * pa2[i];
    }
  });
  return out;
}

TensorPtr Graph::apply_mask(const TensorPtr& a, const TensorPtr& mask) {
  if (mask->requires_grad())
    throw ConfigError("apply_mask: dropout masks must not require grad");
  return hadamard(a, mask);
}

TensorPtr Graph::sigmoid(const TensorPtr& a) {
  consume(a);
  auto out = make_out(a->shape(), a->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  double* po = out->mutable_data().data();
  sigmoid_buf(pa, po, n);
  record(out, [a, out, n] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    const double* y = out->data().data();
    double* da = a->grad_buffer().data();
    for (size_t i = 0; i < n; ++i) da[i] += dc[i] * y[i] * (1.0 - y[i]);
  });
  return out;
}

TensorPtr Graph::tanh(const TensorPtr& a) {
  consume(a);
  auto out = make_out(a->shape(), a->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  double* po = out->mutable_data().data();
  tanh_buf(pa, po, n);
  record(out, [a, out, n] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    const double* y = out->data().data();
    double* da = a->grad_buffer().data();
    for (size_t i = 0; i < n; ++i) da[i] += dc[i] * (1.0 - y[i] * y[i]);
  });
  return out;
}

TensorPtr Graph::square(const TensorPtr& a) {
  consume(a);
  auto out = make_out(a->shape(), a->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  double* po = out->mutable_data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pa[i];
  record(out, [a, out, n] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    const double* x = a->data().data();
    double* da = a->grad_buffer().data();
    for (size_t i = 0; i < n; ++i) da[i] += 2.0 * dc[i] * x[i];
  });
  return out;
}

TensorPtr Graph::scale(const TensorPtr& a, double s) {
  consume(a);
  auto out = make_out(a->shape(), a->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  double* po = out->mutable_data().data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  record(out, [a, out, n, s] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    double* da = a->grad_buffer().data();
    for (size_t i = 0; i < n; ++i) da[i] += dc[i] * s;
  });
  return out;
}

TensorPtr Graph::concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const size_t n = parts[0]->cols();
  size_t m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_rank2("concat_rows", p);
    if (p->cols() != n)
      throw DimensionError("concat_rows: column mismatch " +
                           shape_str(parts[0]->shape()) + " vs " +
                           shape_str(p->shape()));
    m += p->rows();
    rg = rg || p->requires_grad();
    consume(p);
  }
  auto out = make_out({m, n}, rg);
  double* po = out->mutable_data().data();
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data().begin(), p->data().end(), po + off);
    off += p->size();
  }
  record(out, [parts, out] {
    const double* dc = out->grad().data();
    size_t off2 = 0;
    for (const auto& p : parts) {
      if (p->requires_grad()) {
        double* dp = p->grad_buffer().data();
        const size_t sz = p->size();
        for (size_t i = 0; i < sz; ++i) dp[i] += dc[off2 + i];
      }
      off2 += p->size();
    }
  });
  return out;
}

TensorPtr Graph::slice_rows(const TensorPtr& a, size_t r0, size_t r1) {
  check_rank2("slice_rows", a);
  if (r0 >= r1 || r1 > a->rows())
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") out of " +
                         shape_str(a->shape()));
  consume(a);
  const size_t n = a->cols();
  auto out = make_out({r1 - r0, n}, a->requires_grad());
  const double* pa = a->data().data() + r0 * n;
  std::copy(pa, pa + (r1 - r0) * n, out->mutable_data().data());
  record(out, [a, out, r0, n] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    double* da = a->grad_buffer().data() + r0 * n;
    const size_t sz = out->size();
    for (size_t i = 0; i < sz; ++i) da[i] += dc[i];
  });
  return out;
}

TensorPtr Graph::slice_cols(const TensorPtr& a, size_t c0, size_t c1) {
  check_rank2("slice_cols", a);
  if (c0 >= c1 || c1 > a->cols())
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") out of " +
                         shape_str(a->shape()));
  consume(a);
  const size_t m = a->rows(), n = a->cols(), w = c1 - c0;
  auto out = make_out({m, w}, a->requires_grad());
  const double* pa = a->data().data();
  double* po = out->mutable_data().data();
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < w; ++c) po[r * w + c] = pa[r * n + c0 + c];
  record(out, [a, out, c0, m, n, w] {
    if (!a->requires_grad()) return;
    const double* dc = out->grad().data();
    double* da = a->grad_buffer().data();
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < w; ++c) da[r * n + c0 + c] += dc[r * w + c];
  });
  return out;
}

TensorPtr Graph::gather_rows(const TensorPtr& table,
                             const std::vector<int32_t>& idx) {
  return gather_rows_scaled(table, idx, {});
}

TensorPtr Graph::gather_rows_scaled(const TensorPtr& table,
                                    const std::vector<int32_t>& idx,
                                    const std::vector<double>& row_scale) {
  check_rank2("gather_rows", table);
  if (!row_scale.empty() && row_scale.size() != idx.size())
    throw DimensionError("gather_rows: scale count " +
                         std::to_string(row_scale.size()) +
                         " does not match index count " +
                         std::to_string(idx.size()));
  const size_t v = table->rows(), e = table->cols();
  for (int32_t i : idx)
    if (i < 0 || static_cast<size_t>(i) >= v)
      throw IndexError("gather_rows: index " + std::to_string(i) +
                       " out of table " + shape_str(table->shape()));
  consume(table);
  auto out = make_out({idx.size(), e}, table->requires_grad());
  const double* pt = table->data().data();
  double* po = out->mutable_data().data();
  for (size_t r = 0; r < idx.size(); ++r) {
    const double s = row_scale.empty() ? 1.0 : row_scale[r];
    const double* src = pt + static_cast<size_t>(idx[r]) * e;
    for (size_t c = 0; c < e; ++c) po[r * e + c] = src[c] * s;
  }
  record(out, [table, out, idx, row_scale, e] {
    if (!table->requires_grad()) return;
    const double* dc = out->grad().data();
    double* dt = table->grad_buffer().data();
    for (size_t r = 0; r < idx.size(); ++r) {
      const double s = row_scale.empty() ? 1.0 : row_scale[r];
      double* dst = dt + static_cast<size_t>(idx[r]) * e;
      for (size_t c = 0; c < e; ++c) dst[c] += dc[r * e + c] * s;
    }
  });
  return out;
}

TensorPtr Graph::mean_all(const TensorPtr& a) {
  if (a->size() == 0) throw DimensionError("mean_all: empty tensor");
  consume(a);
  auto out = make_out({1}, a->requires_grad());
  const size_t n = a->size();
  const double* pa = a->data().data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += pa[i];
  out->mutable_data()[0] = acc / static_cast<double>(n);
  record(out, [a, out, n] {
    if (!a->requires_grad()) return;
    const double g = out->grad()[0] / static_cast<double>(n);
    double* da = a->grad_buffer().data();
    for (size_t i = 0; i < n; ++i) da[i] += g;
  });
  return out;
}

TensorPtr Graph::softmax_cross_entropy(const TensorPtr& logits,
                                       const std::vector<int32_t>& targets) {
  check_rank2("softmax_cross_entropy", logits);
  const size_t n = logits->rows(), v = logits->cols();
  if (targets.size() != n)
    throw DimensionError("softmax_cross_entropy: " +
                         std::to_string(targets.size()) + " targets for " +
                         shape_str(logits->shape()));
  if (n == 0) throw DimensionError("softmax_cross_entropy: no positions");
  for (int32_t t : targets)
    if (t < 0 || static_cast<size_t>(t) >= v)
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                       " out of vocabulary " + std::to_string(v));
  consume(logits);
  auto out = make_out({1}, logits->requires_grad());
  const double* px = logits->data().data();
  std::vector<double> row_exp(v);
  double acc = 0.0;
  for (size_t r = 0; r < n; ++r) {
    const double* row = px + r * v;
    double mx = row[0];
    for (size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    exp_shifted_buf(row, mx, row_exp.data(), v);
    double denom = 0.0;
    for (size_t c = 0; c < v; ++c) denom += row_exp[c];
    acc += mx + std::log(denom) - row[static_cast<size_t>(targets[r])];
  }
  out->mutable_data()[0] = acc / static_cast<double>(n);
  record(out, [logits, out, targets, n, v] {
    if (!logits->requires_grad()) return;
    const double g = out->grad()[0] / static_cast<double>(n);
    const double* px2 = logits->data().data();
    double* dx = logits->grad_buffer().data();
    std::vector<double> row_exp(v);
    for (size_t r = 0; r < n; ++r) {
      const double* row = px2 + r * v;
      double mx = row[0];
      for (size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
      exp_shifted_buf(row, mx, row_exp.data(), v);
      double denom = 0.0;
      for (size_t c = 0; c < v; ++c) denom += row_exp[c];
      double* drow = dx + r * v;
      const double ginv = g / denom;
      for (size_t c = 0; c < v; ++c) drow[c] += ginv * row_exp[c];
      drow[static_cast<size_t>(targets[r])] -= g;
    }
  });
  return out;
}

void Graph::backward(const TensorPtr& loss) {
  if (backward_done_)
    throw StateError("backward: already invoked on this graph");
  if (!produced_.count(loss.get()))
    throw StateError("backward: loss was not produced by this graph");
  if (loss->size() != 1)
    throw DimensionError("backward: loss is not scalar, shape " +
                         shape_str(loss->shape()));
  backward_done_ = true;
  loss->grad_buffer()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->backward_fn();
}

double finite_difference_check(const std::function<TensorPtr(Graph&)>& build,
                               const std::vector<TensorPtr>& params,
                               double eps) {
  if (eps <= 0.0) throw ConfigError("finite_difference_check: eps must be > 0");
  for (const auto& p : params) {
    p->grad_buffer();
    p->zero_grad();
  }
  {
    Graph g;
    auto loss = build(g);
    if (!std::isfinite(loss->item()))
      throw NumericError("finite_difference_check: non-finite loss");
    g.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.emplace_back(p->grad().begin(), p->grad().end());

  auto eval = [&]() {
    Graph g;
    double f = build(g)->item();
    if (!std::isfinite(f))
      throw NumericError("finite_difference_check: non-finite value");
    return f;
  };

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& d = params[pi]->mutable_data();
    for (size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + eps;
      const double fp = eval();
      d[i] = orig - eps;
      const double fm = eval();
      d[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      if (!std::isfinite(numeric))
        throw NumericError("finite_difference_check: non-finite difference");
      const double rel = std::abs(analytic[pi][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mllm

#include "mllm/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_map>

namespace mllm {

namespace detail {

namespace {
// Exact-size free lists; shapes repeat across segments so hit rates are
// near 100% after the first graph.
std::unordered_map<size_t, std::vector<double*>>& pool() {
  static std::unordered_map<size_t, std::vector<double*>> p;
  return p;
}
}  // namespace

double* pool_acquire(size_t n) {
  auto& free_list = pool()[n];
  if (!free_list.empty()) {
    double* p = free_list.back();
    free_list.pop_back();
    return p;
  }
  return static_cast<double*>(::operator new(n * sizeof(double)));
}

void pool_release(double* p, size_t n) {
  pool()[n].push_back(p);
}

}  // namespace detail

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {
size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  data_.assign(numel(shape_), 0.0);
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr Tensor::uninit(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>(Shape{}, requires_grad);
  t->shape_ = std::move(shape);
  t->data_.resize(numel(t->shape_));
  return t;
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  std::fill(t->data_.begin(), t->data_.end(), value);
  return t;
}

TensorPtr Tensor::from(Shape shape, std::vector<double> values,
                       bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  if (values.size() != t->size())
    throw DimensionError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t->shape_));
  t->data_.assign(values.begin(), values.end());
  return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

size_t Tensor::rows() const {
  if (shape_.size() != 2)
    throw DimensionError("rows(): tensor is not rank-2, shape " +
                         shape_str(shape_));
  return shape_[0];
}

size_t Tensor::cols() const {
  if (shape_.size() != 2)
    throw DimensionError("cols(): tensor is not rank-2, shape " +
                         shape_str(shape_));
  return shape_[1];
}

DataVec& Tensor::mutable_data() {
  if (frozen())
    throw StateError(
        "tensor data is frozen: it was consumed by a live graph and may only "
        "be mutated after that graph is destroyed");
  return data_;
}

const DataVec& Tensor::grad() const {
  if (grad_.empty()) throw StateError("tensor has no gradient buffer");
  return grad_;
}

DataVec& Tensor::grad_buffer() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1)
    throw DimensionError("item(): tensor is not scalar, shape " +
                         shape_str(shape_));
  return data_[0];
}

void Tensor::thaw() {
  if (freeze_count_ <= 0) throw StateError("thaw() on a tensor not frozen");
  --freeze_count_;
}

}  // namespace mllm

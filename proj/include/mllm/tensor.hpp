#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mllm/errors.hpp"

namespace mllm {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;
using Shape = std::vector<size_t>;

// Buffer recycling for tensor storage. Graphs allocate and free the same
// handful of shapes every segment; an exact-size free list avoids the
// malloc/page-fault churn that otherwise dominates small-model training.
// Single-threaded by design (training is single-threaded per process).
namespace detail {
double* pool_acquire(size_t n);
void pool_release(double* p, size_t n);
}  // namespace detail

// Allocator that leaves doubles default-initialized; op outputs are written
// in full, so zero-filling them first would only cost memory bandwidth.
template <class T>
struct NoInitAlloc {
  using value_type = T;
  NoInitAlloc() = default;
  template <class U>
  NoInitAlloc(const NoInitAlloc<U>&) {}
  T* allocate(size_t n) {
    if constexpr (std::is_same_v<T, double>)
      return detail::pool_acquire(n);
    else
      return std::allocator<T>().allocate(n);
  }
  void deallocate(T* p, size_t n) {
    if constexpr (std::is_same_v<T, double>)
      detail::pool_release(p, n);
    else
      std::allocator<T>().deallocate(p, n);
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0)
      ::new (static_cast<void*>(p)) U;
    else
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  bool operator==(const NoInitAlloc&) const { return true; }
  bool operator!=(const NoInitAlloc&) const { return false; }
};

using DataVec = std::vector<double, NoInitAlloc<double>>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats, optionally carrying a gradient
// buffer of the same shape. Once a tensor has been consumed by a graph op it
// is frozen: its data may not be mutated until every graph that consumed it
// has been destroyed. Parameter updates therefore happen strictly between
// graph constructions.
class Tensor {
 public:
  Tensor(Shape shape, bool requires_grad);

  static TensorPtr zeros(Shape shape, bool requires_grad = false);
  // Uninitialized buffer for op outputs that are written in full.
  static TensorPtr uninit(Shape shape, bool requires_grad = false);
  static TensorPtr full(Shape shape, double value, bool requires_grad = false);
  static TensorPtr from(Shape shape, std::vector<double> values,
                        bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  size_t rows() const;  // rank-2 convenience
  size_t cols() const;

  const DataVec& data() const { return data_; }
  // Throws StateError while the tensor is consumed by a live graph.
  DataVec& mutable_data();

  bool requires_grad() const { return requires_grad_; }
  bool has_grad() const { return !grad_.empty(); }
  const DataVec& grad() const;
  // Allocates (zero-filled) on first use.
  DataVec& grad_buffer();
  void zero_grad();

  double item() const;  // value of a scalar tensor

  bool frozen() const { return freeze_count_ > 0; }
  void freeze() { ++freeze_count_; }
  void thaw();

 private:
  Shape shape_;
  DataVec data_;
  DataVec grad_;
  bool requires_grad_;
  int freeze_count_ = 0;
};

}  // namespace mllm

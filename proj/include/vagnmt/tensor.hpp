#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A BasicTensor is a shared handle to storage (shape, values, gradient). A
// BasicGraph records every operation applied through it on a tape; backward()
// walks that tape in reverse. Parameters are leaf tensors created outside any
// graph, and a fresh graph is built for every forward pass.
//
// Shapes are rank 1 or rank 2 in practice. Scalars have shape {1}.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vagnmt/random.hpp"

namespace vagnmt::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is written
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_touched = false;  // non-leaf only: received a contribution this pass
};

template <typename T>
class BasicGraph;

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor filled(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);
  // Rank-1 tensor, or a {1, n} row when as_row is set.
  static BasicTensor vector(std::vector<T> values, bool as_row = false,
                            bool requires_grad = false);
  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                            bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t size() const { return storage_->value.size(); }
  // Rows and columns when viewed as a matrix; rank-1 tensors are one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return storage_->value; }
  std::span<T> mutable_data() { return storage_->value; }
  T item() const;
  T at(std::size_t i) const { return storage_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return storage_->value.at(r * cols() + c); }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool flag) { storage_->requires_grad = flag; }
  bool is_leaf() const { return storage_->is_leaf; }
  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  // Deep copy detached from any graph.
  BasicTensor clone() const;

  // True when both handles refer to the same storage.
  bool same(const BasicTensor& other) const { return storage_ == other.storage_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorStorage<T>> storage)
      : storage_(std::move(storage)) {}

  std::shared_ptr<TensorStorage<T>> storage_;

  friend class BasicGraph<T>;
};

enum class GradMode { kRecord, kNoGrad };

template <typename T>
class BasicGraph {
 public:
  using Tensor = BasicTensor<T>;

  explicit BasicGraph(GradMode mode = GradMode::kRecord) : mode_(mode) {}
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  bool recording() const { return mode_ == GradMode::kRecord; }
  std::size_t num_ops() const { return tape_.size(); }

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  // x·Wᵀ + b for x of shape {in} or {rows, in}, W of shape {out, in}.
  // The bias may be undefined.
  Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
  Tensor dot(const Tensor& a, const Tensor& b);
  Tensor cosine_similarity(const Tensor& a, const Tensor& b);

  // Elementwise.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, T factor);
  Tensor affine(const Tensor& x, T factor, T offset);  // factor·x + offset
  Tensor tanh(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor relu(const Tensor& x);

  // Normalizers over the last axis.
  Tensor softmax(const Tensor& z);
  Tensor log_softmax(const Tensor& z);

  // Reductions and sums.
  Tensor sum(const Tensor& x);
  Tensor add_n(std::span<const Tensor> terms);
  Tensor mean_rows(const Tensor& x);  // {n, d} -> {1, d}

  // Structural.
  Tensor reshape(const Tensor& x, Shape shape);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor stack_rows(std::span<const Tensor> rows);
  Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
  Tensor row(const Tensor& x, std::size_t index);
  Tensor gather_rows(const Tensor& table, std::span<const int> indices);
  // out[r] = x[r, indices[r]]; shape {rows}.
  Tensor pick(const Tensor& x, std::span<const int> indices);

  // Additive attention energies: out[k, i] = Σ_j v[j] · tanh(queries[k, j] + keys[i, j]).
  Tensor additive_scores(const Tensor& queries, const Tensor& keys, const Tensor& v);

  // Inverted dropout. Identity when !training or p == 0.
  Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

  // Reverse pass from a scalar. Intermediate gradients are reset on every call;
  // leaf gradients accumulate until zero_grad().
  void backward(const Tensor& loss);

 private:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;

  struct Op {
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    std::function<void()> backward;
  };

  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;
  Tensor make_result(Shape shape, std::vector<T> value, bool requires_grad);
  void record(std::vector<StoragePtr> inputs, const Tensor& output, std::function<void()> fn);

  GradMode mode_;
  std::vector<Op> tape_;
};

using Tensor = BasicTensor<float>;
using Graph = BasicGraph<float>;

}  // namespace vagnmt::ad

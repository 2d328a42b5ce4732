#include "vagnmt/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "vagnmt/error.hpp"

namespace vagnmt::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

template <typename T>
using MatrixR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatrixR<T>>;
template <typename T>
using ConstMapR = Eigen::Map<const MatrixR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
ConstMapR<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMapR<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MapR<T> as_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MapR<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstVecMap<T> as_vector(const std::vector<T>& v) {
  return ConstVecMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename T>
VecMap<T> as_vector(std::vector<T>& v) {
  return VecMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Gradient buffer of a storage, allocated and zeroed on first use.
template <typename T>
std::vector<T>& grad_of(TensorStorage<T>& s) {
  if (s.grad.size() != s.value.size()) s.grad.assign(s.value.size(), T(0));
  s.grad_touched = true;
  return s.grad;
}

[[noreturn]] void dimension_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(s));
  }
}

template <typename T>
void require_finite(const char* op, const std::vector<T>& v) {
  for (T x : v) {
    if (!std::isfinite(x)) throw NumericDomainError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : storage_(std::make_shared<TensorStorage<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (shape.empty()) shape = {1};
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->value = std::move(values);
  storage_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor({1}, {value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::vector<T> values, bool as_row, bool requires_grad) {
  const std::size_t n = values.size();
  return BasicTensor(as_row ? Shape{1, n} : Shape{n}, std::move(values), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                                      bool requires_grad) {
  return BasicTensor({rows, cols}, std::move(values), requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  return rows_of(storage_->shape);
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  return cols_of(storage_->shape);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return storage_->value[0];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (storage_->grad.size() != storage_->value.size()) {
    storage_->grad.assign(storage_->value.size(), T(0));
  }
  return storage_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(storage_->shape, storage_->value, storage_->requires_grad);
}

// ---------------------------------------------------------------------------
// BasicGraph plumbing

template <typename T>
bool BasicGraph<T>::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

template <typename T>
BasicTensor<T> BasicGraph<T>::make_result(Shape shape, std::vector<T> value, bool requires_grad) {
  auto storage = std::make_shared<TensorStorage<T>>();
  storage->shape = std::move(shape);
  storage->value = std::move(value);
  storage->requires_grad = requires_grad;
  storage->is_leaf = false;
  return Tensor(std::move(storage));
}

template <typename T>
void BasicGraph<T>::record(std::vector<StoragePtr> inputs, const Tensor& output,
                           std::function<void()> fn) {
  tape_.push_back(Op{std::move(inputs), output.storage_, std::move(fn)});
}

template <typename T>
void BasicGraph<T>::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  for (Op& op : tape_) {
    std::fill(op.output->grad.begin(), op.output->grad.end(), T(0));
    op.output->grad_touched = false;
  }
  auto& seed = grad_of(*loss.storage_);
  seed[0] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    if (it->output->grad_touched) it->backward();
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> BasicGraph<T>::matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a.shape());
  require_rank2("matmul", b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) dimension_error("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.storage_->value, m, k) * as_matrix(b.storage_->value, k, n);
  Tensor result = make_result({m, n}, std::move(out), needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so, m, k, n] {
      auto dc = as_matrix(std::as_const(so->grad), m, n);
      if (sa->requires_grad) {
        as_matrix(grad_of(*sa), m, k).noalias() += dc * as_matrix(std::as_const(sb->value), k, n).transpose();
      }
      if (sb->requires_grad) {
        as_matrix(grad_of(*sb), k, n).noalias() += as_matrix(std::as_const(sa->value), m, k).transpose() * dc;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::transpose(const Tensor& a) {
  require_rank2("transpose", a.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  as_matrix(out, n, m) = as_matrix(a.storage_->value, m, n).transpose();
  Tensor result = make_result({n, m}, std::move(out), needs_grad({&a}));
  if (result.requires_grad()) {
    auto sa = a.storage_, so = result.storage_;
    record({sa}, result, [sa, so, m, n] {
      as_matrix(grad_of(*sa), m, n) += as_matrix(std::as_const(so->grad), n, m).transpose();
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2("linear", weight.shape());
  if (x.rank() > 2) dimension_error("linear", x.shape(), weight.shape());
  const std::size_t rows = x.rows(), in = x.cols(), out = weight.dim(0);
  if (weight.dim(1) != in) dimension_error("linear", x.shape(), weight.shape());
  if (bias.defined() && bias.size() != out) dimension_error("linear", weight.shape(), bias.shape());
  std::vector<T> y(rows * out);
  auto ym = as_matrix(y, rows, out);
  const auto xm = as_matrix(x.storage_->value, rows, in);
  const auto wm = as_matrix(weight.storage_->value, out, in);
  if (rows == 1) {
    // Matrix-vector form is markedly faster than a 1-row GEMM.
    as_vector(y).noalias() = wm * as_vector(x.storage_->value);
  } else {
    ym.noalias() = xm * wm.transpose();
  }
  if (bias.defined()) ym.rowwise() += as_vector(bias.storage_->value).transpose();
  Shape shape = x.rank() == 1 ? Shape{out} : Shape{rows, out};
  Tensor result = make_result(std::move(shape), std::move(y), needs_grad({&x, &weight, &bias}));
  if (result.requires_grad()) {
    auto sx = x.storage_, sw = weight.storage_, so = result.storage_;
    auto sb = bias.defined() ? bias.storage_ : nullptr;
    record({sx, sw}, result, [sx, sw, sb, so, rows, in, out] {
      const auto dy = as_matrix(std::as_const(so->grad), rows, out);
      if (sx->requires_grad) {
        if (rows == 1) {
          as_vector(grad_of(*sx)).noalias() +=
              as_matrix(std::as_const(sw->value), out, in).transpose() * as_vector(std::as_const(so->grad));
        } else {
          as_matrix(grad_of(*sx), rows, in).noalias() += dy * as_matrix(std::as_const(sw->value), out, in);
        }
      }
      if (sw->requires_grad) {
        auto dw = as_matrix(grad_of(*sw), out, in);
        if (rows == 1) {
          dw.noalias() += as_vector(std::as_const(so->grad)) * as_vector(std::as_const(sx->value)).transpose();
        } else {
          dw.noalias() += dy.transpose() * as_matrix(std::as_const(sx->value), rows, in);
        }
      }
      if (sb && sb->requires_grad) {
        as_vector(grad_of(*sb)) += dy.colwise().sum().transpose();
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) dimension_error("dot", a.shape(), b.shape());
  const T value = as_vector(a.storage_->value).dot(as_vector(b.storage_->value));
  Tensor result = make_result({1}, {value}, needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so] {
      const T g = so->grad[0];
      if (sa->requires_grad) as_vector(grad_of(*sa)) += g * as_vector(std::as_const(sb->value));
      if (sb->requires_grad) as_vector(grad_of(*sb)) += g * as_vector(std::as_const(sa->value));
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) dimension_error("cosine_similarity", a.shape(), b.shape());
  const auto va = as_vector(a.storage_->value);
  const auto vb = as_vector(b.storage_->value);
  const T na = va.norm(), nb = vb.norm();
  if (!(na > T(0)) || !(nb > T(0)) || !std::isfinite(na) || !std::isfinite(nb)) {
    throw NumericDomainError("cosine_similarity: zero-norm or non-finite vector");
  }
  const T cos = va.dot(vb) / (na * nb);
  Tensor result = make_result({1}, {cos}, needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so, na, nb, cos] {
      const T g = so->grad[0];
      const auto xa = as_vector(std::as_const(sa->value));
      const auto xb = as_vector(std::as_const(sb->value));
      // d cos / da = b / (|a||b|) - cos · a / |a|²
      if (sa->requires_grad) {
        as_vector(grad_of(*sa)) += g * (xb / (na * nb) - (cos / (na * na)) * xa);
      }
      if (sb->requires_grad) {
        as_vector(grad_of(*sb)) += g * (xa / (na * nb) - (cos / (nb * nb)) * xb);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> BasicGraph<T>::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  as_vector(out) = as_vector(a.storage_->value) + as_vector(b.storage_->value);
  Tensor result = make_result(a.shape(), std::move(out), needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so] {
      const auto g = as_vector(std::as_const(so->grad));
      if (sa->requires_grad) as_vector(grad_of(*sa)) += g;
      if (sb->requires_grad) as_vector(grad_of(*sb)) += g;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  as_vector(out) = as_vector(a.storage_->value) - as_vector(b.storage_->value);
  Tensor result = make_result(a.shape(), std::move(out), needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so] {
      const auto g = as_vector(std::as_const(so->grad));
      if (sa->requires_grad) as_vector(grad_of(*sa)) += g;
      if (sb->requires_grad) as_vector(grad_of(*sb)) -= g;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  as_vector(out) = as_vector(a.storage_->value).cwiseProduct(as_vector(b.storage_->value));
  Tensor result = make_result(a.shape(), std::move(out), needs_grad({&a, &b}));
  if (result.requires_grad()) {
    auto sa = a.storage_, sb = b.storage_, so = result.storage_;
    record({sa, sb}, result, [sa, sb, so] {
      const auto g = as_vector(std::as_const(so->grad));
      if (sa->requires_grad) as_vector(grad_of(*sa)) += g.cwiseProduct(as_vector(std::as_const(sb->value)));
      if (sb->requires_grad) as_vector(grad_of(*sb)) += g.cwiseProduct(as_vector(std::as_const(sa->value)));
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::scale(const Tensor& x, T factor) {
  return affine(x, factor, T(0));
}

template <typename T>
BasicTensor<T> BasicGraph<T>::affine(const Tensor& x, T factor, T offset) {
  std::vector<T> out(x.size());
  as_vector(out) = (factor * as_vector(x.storage_->value)).array() + offset;
  Tensor result = make_result(x.shape(), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so, factor] {
      as_vector(grad_of(*sx)) += factor * as_vector(std::as_const(so->grad));
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::tanh(const Tensor& x) {
  std::vector<T> out(x.size());
  as_vector(out) = as_vector(x.storage_->value).array().tanh();
  Tensor result = make_result(x.shape(), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so] {
      const auto y = as_vector(std::as_const(so->value)).array();
      as_vector(grad_of(*sx)).array() += as_vector(std::as_const(so->grad)).array() * (T(1) - y * y);
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::sigmoid(const Tensor& x) {
  std::vector<T> out(x.size());
  const auto& xv = x.storage_->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Branching on sign avoids overflow in exp for large |x|.
    const T v = xv[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  Tensor result = make_result(x.shape(), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so] {
      const auto y = as_vector(std::as_const(so->value)).array();
      as_vector(grad_of(*sx)).array() += as_vector(std::as_const(so->grad)).array() * y * (T(1) - y);
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::relu(const Tensor& x) {
  std::vector<T> out(x.size());
  as_vector(out) = as_vector(x.storage_->value).cwiseMax(T(0));
  Tensor result = make_result(x.shape(), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so] {
      auto& gx = grad_of(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (sx->value[i] > T(0)) gx[i] += so->grad[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalizers

template <typename T>
BasicTensor<T> BasicGraph<T>::softmax(const Tensor& z) {
  require_finite("softmax", z.storage_->value);
  const std::size_t rows = z.rows(), cols = z.cols();
  std::vector<T> out(z.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = z.storage_->value.data() + r * cols;
    T* o = out.data() + r * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  Tensor result = make_result(z.shape(), std::move(out), needs_grad({&z}));
  if (result.requires_grad()) {
    auto sz = z.storage_, so = result.storage_;
    record({sz}, result, [sz, so, rows, cols] {
      auto& gz = grad_of(*sz);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = so->value.data() + r * cols;
        const T* gy = so->grad.data() + r * cols;
        T inner = 0;
        for (std::size_t c = 0; c < cols; ++c) inner += gy[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) gz[r * cols + c] += y[c] * (gy[c] - inner);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::log_softmax(const Tensor& z) {
  require_finite("log_softmax", z.storage_->value);
  const std::size_t rows = z.rows(), cols = z.cols();
  std::vector<T> out(z.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = z.storage_->value.data() + r * cols;
    T* o = out.data() + r * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - peak);
    const T log_norm = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - log_norm;
  }
  Tensor result = make_result(z.shape(), std::move(out), needs_grad({&z}));
  if (result.requires_grad()) {
    auto sz = z.storage_, so = result.storage_;
    record({sz}, result, [sz, so, rows, cols] {
      auto& gz = grad_of(*sz);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = so->value.data() + r * cols;
        const T* gy = so->grad.data() + r * cols;
        T total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += gy[c];
        for (std::size_t c = 0; c < cols; ++c) gz[r * cols + c] += gy[c] - std::exp(y[c]) * total;
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> BasicGraph<T>::sum(const Tensor& x) {
  const T total = as_vector(x.storage_->value).sum();
  Tensor result = make_result({1}, {total}, needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so] { as_vector(grad_of(*sx)).array() += so->grad[0]; });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  std::vector<T> out(terms[0].size(), T(0));
  bool grad = false;
  for (const Tensor& t : terms) {
    if (t.shape() != terms[0].shape()) dimension_error("add_n", terms[0].shape(), t.shape());
    as_vector(out) += as_vector(t.storage_->value);
    grad = grad || needs_grad({&t});
  }
  Tensor result = make_result(terms[0].shape(), std::move(out), grad);
  if (result.requires_grad()) {
    std::vector<StoragePtr> inputs;
    inputs.reserve(terms.size());
    for (const Tensor& t : terms) inputs.push_back(t.storage_);
    auto so = result.storage_;
    record(inputs, result, [inputs, so] {
      const auto g = as_vector(std::as_const(so->grad));
      for (const auto& s : inputs) {
        if (s->requires_grad) as_vector(grad_of(*s)) += g;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::mean_rows(const Tensor& x) {
  require_rank2("mean_rows", x.shape());
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(d);
  as_vector(out) = as_matrix(x.storage_->value, n, d).colwise().mean().transpose();
  Tensor result = make_result({1, d}, std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so, n, d] {
      as_matrix(grad_of(*sx), n, d).rowwise() +=
          (as_vector(std::as_const(so->grad)) / static_cast<T>(n)).transpose();
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
BasicTensor<T> BasicGraph<T>::reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) dimension_error("reshape", x.shape(), shape);
  Tensor result = make_result(std::move(shape), x.storage_->value, needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so] { as_vector(grad_of(*sx)) += as_vector(std::as_const(so->grad)); });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) dimension_error("concat_cols", parts[0].shape(), p.shape());
    total += p.cols();
    grad = grad || needs_grad({&p});
  }
  std::vector<T> out(rows * total);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    as_matrix(out, rows, total).middleCols(offset, p.cols()) = as_matrix(p.storage_->value, rows, p.cols());
    offsets.push_back(offset);
    offset += p.cols();
  }
  Shape shape = (parts[0].rank() == 1) ? Shape{total} : Shape{rows, total};
  Tensor result = make_result(std::move(shape), std::move(out), grad);
  if (result.requires_grad()) {
    std::vector<StoragePtr> inputs;
    for (const Tensor& p : parts) inputs.push_back(p.storage_);
    auto so = result.storage_;
    record(inputs, result, [inputs, offsets, so, rows, total] {
      const auto g = as_matrix(std::as_const(so->grad), rows, total);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& s = inputs[i];
        if (!s->requires_grad) continue;
        const std::size_t c = cols_of(s->shape);
        as_matrix(grad_of(*s), rows, c) += g.middleCols(offsets[i], c);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t d = rows[0].size();
  std::vector<T> out;
  out.reserve(rows.size() * d);
  bool grad = false;
  for (const Tensor& r : rows) {
    if (r.size() != d) dimension_error("stack_rows", rows[0].shape(), r.shape());
    out.insert(out.end(), r.storage_->value.begin(), r.storage_->value.end());
    grad = grad || needs_grad({&r});
  }
  Tensor result = make_result({rows.size(), d}, std::move(out), grad);
  if (result.requires_grad()) {
    std::vector<StoragePtr> inputs;
    for (const Tensor& r : rows) inputs.push_back(r.storage_);
    auto so = result.storage_;
    record(inputs, result, [inputs, so, d] {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]->requires_grad) continue;
        auto& g = grad_of(*inputs[i]);
        for (std::size_t c = 0; c < d; ++c) g[c] += so->grad[i * d + c];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (count == 0 || start + count > cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for shape " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(rows * count);
  as_matrix(out, rows, count) = as_matrix(x.storage_->value, rows, cols).middleCols(start, count);
  Shape shape = x.rank() == 1 ? Shape{count} : Shape{rows, count};
  Tensor result = make_result(std::move(shape), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so, rows, cols, start, count] {
      as_matrix(grad_of(*sx), rows, cols).middleCols(start, count) +=
          as_matrix(std::as_const(so->grad), rows, count);
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::row(const Tensor& x, std::size_t index) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (index >= rows) {
    throw DimensionError("row: index " + std::to_string(index) + " out of range for shape " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(x.storage_->value.begin() + index * cols,
                     x.storage_->value.begin() + (index + 1) * cols);
  Tensor result = make_result({1, cols}, std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so, index, cols] {
      auto& g = grad_of(*sx);
      for (std::size_t c = 0; c < cols; ++c) g[index * cols + c] += so->grad[c];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::gather_rows(const Tensor& table, std::span<const int> indices) {
  require_rank2("gather_rows", table.shape());
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw InputError("gather_rows: no indices");
  std::vector<T> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= vocab) {
      throw InputError("gather_rows: index " + std::to_string(idx) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(table.storage_->value.begin() + idx * d, d, out.begin() + i * d);
  }
  Tensor result = make_result({indices.size(), d}, std::move(out), needs_grad({&table}));
  if (result.requires_grad()) {
    auto st = table.storage_, so = result.storage_;
    std::vector<int> idx(indices.begin(), indices.end());
    record({st}, result, [st, so, idx = std::move(idx), d] {
      auto& g = grad_of(*st);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) g[idx[i] * d + c] += so->grad[i * d + c];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::pick(const Tensor& x, std::span<const int> indices) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (indices.size() != rows) {
    throw DimensionError("pick: " + std::to_string(indices.size()) + " indices for shape " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= cols) {
      throw InputError("pick: index " + std::to_string(indices[r]) + " out of range");
    }
    out[r] = x.storage_->value[r * cols + indices[r]];
  }
  Tensor result = make_result({rows}, std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    std::vector<int> idx(indices.begin(), indices.end());
    record({sx}, result, [sx, so, idx = std::move(idx), cols] {
      auto& g = grad_of(*sx);
      for (std::size_t r = 0; r < idx.size(); ++r) g[r * cols + idx[r]] += so->grad[r];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::additive_scores(const Tensor& queries, const Tensor& keys,
                                              const Tensor& v) {
  const std::size_t k = queries.rows(), a = queries.cols(), n = keys.rows();
  if (keys.cols() != a) dimension_error("additive_scores", queries.shape(), keys.shape());
  if (v.size() != a) dimension_error("additive_scores", queries.shape(), v.shape());
  const auto q = as_matrix(queries.storage_->value, k, a);
  const auto kk = as_matrix(keys.storage_->value, n, a);
  const auto vv = as_vector(v.storage_->value);
  // Cached activations tanh(q_k + key_i), row (k*n + i).
  auto act = std::make_shared<MatrixR<T>>(k * n, a);
  std::vector<T> out(k * n);
  for (std::size_t r = 0; r < k; ++r) {
    auto block = act->middleRows(r * n, n);
    block = (kk.rowwise() + q.row(r)).array().tanh();
    as_matrix(out, k, n).row(r) = (block * vv).transpose();
  }
  Tensor result = make_result({k, n}, std::move(out), needs_grad({&queries, &keys, &v}));
  if (result.requires_grad()) {
    auto sq = queries.storage_, sk = keys.storage_, sv = v.storage_, so = result.storage_;
    record({sq, sk, sv}, result, [sq, sk, sv, so, act, k, n, a] {
      const auto go = as_matrix(std::as_const(so->grad), k, n);
      const auto vv = as_vector(std::as_const(sv->value));
      for (std::size_t r = 0; r < k; ++r) {
        const auto block = act->middleRows(r * n, n);
        if (sv->requires_grad) as_vector(grad_of(*sv)) += block.transpose() * go.row(r).transpose();
        // d/d(pre-activation) = g · v ⊙ (1 − tanh²)
        MatrixR<T> pre = (go.row(r).transpose() * vv.transpose()).array() * (T(1) - block.array().square());
        if (sq->requires_grad) as_matrix(grad_of(*sq), k, a).row(r) += pre.colwise().sum();
        if (sk->requires_grad) as_matrix(grad_of(*sk), n, a) += pre;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> BasicGraph<T>::dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::vector<T> mask(x.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (T& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(x.size());
  as_vector(out) = as_vector(x.storage_->value).cwiseProduct(as_vector(std::as_const(mask)));
  Tensor result = make_result(x.shape(), std::move(out), needs_grad({&x}));
  if (result.requires_grad()) {
    auto sx = x.storage_, so = result.storage_;
    record({sx}, result, [sx, so, mask = std::move(mask)] {
      as_vector(grad_of(*sx)) += as_vector(std::as_const(so->grad)).cwiseProduct(as_vector(mask));
    });
  }
  return result;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace vagnmt::ad

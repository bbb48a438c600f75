#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace translico {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorNode;

template <typename T>
using BackwardFn = std::function<void(TensorNode<T>&)>;

// Storage plus the autodiff record. `backward` reads this node's grad and
// accumulates into the grads of `parents`.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  BackwardFn<T> backward;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Shared handle to a node. Copies alias the same storage; forward ops always
// allocate a fresh result, so values are never mutated through the graph.
// Rank-1 tensors of size n behave as 1 x n rows in matrix ops.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> values() const { return node_->value; }
  // Direct write access, meant for parameter leaves (initialization, optimizer).
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Copies values (and nothing else) into a fresh leaf of another precision.
template <typename U, typename T>
Tensor<U> cast_leaf(const Tensor<T>& t, bool requires_grad) {
  std::vector<U> v(t.values().begin(), t.values().end());
  return Tensor<U>::from(t.shape(), std::move(v), requires_grad);
}

// While alive on a thread, new op results do not record autodiff history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Builds an op result. History (parents + backward) is kept only if grad mode
// is on and some parent requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                      BackwardFn<T> backward, const char* op);

// Reverse-mode sweep from a scalar loss. Intermediate gradients are recomputed
// on every call; leaf gradients accumulate until zero_grad(). Throws
// NonScalarLoss.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- forward ops -----------------------------------------------------------
// All throw ShapeMismatch on incompatible operands.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a * b^T
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
// Adds a length-n bias to every row of an m x n matrix.
template <typename T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);
// a + c where c carries no gradient (e.g. an additive -inf mask).
template <typename T> Tensor<T> add_constant(const Tensor<T>& a, std::span<const T> c);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);
// axis 1: each row sums to 1; axis 0: each column sums to 1. Max-subtracted.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis = 1);
// Row-wise normalization followed by the affine gamma/beta (length n each).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
// tanh approximation
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// Throws IdOutOfRange.
template <typename T> Tensor<T> embed_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);
// Mean of the rows selected by mask -> 1 x n. Throws EmptyPool if none selected.
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a, std::span<const std::uint8_t> mask);
// One mean per group of row indices -> groups x n. Throws EmptyPool on an empty group.
template <typename T>
Tensor<T> segment_mean_rows(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups);
// Row-wise unit normalization. Zero rows stay zero; their count is written to
// zero_rows when given.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& a, std::size_t* zero_rows = nullptr);
// Scalar cosine of two equally sized vectors. Throws DegenerateNorm.
template <typename T> Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v);
// Pairwise cosine matrix of the rows of a and b. Throws DegenerateNorm.
template <typename T> Tensor<T> cosine_similarity_matrix(const Tensor<T>& a, const Tensor<T>& b);
// Mean over rows with target >= 0 of -log softmax(logits)[target]. Entries may
// be -inf (excluded candidates). Throws EmptyMaskSet if no row has a target.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);
// Multi-head scaled dot-product attention over `batch` sequences of seq_len
// rows each (q, k, v: batch*seq_len x d). valid[i] == 0 marks a padding row:
// it is never attended to and its own output row is zero.
template <typename T>
Tensor<T> masked_self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                std::size_t batch, std::size_t seq_len, std::size_t n_heads,
                                std::span<const std::uint8_t> valid);

}  // namespace translico

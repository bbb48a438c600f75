#include "translico/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include <Eigen/Core>

#include "translico/errors.hpp"

namespace translico {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

template <typename T>
ConstMatMap<T> cmap(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
MatMap<T> mmap(std::vector<T>& v, std::size_t r, std::size_t c) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::size_t rows_of(const Shape& s) {
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <typename T>
TensorNode<T>& parent(TensorNode<T>& n, std::size_t i) {
  return *n.parents[i];
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  require(shape_numel(shape) == values.size(),
          "tensor shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) + " values");
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from(Shape{}, std::vector<T>{value}, false);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return rows_of(node_->shape);
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return cols_of(node_->shape);
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, "item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                      BackwardFn<T> backward, const char* op) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const Tensor<T>& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw NonScalarLoss("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives parents before children.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---- ops ---------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<T> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  return make_result<T>(Shape{m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const auto g = cmap(self.grad, m, n);
    if (pa.requires_grad) mmap(pa.ensure_grad(), m, k).noalias() += g * cmap(pb.value, k, n).transpose();
    if (pb.requires_grad) mmap(pb.ensure_grad(), k, n).noalias() += cmap(pa.value, m, k).transpose() * g;
  }, "matmul");
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_nt " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  std::vector<T> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, n, k).transpose();
  return make_result<T>(Shape{m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const auto g = cmap(self.grad, m, n);
    if (pa.requires_grad) mmap(pa.ensure_grad(), m, k).noalias() += g * cmap(pb.value, n, k);
    if (pb.requires_grad) mmap(pb.ensure_grad(), n, k).noalias() += g.transpose() * cmap(pa.value, m, k);
  }, "matmul_nt");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->value[i] + b.node()->value[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& par = parent(self, p);
      if (!par.requires_grad) continue;
      auto& g = par.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  const auto m = a.rows(), n = a.cols();
  require(bias.numel() == n, "add_bias " + shape_string(a.shape()) + " + " + shape_string(bias.shape()));
  std::vector<T> out(a.node()->value);
  const auto& b = bias.node()->value;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  return make_result<T>(a.shape(), std::move(out), {a, bias}, [m, n](TensorNode<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  }, "add_bias");
}

template <typename T>
Tensor<T> add_constant(const Tensor<T>& a, std::span<const T> c) {
  require(c.size() == a.numel(), "add_constant: constant size mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->value[i] + c[i];
  return make_result<T>(a.shape(), std::move(out), {a}, [](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "add_constant");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.node()->value[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  }, "scale");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.node()->value) total += v;
  return make_result<T>(Shape{}, std::vector<T>{total}, {a}, [](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& x : g) x += self.grad[0];
  }, "sum");
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.numel() == b.numel(), "dot " + shape_string(a.shape()) + " . " + shape_string(b.shape()));
  T total = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) total += a.node()->value[i] * b.node()->value[i];
  return make_result<T>(Shape{}, std::vector<T>{total}, {a, b}, [](TensorNode<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const T g = self.grad[0];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * pa.value[i];
    }
  }, "dot");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  require(axis == 0 || axis == 1, "softmax axis must be 0 or 1");
  const auto m = a.rows(), n = a.cols();
  // Lines run along the softmax axis: (count, length, stride between elements, stride between lines).
  const std::size_t lines = axis == 1 ? m : n;
  const std::size_t len = axis == 1 ? n : m;
  const std::size_t step = axis == 1 ? 1 : n;
  const std::size_t line_step = axis == 1 ? n : 1;
  const auto& x = a.node()->value;
  std::vector<T> out(x.size());
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t base = l * line_step;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * step]);
    T z = T(0);
    for (std::size_t j = 0; j < len; ++j) {
      const T e = std::exp(x[base + j * step] - mx);
      out[base + j * step] = e;
      z += e;
    }
    for (std::size_t j = 0; j < len; ++j) out[base + j * step] /= z;
  }
  return make_result<T>(a.shape(), std::move(out), {a}, [lines, len, step, line_step](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const auto& y = self.value;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = l * line_step;
      T s = T(0);
      for (std::size_t j = 0; j < len; ++j) s += self.grad[base + j * step] * y[base + j * step];
      for (std::size_t j = 0; j < len; ++j) {
        const auto i = base + j * step;
        g[i] += y[i] * (self.grad[i] - s);
      }
    }
  }, "softmax");
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto m = x.rows(), n = x.cols();
  require(gamma.numel() == n && beta.numel() == n, "layer_norm affine size mismatch");
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  std::vector<T> out(m * n), xhat(m * n), rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * n;
    T mean = T(0);
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (row[c] - mean) * rstd[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& self) {
    auto& px = parent(self, 0);
    auto& pg = parent(self, 1);
    auto& pb = parent(self, 2);
    const auto& dy = self.grad;
    if (pg.requires_grad || pb.requires_grad) {
      auto& gg = pg.ensure_grad();
      auto& gb = pb.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          gg[c] += dy[r * n + c] * xhat[r * n + c];
          gb[c] += dy[r * n + c];
        }
    }
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      const auto& gam = pg.value;
      for (std::size_t r = 0; r < m; ++r) {
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t c = 0; c < n; ++c) {
          const T d = dy[r * n + c] * gam[c];
          mean_d += d;
          mean_dx += d * xhat[r * n + c];
        }
        mean_d /= static_cast<T>(n);
        mean_dx /= static_cast<T>(n);
        for (std::size_t c = 0; c < n; ++c) {
          const T d = dy[r * n + c] * gam[c];
          gx[r * n + c] += rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
        }
      }
    }
  }, "layer_norm");
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr T kA = T(0.044715);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto& xv = x.node()->value;
  const auto n = static_cast<Eigen::Index>(xv.size());
  const Eigen::Map<const Arr> v(xv.data(), n);
  std::vector<T> tanh_cache(xv.size());
  Eigen::Map<Arr> t(tanh_cache.data(), n);
  t = (kC * (v + kA * v.cube())).tanh();
  std::vector<T> out(xv.size());
  Eigen::Map<Arr>(out.data(), n) = T(0.5) * v * (T(1) + t);
  return make_result<T>(x.shape(), std::move(out), {x}, [tc = std::move(tanh_cache)](TensorNode<T>& self) {
    auto& px = parent(self, 0);
    auto& g = px.ensure_grad();
    const auto n = static_cast<Eigen::Index>(g.size());
    const Eigen::Map<const Arr> v(px.value.data(), n), t(tc.data(), n), up(self.grad.data(), n);
    Eigen::Map<Arr>(g.data(), n) +=
        up * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t.square()) * kC * (T(1) + T(3) * kA * v.square()));
  }, "gelu");
}

template <typename T>
Tensor<T> embed_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  const auto vocab = table.rows(), d = table.cols();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IdOutOfRange("token id " + std::to_string(idx[i]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t count = idx.size();
  return make_result<T>(Shape{count, d}, std::move(out), {table}, [d, idx = std::move(idx)](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = static_cast<std::size_t>(idx[i]) * d;
      for (std::size_t c = 0; c < d; ++c) g[row + c] += self.grad[i * d + c];
    }
  }, "embed_lookup");
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const auto n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows column mismatch");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
  return make_result<T>(Shape{m, n}, std::move(out), parts, [](TensorNode<T>& self) {
    std::size_t offset = 0;
    for (auto& pp : self.parents) {
      const auto count = pp->value.size();
      if (pp->requires_grad) {
        auto& g = pp->ensure_grad();
        for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[offset + i];
      }
      offset += count;
    }
  }, "concat_rows");
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  const auto m = a.rows(), n = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < m, "gather_rows index out of range");
    std::copy_n(a.node()->value.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  const std::size_t count = idx.size();
  return make_result<T>(Shape{count, n}, std::move(out), {a}, [n, idx = std::move(idx)](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) g[idx[i] * n + c] += self.grad[i * n + c];
  }, "gather_rows");
}

template <typename T>
Tensor<T> segment_mean_rows(const Tensor<T>& a, const std::vector<std::vector<std::size_t>>& groups) {
  const auto m = a.rows(), n = a.cols();
  std::vector<T> out(groups.size() * n, T(0));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw EmptyPool("no eligible rows to pool in group " + std::to_string(g));
    for (auto r : groups[g]) {
      require(r < m, "segment_mean_rows index out of range");
      for (std::size_t c = 0; c < n; ++c) out[g * n + c] += a.node()->value[r * n + c];
    }
    const T inv = T(1) / static_cast<T>(groups[g].size());
    for (std::size_t c = 0; c < n; ++c) out[g * n + c] *= inv;
  }
  return make_result<T>(Shape{groups.size(), n}, std::move(out), {a}, [n, groups](TensorNode<T>& self) {
    auto& grad = parent(self, 0).ensure_grad();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const T inv = T(1) / static_cast<T>(groups[g].size());
      for (auto r : groups[g])
        for (std::size_t c = 0; c < n; ++c) grad[r * n + c] += inv * self.grad[g * n + c];
    }
  }, "segment_mean_rows");
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a, std::span<const std::uint8_t> mask) {
  require(mask.size() == a.rows(), "mean_rows mask length mismatch");
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) rows.push_back(r);
  return segment_mean_rows(a, {rows});
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, std::size_t* zero_rows) {
  const auto m = a.rows(), n = a.cols();
  const auto& x = a.node()->value;
  std::vector<T> out(m * n, T(0)), inv_norm(m, T(0));
  std::size_t zeros = 0;
  for (std::size_t r = 0; r < m; ++r) {
    T ss = T(0);
    for (std::size_t c = 0; c < n; ++c) ss += x[r * n + c] * x[r * n + c];
    if (ss == T(0)) {
      ++zeros;
      continue;
    }
    inv_norm[r] = T(1) / std::sqrt(ss);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] * inv_norm[r];
  }
  if (zero_rows != nullptr) *zero_rows = zeros;
  return make_result<T>(a.shape(), std::move(out), {a}, [m, n, inv_norm = std::move(inv_norm)](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const auto& y = self.value;
    for (std::size_t r = 0; r < m; ++r) {
      if (inv_norm[r] == T(0)) continue;
      T yd = T(0);
      for (std::size_t c = 0; c < n; ++c) yd += y[r * n + c] * self.grad[r * n + c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += inv_norm[r] * (self.grad[r * n + c] - y[r * n + c] * yd);
    }
  }, "l2_normalize");
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v) {
  require(u.numel() == v.numel(), "cosine_similarity size mismatch");
  const auto& a = u.node()->value;
  const auto& b = v.node()->value;
  T ab = T(0), aa = T(0), bb = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == T(0) || bb == T(0)) throw DegenerateNorm("cosine similarity of a zero vector");
  const T na = std::sqrt(aa), nb = std::sqrt(bb);
  const T cosv = ab / (na * nb);
  return make_result<T>(Shape{}, std::vector<T>{cosv}, {u, v}, [na, nb, cosv](TensorNode<T>& self) {
    auto& pu = parent(self, 0);
    auto& pv = parent(self, 1);
    const T g = self.grad[0];
    if (pu.requires_grad) {
      auto& gu = pu.ensure_grad();
      for (std::size_t i = 0; i < gu.size(); ++i)
        gu[i] += g * (pv.value[i] / (na * nb) - cosv * pu.value[i] / (na * na));
    }
    if (pv.requires_grad) {
      auto& gv = pv.ensure_grad();
      for (std::size_t i = 0; i < gv.size(); ++i)
        gv[i] += g * (pu.value[i] / (na * nb) - cosv * pv.value[i] / (nb * nb));
    }
  }, "cosine_similarity");
}

template <typename T>
Tensor<T> cosine_similarity_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  std::size_t za = 0, zb = 0;
  auto na = l2_normalize(a, &za);
  auto nb = l2_normalize(b, &zb);
  if (za != 0 || zb != 0) throw DegenerateNorm("cosine similarity of a zero vector");
  return matmul_nt(na, nb);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  const auto m = logits.rows(), n = logits.cols();
  require(targets.size() == m, "cross_entropy: one target per row required");
  const auto& x = logits.node()->value;
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<T> probs(m * n, T(0));
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tgt[r] < 0) continue;
    if (static_cast<std::size_t>(tgt[r]) >= n) throw IdOutOfRange("cross_entropy target out of range");
    const T* row = x.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      const T e = std::exp(row[c] - mx);
      probs[r * n + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] /= z;
    total += (mx + std::log(z)) - row[tgt[r]];
    ++count;
  }
  if (count == 0) throw EmptyMaskSet("cross_entropy: no row has a target");
  const T inv = T(1) / static_cast<T>(count);
  return make_result<T>(Shape{}, std::vector<T>{total * inv}, {logits},
                        [m, n, inv, tgt = std::move(tgt), probs = std::move(probs)](TensorNode<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const T s = self.grad[0] * inv;
    for (std::size_t r = 0; r < m; ++r) {
      if (tgt[r] < 0) continue;
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += s * probs[r * n + c];
      g[r * n + static_cast<std::size_t>(tgt[r])] -= s;
    }
  }, "cross_entropy");
}

template <typename T>
Tensor<T> masked_self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                std::size_t batch, std::size_t seq_len, std::size_t n_heads,
                                std::span<const std::uint8_t> valid) {
  const auto d = q.cols();
  require(q.shape() == k.shape() && q.shape() == v.shape(), "attention q/k/v shapes differ");
  require(q.rows() == batch * seq_len, "attention rows " + std::to_string(q.rows()) + " != batch * seq_len " + std::to_string(batch) + "x" + std::to_string(seq_len));
  require(n_heads > 0 && d % n_heads == 0, "attention width not divisible by head count");
  require(valid.size() == batch * seq_len, "attention validity mask length mismatch");
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto L = static_cast<Eigen::Index>(seq_len);
  const auto DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  std::vector<std::uint8_t> ok(valid.begin(), valid.end());
  std::vector<T> out(batch * seq_len * d, T(0));
  std::vector<T> probs(batch * n_heads * seq_len * seq_len, T(0));
  RowMat<T> scores(L, L);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t row0 = b * seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = row0 * d + h * dh;
      ConstStridedMap<T> Q(q.node()->value.data() + off, L, DH, stride);
      ConstStridedMap<T> K(k.node()->value.data() + off, L, DH, stride);
      ConstStridedMap<T> V(v.node()->value.data() + off, L, DH, stride);
      scores.noalias() = Q * K.transpose();
      MatMap<T> P(probs.data() + (b * n_heads + h) * seq_len * seq_len, L, L);
      for (std::size_t i = 0; i < seq_len; ++i) {
        if (!ok[row0 + i]) continue;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seq_len; ++j)
          if (ok[row0 + j]) mx = std::max(mx, scores(i, j) * inv_sqrt);
        T z = T(0);
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!ok[row0 + j]) continue;
          const T e = std::exp(scores(i, j) * inv_sqrt - mx);
          P(i, j) = e;
          z += e;
        }
        for (std::size_t j = 0; j < seq_len; ++j) P(i, j) /= z;
      }
      StridedMap<T> O(out.data() + off, L, DH, stride);
      O.noalias() = P * V;
    }
  }
  return make_result<T>(q.shape(), std::move(out), {q, k, v},
                        [batch, seq_len, n_heads, d, dh, inv_sqrt, probs = std::move(probs)](TensorNode<T>& self) {
    auto& pq = parent(self, 0);
    auto& pk = parent(self, 1);
    auto& pv = parent(self, 2);
    const auto L = static_cast<Eigen::Index>(seq_len);
    const auto DH = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    T* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
    T* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
    T* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
    RowMat<T> dP(L, L), dS(L, L);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = b * seq_len * d + h * dh;
        ConstStridedMap<T> Q(pq.value.data() + off, L, DH, stride);
        ConstStridedMap<T> K(pk.value.data() + off, L, DH, stride);
        ConstStridedMap<T> V(pv.value.data() + off, L, DH, stride);
        ConstStridedMap<T> dO(self.grad.data() + off, L, DH, stride);
        ConstMatMap<T> P(probs.data() + (b * n_heads + h) * seq_len * seq_len, L, L);
        if (gv) StridedMap<T>(gv + off, L, DH, stride).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        dP.noalias() = dO * V.transpose();
        for (Eigen::Index i = 0; i < L; ++i) {
          T s = T(0);
          for (Eigen::Index j = 0; j < L; ++j) s += dP(i, j) * P(i, j);
          for (Eigen::Index j = 0; j < L; ++j) dS(i, j) = P(i, j) * (dP(i, j) - s) * inv_sqrt;
        }
        if (gq) StridedMap<T>(gq + off, L, DH, stride).noalias() += dS * K;
        if (gk) StridedMap<T>(gk + off, L, DH, stride).noalias() += dS.transpose() * Q;
      }
    }
  }, "attention");
}

#define TRANSLICO_INSTANTIATE(T)                                                                     \
  template class Tensor<T>;                                                                          \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&,          \
                                    BackwardFn<T>, const char*);                                     \
  template void backward<T>(const Tensor<T>&);                                                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add_constant<T>(const Tensor<T>&, std::span<const T>);                          \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                  \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                       \
  template Tensor<T> dot<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                              \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> embed_lookup<T>(const Tensor<T>&, std::span<const std::int32_t>);               \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                  \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                 \
  template Tensor<T> mean_rows<T>(const Tensor<T>&, std::span<const std::uint8_t>);                  \
  template Tensor<T> segment_mean_rows<T>(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&); \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&, std::size_t*);                                \
  template Tensor<T> cosine_similarity<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> cosine_similarity_matrix<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>);              \
  template Tensor<T> masked_self_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                              std::size_t, std::size_t, std::size_t,                 \
                                              std::span<const std::uint8_t>);

TRANSLICO_INSTANTIATE(float)
TRANSLICO_INSTANTIATE(double)

#undef TRANSLICO_INSTANTIATE

}  // namespace translico

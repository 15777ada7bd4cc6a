#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle onto a node of the computation record. Every op
// returns a fresh node that remembers its parents and how to push its gradient
// back to them; backward() walks that record in reverse topological order.
// Nodes are only linked into the record when at least one input requires a
// gradient, so inference passes do not retain intermediate buffers.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mvood {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct TapeNode {
  Shape shape;
  Vec<Scalar> values;
  Vec<Scalar> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode&)> backward_fn;

  bool has_grad() const { return grad.size() == values.size() && values.size() > 0; }

  Vec<Scalar>& ensure_grad() {
    if (grad.size() != values.size()) grad = Vec<Scalar>::Zero(values.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using Node = TapeNode<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Vec<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    const Index n = shape_numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Constant(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Vec<Scalar> v(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), v.data());
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  /// Result of an op. Links into the tape only when some parent needs a
  /// gradient; `backward` receives the result node and must add into the
  /// gradients of the parents that require them.
  static Tensor make_result(Shape shape, Vec<Scalar> values, std::vector<Tensor> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    const bool track = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor& p) { return p.requires_grad(); });
    if (track) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  Index dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t rank() const { return node().shape.size(); }
  Index numel() const { return node().values.size(); }

  const Vec<Scalar>& values() const { return node().values; }
  /// In-place access for optimizers and initialisation only.
  Vec<Scalar>& mutable_values() { return node().values; }

  Scalar item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node().values[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }
  bool is_leaf() const { return node().parents.empty(); }

  bool has_grad() const { return node_ && node_->has_grad(); }
  const Vec<Scalar>& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return node_->grad;
  }
  Vec<Scalar>& mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.resize(0); }

  /// Same values on a fresh leaf, cut from any tape.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), values(), requires_grad);
  }

  Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Named parameters; std::map gives the lexicographic iteration order.
template <typename Scalar>
using ParamSet = std::map<std::string, Tensor<Scalar>>;

template <typename Scalar>
void zero_grads(ParamSet<Scalar>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& params, bool requires_grad) {
  ParamSet<To> out;
  for (const auto& [name, t] : params)
    out.emplace(name, Tensor<To>(t.shape(), t.values().template cast<To>(), requires_grad));
  return out;
}

template <typename Scalar>
ParamSet<Scalar> clone_params(const ParamSet<Scalar>& params, bool requires_grad) {
  return cast_params<Scalar>(params, requires_grad);
}

/// Populates dLoss/dT for every tracked tensor reachable from `loss`.
///
/// Leaf gradients accumulate across calls, so callers zero them before each
/// batch. Intermediate gradients are reset on every call.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  using Node = TapeNode<Scalar>;
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->parents.empty()) n->grad = Vec<Scalar>::Zero(n->values.size());
  loss.node().ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

namespace detail {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename Scalar>
Vec<Scalar>* grad_if_needed(TapeNode<Scalar>& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

struct ConvGeometry {
  Index channels, height, width;  // the un-strided ("image") side
  Index kh, kw, stride, pad;
  Index out_h, out_w;  // the strided ("feature") side

  Index patch() const { return channels * kh * kw; }
};

// Unfolds one image [C,H,W] into a (C*kh*kw) x (out_h*out_w) matrix.
template <typename Scalar>
Mat<Scalar> im2col(const Scalar* img, const ConvGeometry& g) {
  Mat<Scalar> col = Mat<Scalar>::Zero(g.patch(), g.out_h * g.out_w);
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Index row = (c * g.kh + ki) * g.kw + kj;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            if (iw < 0 || iw >= g.width) continue;
            col(row, oh * g.out_w + ow) = img[(c * g.height + ih) * g.width + iw];
          }
        }
      }
  return col;
}

// Adjoint of im2col: scatters-and-adds columns back onto an image [C,H,W].
template <typename Scalar>
void col2im_add(const Mat<Scalar>& col, const ConvGeometry& g, Scalar* img) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Index row = (c * g.kh + ki) * g.kw + kj;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            if (iw < 0 || iw >= g.width) continue;
            img[(c * g.height + ih) * g.width + iw] += col(row, oh * g.out_w + ow);
          }
        }
      }
}

template <typename Scalar>
Eigen::Map<const RowMat<Scalar>> as_rows(const Vec<Scalar>& v, Index rows, Index cols,
                                         Index offset = 0) {
  return Eigen::Map<const RowMat<Scalar>>(v.data() + offset, rows, cols);
}

template <typename Scalar>
Eigen::Map<RowMat<Scalar>> as_rows(Vec<Scalar>& v, Index rows, Index cols, Index offset = 0) {
  return Eigen::Map<RowMat<Scalar>>(v.data() + offset, rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers

/// 2D cross-correlation. input [N,C,H,W], kernel [F,C,kh,kw], bias [F].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
    throw ShapeError("conv2d: expected input [N,C,H,W], kernel [F,C,kh,kw], bias [F]");
  if (kernel.dim(1) != input.dim(1))
    throw ShapeError("conv2d: kernel has " + std::to_string(kernel.dim(1)) +
                     " channels but input has " + std::to_string(input.dim(1)));
  if (bias.dim(0) != kernel.dim(0)) throw ShapeError("conv2d: bias length != filter count");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1, padding >= 0");
  const Index n = input.dim(0), f = kernel.dim(0);
  detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                         stride, padding, 0, 0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input");
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  const Index in_sz = g.channels * g.height * g.width, out_sp = g.out_h * g.out_w;

  const auto kmat = detail::as_rows(kernel.values(), f, g.patch());
  const auto& x = input.values();
  Vec<Scalar> out(n * f * out_sp);
  const bool track = input.requires_grad() || kernel.requires_grad() || bias.requires_grad();
  auto cols = std::make_shared<std::vector<Mat<Scalar>>>();
  for (Index i = 0; i < n; ++i) {
    Mat<Scalar> col = detail::im2col(x.data() + i * in_sz, g);
    auto o = detail::as_rows(out, f, out_sp, i * f * out_sp);
    o.noalias() = kmat * col;
    o.colwise() += bias.values();
    if (track) cols->push_back(std::move(col));
  }

  return Tensor<Scalar>::make_result(
      {n, f, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, n, f, in_sz, out_sp, cols](TapeNode<Scalar>& self) {
        const auto& kv = self.parents[1]->values;
        const auto kmat = detail::as_rows(kv, f, g.patch());
        auto* dx = detail::grad_if_needed(self, 0);
        auto* dk = detail::grad_if_needed(self, 1);
        auto* db = detail::grad_if_needed(self, 2);
        for (Index i = 0; i < n; ++i) {
          const auto dout = detail::as_rows(self.grad, f, out_sp, i * f * out_sp);
          if (dk) detail::as_rows(*dk, f, g.patch()).noalias() += dout * (*cols)[i].transpose();
          if (db) *db += dout.rowwise().sum();
          if (dx) {
            Mat<Scalar> dcol = kmat.transpose() * dout;
            detail::col2im_add(dcol, g, dx->data() + i * in_sz);
          }
        }
      });
}

/// Transposed convolution; the forward map is the input-gradient of conv2d
/// with the same kernel. input [N,F,H,W], kernel [F,C,kh,kw], bias [C].
/// Output extent is (H-1)*stride - 2*padding + kh.
template <typename Scalar>
Tensor<Scalar> conv2d_transpose(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                                const Tensor<Scalar>& bias, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
    throw ShapeError("conv2d_transpose: expected input [N,F,H,W], kernel [F,C,kh,kw], bias [C]");
  if (kernel.dim(0) != input.dim(1))
    throw ShapeError("conv2d_transpose: kernel expects " + std::to_string(kernel.dim(0)) +
                     " input channels but input has " + std::to_string(input.dim(1)));
  if (bias.dim(0) != kernel.dim(1))
    throw ShapeError("conv2d_transpose: bias length != output channels");
  if (stride < 1 || padding < 0)
    throw ShapeError("conv2d_transpose: stride must be >= 1, padding >= 0");
  const Index n = input.dim(0), f = kernel.dim(0);
  detail::ConvGeometry g{kernel.dim(1), 0, 0, kernel.dim(2), kernel.dim(3), stride, padding,
                         input.dim(2), input.dim(3)};
  g.height = (g.out_h - 1) * stride - 2 * padding + g.kh;
  g.width = (g.out_w - 1) * stride - 2 * padding + g.kw;
  if (g.height <= 0 || g.width <= 0) throw ShapeError("conv2d_transpose: empty output");
  const Index in_sp = g.out_h * g.out_w, out_sz = g.channels * g.height * g.width;

  const auto kmat = detail::as_rows(kernel.values(), f, g.patch());
  const auto& x = input.values();
  Vec<Scalar> out = Vec<Scalar>::Zero(n * out_sz);
  for (Index i = 0; i < n; ++i) {
    Mat<Scalar> col = kmat.transpose() * detail::as_rows(x, f, in_sp, i * f * in_sp);
    detail::col2im_add(col, g, out.data() + i * out_sz);
    detail::as_rows(out, g.channels, g.height * g.width, i * out_sz).colwise() += bias.values();
  }

  return Tensor<Scalar>::make_result(
      {n, g.channels, g.height, g.width}, std::move(out), {input, kernel, bias},
      [g, n, f, in_sp, out_sz](TapeNode<Scalar>& self) {
        const auto& xv = self.parents[0]->values;
        const auto kmat = detail::as_rows(self.parents[1]->values, f, g.patch());
        auto* dx = detail::grad_if_needed(self, 0);
        auto* dk = detail::grad_if_needed(self, 1);
        auto* db = detail::grad_if_needed(self, 2);
        for (Index i = 0; i < n; ++i) {
          Mat<Scalar> dcol = detail::im2col(self.grad.data() + i * out_sz, g);
          if (dx) detail::as_rows(*dx, f, in_sp, i * f * in_sp).noalias() += kmat * dcol;
          if (dk)
            detail::as_rows(*dk, f, g.patch()).noalias() +=
                detail::as_rows(xv, f, in_sp, i * f * in_sp) * dcol.transpose();
          if (db)
            *db += detail::as_rows(self.grad, g.channels, g.height * g.width, i * out_sz)
                       .rowwise()
                       .sum();
        }
      });
}

/// input [N,D] * weight [D,K] + bias [K].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("linear: expected input [N,D], weight [D,K], bias [K]");
  if (input.dim(1) != weight.dim(0))
    throw ShapeError("linear: inner dimensions disagree " + shape_str(input.shape()) + " x " +
                     shape_str(weight.shape()));
  if (bias.dim(0) != weight.dim(1)) throw ShapeError("linear: bias length != output width");
  const Index n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  Vec<Scalar> out(n * k);
  auto o = detail::as_rows(out, n, k);
  o.noalias() = detail::as_rows(input.values(), n, d) * detail::as_rows(weight.values(), d, k);
  o.rowwise() += bias.values().transpose();
  return Tensor<Scalar>::make_result(
      {n, k}, std::move(out), {input, weight, bias}, [n, d, k](TapeNode<Scalar>& self) {
        const auto dy = detail::as_rows(self.grad, n, k);
        if (auto* dx = detail::grad_if_needed(self, 0))
          detail::as_rows(*dx, n, d).noalias() +=
              dy * detail::as_rows(self.parents[1]->values, d, k).transpose();
        if (auto* dw = detail::grad_if_needed(self, 1))
          detail::as_rows(*dw, d, k).noalias() +=
              detail::as_rows(self.parents[0]->values, n, d).transpose() * dy;
        if (auto* db = detail::grad_if_needed(self, 2)) *db += dy.colwise().sum().transpose();
      });
}

enum class Activation { Relu, Sigmoid };

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Vec<Scalar> out = x.values().cwiseMax(Scalar(0));
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x}, [](TapeNode<Scalar>& self) {
    // subgradient at exactly 0 is 0
    auto& dx = self.parents[0]->ensure_grad();
    dx.array() +=
        (self.parents[0]->values.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Vec<Scalar> out = (Scalar(1) + (-x.values().array()).exp()).inverse().matrix();
  return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x}, [](TapeNode<Scalar>& self) {
    const auto s = self.values.array();
    self.parents[0]->ensure_grad().array() += self.grad.array() * s * (Scalar(1) - s);
  });
}

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  return kind == Activation::Relu ? relu(x) : sigmoid(x);
}

// ---------------------------------------------------------------------------
// Elementwise and structural helpers (no broadcasting)

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return Tensor<Scalar>::make_result(a.shape(), a.values() + b.values(), {a, b},
                                     [](TapeNode<Scalar>& self) {
                                       for (std::size_t i = 0; i < 2; ++i)
                                         if (auto* g = detail::grad_if_needed(self, i))
                                           *g += self.grad;
                                     });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  return Tensor<Scalar>::make_result(
      a.shape(), a.values().cwiseProduct(b.values()), {a, b}, [](TapeNode<Scalar>& self) {
        if (auto* g = detail::grad_if_needed(self, 0))
          *g += self.grad.cwiseProduct(self.parents[1]->values);
        if (auto* g = detail::grad_if_needed(self, 1))
          *g += self.grad.cwiseProduct(self.parents[0]->values);
      });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return Tensor<Scalar>::make_result(a.shape(), a.values() * factor, {a},
                                     [factor](TapeNode<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad * factor;
                                     });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Vec<Scalar> out(1);
  out[0] = a.values().sum();
  return Tensor<Scalar>::make_result({1}, std::move(out), {a}, [](TapeNode<Scalar>& self) {
    self.parents[0]->ensure_grad().array() += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return Tensor<Scalar>::make_result(std::move(shape), a.values(), {a},
                                     [](TapeNode<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad;
                                     });
}

/// Concatenates [N,Di] matrices along the feature axis.
template <typename Scalar>
Tensor<Scalar> concat_features(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_features: no inputs");
  const Index n = parts.front().dim(0);
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) throw ShapeError("concat_features: expected [N,D] inputs");
    widths.push_back(p.dim(1));
  }
  const Index total = std::accumulate(widths.begin(), widths.end(), Index{0});
  Vec<Scalar> out(n * total);
  auto o = detail::as_rows(out, n, total);
  Index off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    o.middleCols(off, widths[i]) = detail::as_rows(parts[i].values(), n, widths[i]);
    off += widths[i];
  }
  return Tensor<Scalar>::make_result({n, total}, std::move(out), parts,
                                     [n, total, widths](TapeNode<Scalar>& self) {
                                       const auto g = detail::as_rows(self.grad, n, total);
                                       Index off = 0;
                                       for (std::size_t i = 0; i < widths.size(); ++i) {
                                         if (auto* dp = detail::grad_if_needed(self, i))
                                           detail::as_rows(*dp, n, widths[i]) +=
                                               g.middleCols(off, widths[i]);
                                         off += widths[i];
                                       }
                                     });
}

/// sum_i weights[i] * terms[i] over scalar tensors.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const std::vector<Tensor<Scalar>>& terms,
                            const std::vector<Scalar>& weights) {
  if (terms.size() != weights.size() || terms.empty())
    throw ShapeError("weighted_sum: need one weight per term");
  Vec<Scalar> out(1);
  out[0] = Scalar(0);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    out[0] += weights[i] * terms[i].item();
  }
  return Tensor<Scalar>::make_result({1}, std::move(out), terms,
                                     [weights](TapeNode<Scalar>& self) {
                                       for (std::size_t i = 0; i < weights.size(); ++i)
                                         if (auto* g = detail::grad_if_needed(self, i))
                                           (*g)[0] += weights[i] * self.grad[0];
                                     });
}

// ---------------------------------------------------------------------------
// Losses

template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const Index count = pred.numel();
  Vec<Scalar> out(1);
  out[0] = (pred.values() - target.values()).squaredNorm() / Scalar(count);
  return Tensor<Scalar>::make_result({1}, std::move(out), {pred, target},
                                     [count](TapeNode<Scalar>& self) {
                                       const Scalar c = Scalar(2) * self.grad[0] / Scalar(count);
                                       const auto diff =
                                           self.parents[0]->values - self.parents[1]->values;
                                       if (auto* g = detail::grad_if_needed(self, 0))
                                         *g += c * diff;
                                       if (auto* g = detail::grad_if_needed(self, 1))
                                         *g -= c * diff;
                                     });
}

/// Mean negative log-softmax of the true class. logits [N,2], labels [N] in {0,1}.
template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels) {
  if (logits.rank() != 2 || logits.dim(1) != 2)
    throw ShapeError("cross_entropy_loss: logits must be [N,2]");
  if (labels.numel() != logits.dim(0))
    throw ShapeError("cross_entropy_loss: need one label per row");
  const Index n = logits.dim(0);
  std::vector<int> cls(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Scalar l = labels.values()[i];
    if (l != Scalar(0) && l != Scalar(1))
      throw std::invalid_argument("cross_entropy_loss: label outside {0,1}");
    cls[static_cast<std::size_t>(i)] = l == Scalar(1) ? 1 : 0;
  }
  const auto z = detail::as_rows(logits.values(), n, 2);
  RowMat<Scalar> prob(n, 2);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar m = z.row(i).maxCoeff();
    const Scalar lse = m + std::log(std::exp(z(i, 0) - m) + std::exp(z(i, 1) - m));
    prob(i, 0) = std::exp(z(i, 0) - lse);
    prob(i, 1) = std::exp(z(i, 1) - lse);
    total += lse - z(i, cls[static_cast<std::size_t>(i)]);
  }
  Vec<Scalar> out(1);
  out[0] = total / Scalar(n);
  return Tensor<Scalar>::make_result(
      {1}, std::move(out), {logits}, [n, cls, prob](TapeNode<Scalar>& self) {
        auto g = detail::as_rows(self.parents[0]->ensure_grad(), n, 2);
        const Scalar c = self.grad[0] / Scalar(n);
        for (Index i = 0; i < n; ++i) {
          g(i, 0) += c * (prob(i, 0) - (cls[static_cast<std::size_t>(i)] == 0));
          g(i, 1) += c * (prob(i, 1) - (cls[static_cast<std::size_t>(i)] == 1));
        }
      });
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over latent units and averaged
/// over the leading (batch) axis.
template <typename Scalar>
Tensor<Scalar> kl_divergence_diag_gaussian(const Tensor<Scalar>& mu, const Tensor<Scalar>& logvar) {
  detail::require_same_shape(mu, logvar, "kl_divergence_diag_gaussian");
  const Scalar batch = Scalar(mu.dim(0));
  const auto m = mu.values().array();
  const auto lv = logvar.values().array();
  Vec<Scalar> out(1);
  out[0] = Scalar(0.5) * (m.square() + lv.exp() - Scalar(1) - lv).sum() / batch;
  return Tensor<Scalar>::make_result(
      {1}, std::move(out), {mu, logvar}, [batch](TapeNode<Scalar>& self) {
        const Scalar c = self.grad[0] / batch;
        if (auto* g = detail::grad_if_needed(self, 0)) *g += c * self.parents[0]->values;
        if (auto* g = detail::grad_if_needed(self, 1))
          g->array() += c * Scalar(0.5) * (self.parents[1]->values.array().exp() - Scalar(1));
      });
}

/// z = mu + exp(logvar / 2) * epsilon.
template <typename Scalar>
Tensor<Scalar> reparameterize(const Tensor<Scalar>& mu, const Tensor<Scalar>& logvar,
                              const Tensor<Scalar>& epsilon) {
  detail::require_same_shape(mu, logvar, "reparameterize");
  detail::require_same_shape(mu, epsilon, "reparameterize");
  Vec<Scalar> sd = (Scalar(0.5) * logvar.values().array()).exp().matrix();
  Vec<Scalar> out = mu.values() + sd.cwiseProduct(epsilon.values());
  return Tensor<Scalar>::make_result(
      mu.shape(), std::move(out), {mu, logvar, epsilon}, [sd](TapeNode<Scalar>& self) {
        const auto& eps = self.parents[2]->values;
        if (auto* g = detail::grad_if_needed(self, 0)) *g += self.grad;
        if (auto* g = detail::grad_if_needed(self, 1))
          g->array() += Scalar(0.5) * self.grad.array() * sd.array() * eps.array();
        if (auto* g = detail::grad_if_needed(self, 2)) *g += self.grad.cwiseProduct(sd);
      });
}

// ---------------------------------------------------------------------------
// Optimisation

template <typename Scalar>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Vec<Scalar>> m;
  std::map<std::string, Vec<Scalar>> v;
};

/// One bias-corrected Adam update of every parameter in place.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, AdamState<Scalar>& state) {
  for (const auto& [name, p] : params)
    if (!p.has_grad()) throw std::logic_error("adam_step: parameter '" + name + "' has no gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto& g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != g.size()) m = Vec<Scalar>::Zero(g.size());
    if (v.size() != g.size()) v = Vec<Scalar>::Zero(g.size());
    m = Scalar(state.beta1) * m + Scalar(1 - state.beta1) * g;
    v = Scalar(state.beta2) * v + Scalar(1 - state.beta2) * g.cwiseAbs2();
    const auto mhat = m.array() / Scalar(c1);
    const auto vhat = v.array() / Scalar(c2);
    p.mutable_values().array() -= Scalar(state.lr) * mhat / (vhat.sqrt() + Scalar(state.eps));
  }
}

// ---------------------------------------------------------------------------
// Verification

/// Worst relative disagreement between tape gradients and central differences
/// of `fn` over every element of every parameter. Relative error is
/// |a - n| / max(|a|, |n|, floor), so gradients below `floor` are compared
/// on an absolute scale.
template <typename Fn>
double grad_check(Fn&& fn, ParamSet<double>& inputs, double h = 1e-5, double floor = 1e-6) {
  for (auto& [name, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = fn(inputs);
  backward(loss);
  double worst = 0.0;
  for (auto& [name, t] : inputs) {
    Vec<double> analytic = t.has_grad() ? t.grad() : Vec<double>::Zero(t.numel());
    auto& vals = t.mutable_values();
    for (Index i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = fn(inputs).item();
      vals[i] = orig - h;
      const double fm = fn(inputs).item();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mvood

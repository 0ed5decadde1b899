#pragma once

// Tape-based reverse-mode differentiation over Tensor<Scalar>. Forward ops are
// free functions on Var handles; each records its output and a closure that
// accumulates vector-Jacobian products into its inputs' gradients.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vit3d/rng.hpp"
#include "vit3d/tensor.hpp"

namespace vit3d {

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index rank() const { return value().rank(); }
  Index size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value) { return push(std::move(value), false, {}, {}); }

  // Named leaf whose gradient backward() reports.
  Var<Scalar> parameter(std::string name, TensorT value) {
    auto v = push(std::move(value), true, std::move(name), {});
    params_.push_back(v.id());
    return v;
  }

  // Records an op output. The closure is kept only when some input needs a gradient.
  Var<Scalar> record(TensorT value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(fn));
  }
  Var<Scalar> record(TensorT value, std::span<const Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("op inputs belong to different tapes");
      needs = needs || requires_grad(in.id());
    }
#ifndef NDEBUG
    if (!value.array().isFinite().all()) throw NumericFault("non-finite value produced by a tape op");
#endif
    return push(std::move(value), needs, {}, needs ? std::move(fn) : BackwardFn{});
  }

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator for node `id`, zero-initialized on first access.
  TensorT& grad(std::size_t id) {
    auto& node = nodes_.at(id);
    if (!node.has_grad) {
      node.grad = TensorT::zeros(node.value.shape());
      node.has_grad = true;
    }
    return node.grad;
  }

  /// Propagates d(loss)/d(node) backward over the tape and returns gradients
  /// for every parameter in registration order. Parameters the loss does not
  /// depend on get zero tensors.
  NamedTensors<Scalar> backward(const Var<Scalar>& loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    for (auto& node : nodes_) {
      node.has_grad = false;
      node.grad = TensorT();
    }
    order_.clear();
    grad(loss.id()).array().setOnes();
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.has_grad || !node.backward) continue;
      order_.push_back(i);
      node.backward(*this, node.grad);
    }
    NamedTensors<Scalar> out;
    for (auto id : params_) {
      auto& node = nodes_[id];
      out.insert(node.name, node.has_grad ? node.grad : TensorT::zeros(node.value.shape()));
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }
  // Node ids whose backward closure ran in the last backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return order_; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string name;
    BackwardFn backward;
  };

  Var<Scalar> push(TensorT value, bool requires_grad, std::string name, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), TensorT(), false, requires_grad, std::move(name), std::move(fn)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
  std::vector<std::size_t> order_;
};

/// Dropout masks draw from CounterRng(key, counter), one counter per op call.
struct DropoutStream {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  CounterRng next() { return CounterRng(key, counter++); }
};

namespace detail {

template <typename S>
Tape<S>& same_tape(const Var<S>& a, const Var<S>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("op inputs belong to different tapes");
  return a.tape();
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// (outer, inner) factorization for broadcasting b over the leading axes of a.
template <typename S>
std::pair<Index, Index> broadcast_dims(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw ContractError(std::string(op) + ": shape " + to_string(b.shape()) + " does not broadcast onto " +
                        to_string(a.shape()));
  }
  return {a.size() / b.size(), b.size()};
}

template <typename S>
using RowVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

template <typename S>
Tensor<S> permute_tensor(const Tensor<S>& in, const std::vector<Index>& axes) {
  const auto r = static_cast<std::size_t>(in.rank());
  if (axes.size() != r) throw ContractError("permute: axes length does not match rank");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  std::vector<Index> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in.shape()[i];
  std::vector<Index> strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto ax = static_cast<std::size_t>(axes[i]);
    if (axes[i] < 0 || ax >= r || seen[ax]) throw ContractError("permute: invalid axes");
    seen[ax] = true;
    out_shape[i] = in.shape()[ax];
    strides[i] = in_strides[ax];
  }
  Tensor<S> out(out_shape);
  if (r == 0) {
    out[0] = in[0];
    return out;
  }
  const Index inner_n = out_shape[r - 1];
  const Index inner_stride = strides[r - 1];
  const Index outer = out.size() / inner_n;
  std::vector<Index> idx(r, 0);
  Index offset = 0;
  S* dst = out.data();
  const S* src = in.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner_n; ++j) *dst++ = src[offset + j * inner_stride];
    // Odometer over all but the innermost output axis.
    for (std::size_t k = r - 1; k-- > 0;) {
      ++idx[k];
      offset += strides[k];
      if (idx[k] < out_shape[k]) break;
      offset -= strides[k] * idx[k];
      idx[k] = 0;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra and elementwise ops
// ---------------------------------------------------------------------------

/// Batched matrix product. a: [..., m, k]. b: either [k, n], shared across the
/// batch, or [..., k, n] with the same leading dims as a.
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  using TensorT = Tensor<S>;
  using Mat = typename TensorT::RowMatrix;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  auto& tape = detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() < 2 || B.rank() < 2) throw ContractError("matmul: operands need rank >= 2");
  const Index m = A.dim(-2);
  const Index k = A.dim(-1);
  const Index n = B.dim(-1);
  if (B.dim(-2) != k) {
    throw ContractError("matmul: inner dims differ, " + to_string(A.shape()) + " x " + to_string(B.shape()));
  }
  Shape out_shape = A.shape();
  out_shape.back() = n;
  TensorT C(out_shape);

  if (B.rank() == 2) {
    const Index rows = A.size() / k;
    C.as_matrix(rows, n).noalias() = A.as_matrix(rows, k) * B.as_matrix(k, n);
    return tape.record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), rows, k, n](Tape<S>& t, const TensorT& g) {
      const auto G = g.as_matrix(rows, n);
      if (t.requires_grad(ia)) t.grad(ia).as_matrix(rows, k).noalias() += G * t.value(ib).as_matrix(k, n).transpose();
      if (t.requires_grad(ib)) t.grad(ib).as_matrix(k, n).noalias() += t.value(ia).as_matrix(rows, k).transpose() * G;
    });
  }

  if (!std::equal(A.shape().begin(), A.shape().end() - 2, B.shape().begin(), B.shape().end() - 2)) {
    throw ContractError("matmul: batch dims differ, " + to_string(A.shape()) + " x " + to_string(B.shape()));
  }
  const Index batch = A.size() / (m * k);
  for (Index i = 0; i < batch; ++i) {
    Map(C.data() + i * m * n, m, n).noalias() = CMap(A.data() + i * m * k, m, k) * CMap(B.data() + i * k * n, k, n);
  }
  return tape.record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), batch, m, k, n](Tape<S>& t, const TensorT& g) {
    const bool ga = t.requires_grad(ia);
    const bool gb = t.requires_grad(ib);
    for (Index i = 0; i < batch; ++i) {
      CMap G(g.data() + i * m * n, m, n);
      if (ga) {
        Map(t.grad(ia).data() + i * m * k, m, k).noalias() += G * CMap(t.value(ib).data() + i * k * n, k, n).transpose();
      }
      if (gb) {
        Map(t.grad(ib).data() + i * k * n, k, n).noalias() += CMap(t.value(ia).data() + i * m * k, m, k).transpose() * G;
      }
    }
  });
}

/// a + b, with b's shape a suffix of a's (b repeats over a's leading axes).
template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  using TensorT = Tensor<S>;
  auto& tape = detail::same_tape(a, b);
  const auto [outer, inner] = detail::broadcast_dims(a.value(), b.value(), "add");
  TensorT C(a.shape());
  C.as_matrix(outer, inner) = a.value().as_matrix(outer, inner).rowwise() + detail::RowVecMap<S>(b.value().data(), inner);
  return tape.record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), outer, inner](Tape<S>& t, const TensorT& g) {
    if (t.requires_grad(ia)) t.grad(ia).array() += g.array();
    if (t.requires_grad(ib)) t.grad(ib).as_matrix(1, inner) += g.as_matrix(outer, inner).colwise().sum();
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  using TensorT = Tensor<S>;
  auto& tape = detail::same_tape(a, b);
  const auto [outer, inner] = detail::broadcast_dims(a.value(), b.value(), "sub");
  TensorT C(a.shape());
  C.as_matrix(outer, inner) = a.value().as_matrix(outer, inner).rowwise() - detail::RowVecMap<S>(b.value().data(), inner);
  return tape.record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), outer, inner](Tape<S>& t, const TensorT& g) {
    if (t.requires_grad(ia)) t.grad(ia).array() += g.array();
    if (t.requires_grad(ib)) t.grad(ib).as_matrix(1, inner) -= g.as_matrix(outer, inner).colwise().sum();
  });
}

/// Elementwise a * b with the same broadcasting rule as add.
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  using TensorT = Tensor<S>;
  auto& tape = detail::same_tape(a, b);
  const auto [outer, inner] = detail::broadcast_dims(a.value(), b.value(), "mul");
  TensorT C(a.shape());
  C.as_matrix(outer, inner).array() =
      a.value().as_matrix(outer, inner).array().rowwise() * detail::RowVecMap<S>(b.value().data(), inner).array();
  return tape.record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), outer, inner](Tape<S>& t, const TensorT& g) {
    const auto G = g.as_matrix(outer, inner).array();
    if (t.requires_grad(ia)) {
      t.grad(ia).as_matrix(outer, inner).array() +=
          G.rowwise() * detail::RowVecMap<S>(t.value(ib).data(), inner).array();
    }
    if (t.requires_grad(ib)) {
      t.grad(ib).as_matrix(1, inner).array() += (G * t.value(ia).as_matrix(outer, inner).array()).colwise().sum();
    }
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  using TensorT = Tensor<S>;
  TensorT C(a.shape(), a.value().array() * factor);
  return a.tape().record(std::move(C), {a}, [ia = a.id(), factor](Tape<S>& t, const TensorT& g) {
    t.grad(ia).array() += g.array() * factor;
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  using TensorT = Tensor<S>;
  TensorT C = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(C), {a}, [ia = a.id()](Tape<S>& t, const TensorT& g) {
    t.grad(ia).array() += g.array();
  });
}

/// Output axis i is input axis axes[i].
template <typename S>
Var<S> permute(const Var<S>& a, std::vector<Index> axes) {
  using TensorT = Tensor<S>;
  TensorT C = detail::permute_tensor(a.value(), axes);
  std::vector<Index> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[static_cast<std::size_t>(axes[i])] = static_cast<Index>(i);
  return a.tape().record(std::move(C), {a}, [ia = a.id(), inverse](Tape<S>& t, const TensorT& g) {
    t.grad(ia).array() += detail::permute_tensor(g, inverse).array();
  });
}

// Swaps the last two axes.
template <typename S>
Var<S> transpose(const Var<S>& a) {
  if (a.rank() < 2) throw ContractError("transpose: rank must be >= 2");
  std::vector<Index> axes(static_cast<std::size_t>(a.rank()));
  std::iota(axes.begin(), axes.end(), Index{0});
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, std::move(axes));
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

/// Softmax over the last axis, max-subtracted.
template <typename S>
Var<S> softmax(const Var<S>& a) {
  using TensorT = Tensor<S>;
  const Index cols = a.dim(-1);
  const Index rows = a.size() / cols;
  TensorT Y(a.shape());
  auto X = a.value().as_matrix(rows, cols);
  auto Ym = Y.as_matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const S mx = X.row(r).maxCoeff();
    Ym.row(r) = (X.row(r).array() - mx).exp().matrix();
    const double sum = Ym.row(r).template cast<double>().sum();
    Ym.row(r) /= static_cast<S>(sum);
  }
  return a.tape().record(std::move(Y), {a}, [ia = a.id(), rows, cols](Tape<S>& t, const TensorT& g) {
    // y is recomputed from the input rather than stored.
    const auto Xin = t.value(ia).as_matrix(rows, cols);
    auto dX = t.grad(ia).as_matrix(rows, cols);
    const auto G = g.as_matrix(rows, cols);
    Eigen::Matrix<S, 1, Eigen::Dynamic> y(cols);
    for (Index r = 0; r < rows; ++r) {
      const S mx = Xin.row(r).maxCoeff();
      y = (Xin.row(r).array() - mx).exp().matrix();
      y /= static_cast<S>(y.template cast<double>().sum());
      const S dot = static_cast<S>((G.row(r).array() * y.array()).template cast<double>().sum());
      dX.row(r).array() += y.array() * (G.row(r).array() - dot);
    }
  });
}

/// Layer normalization over the last axis with learnable gain and bias of
/// shape [last]. Uses the population variance.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, double eps = 1e-5) {
  using TensorT = Tensor<S>;
  using RowVec = Eigen::Array<S, 1, Eigen::Dynamic>;
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw ContractError("layer_norm: gain/bias must have shape [" + std::to_string(cols) + "]");
  }
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  TensorT xhat(x.shape());
  Eigen::Array<S, Eigen::Dynamic, 1> rstd(rows);
  auto X = x.value().as_matrix(rows, cols);
  auto Xh = xhat.as_matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto row = X.row(r).template cast<double>().array();
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<S>(inv);
    Xh.row(r) = ((row - mean) * inv).template cast<S>().matrix();
  }
  TensorT Y(x.shape());
  const detail::RowVecMap<S> gvec(gain.value().data(), cols);
  const detail::RowVecMap<S> bvec(bias.value().data(), cols);
  Y.as_matrix(rows, cols).array() = (Xh.array().rowwise() * gvec.array()).rowwise() + bvec.array();

  return x.tape().record(
      std::move(Y), {x, gain, bias},
      [ix = x.id(), ig = gain.id(), ib = bias.id(), rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape<S>& t, const TensorT& g) {
        const auto G = g.as_matrix(rows, cols).array();
        const auto Xh = xhat.as_matrix(rows, cols).array();
        if (t.requires_grad(ig)) t.grad(ig).as_matrix(1, cols).array() += (G * Xh).colwise().sum();
        if (t.requires_grad(ib)) t.grad(ib).as_matrix(1, cols).array() += G.colwise().sum();
        if (t.requires_grad(ix)) {
          const RowVec gv = detail::RowVecMap<S>(t.value(ig).data(), cols).array();
          auto dX = t.grad(ix).as_matrix(rows, cols).array();
          for (Index r = 0; r < rows; ++r) {
            const RowVec dxh = G.row(r) * gv;
            const S mean_dxh = static_cast<S>(dxh.template cast<double>().mean());
            const S mean_dxh_xh = static_cast<S>((dxh * Xh.row(r)).template cast<double>().mean());
            dX.row(r) += rstd[r] * (dxh - mean_dxh - Xh.row(r) * mean_dxh_xh);
          }
        }
      });
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename S>
Var<S> gelu(const Var<S>& x) {
  using TensorT = Tensor<S>;
  const S c = static_cast<S>(kGeluSqrt2OverPi);
  const S k = static_cast<S>(kGeluCubic);
  const auto& X = x.value().array();
  TensorT Y(x.shape(), S(0.5) * X * (S(1) + (c * (X + k * X.cube())).tanh()));
  return x.tape().record(std::move(Y), {x}, [ix = x.id(), c, k](Tape<S>& t, const TensorT& g) {
    const auto& X = t.value(ix).array();
    const auto th = (c * (X + k * X.cube())).tanh().eval();
    const auto d = S(0.5) * (S(1) + th) + S(0.5) * X * (S(1) - th.square()) * c * (S(1) + S(3) * k * X.square());
    t.grad(ix).array() += g.array() * d;
  });
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors scaled by 1/(1-rate). Identity otherwise.
template <typename S>
Var<S> dropout(const Var<S>& x, double rate, bool train, DropoutStream* stream) {
  using TensorT = Tensor<S>;
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  if (stream == nullptr) throw ContractError("dropout: train mode needs a DropoutStream");
  auto rng = stream->next();
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  typename TensorT::Array mask(x.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? S(0) : keep_scale;
  TensorT Y(x.shape(), x.value().array() * mask);
  return x.tape().record(std::move(Y), {x}, [ix = x.id(), mask = std::move(mask)](Tape<S>& t, const TensorT& g) {
    t.grad(ix).array() += g.array() * mask;
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// Concatenates along `axis`; all other dims must agree.
template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, Index axis) {
  using TensorT = Tensor<S>;
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  const auto ax = static_cast<std::size_t>(axis < 0 ? static_cast<Index>(ref.size()) + axis : axis);
  if (ax >= ref.size()) throw ContractError("concat: axis out of range");
  Shape out_shape = ref;
  out_shape[ax] = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ContractError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != ref[i]) throw ContractError("concat: shape mismatch " + to_string(s) + " vs " + to_string(ref));
    }
    out_shape[ax] += s[ax];
    Index inner = 1;
    for (std::size_t i = ax; i < s.size(); ++i) inner *= s[i];
    widths.push_back(inner);
  }
  Index outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= ref[i];
  const Index total = numel(out_shape) / outer;
  TensorT Y(out_shape);
  auto Ym = Y.as_matrix(outer, total);
  Index col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    Ym.middleCols(col, widths[p]) = parts[p].value().as_matrix(outer, widths[p]);
    col += widths[p];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(Y), std::span<const Var<S>>(parts),
                                [ids, widths, outer, total](Tape<S>& t, const TensorT& g) {
                                  const auto G = g.as_matrix(outer, total);
                                  Index col = 0;
                                  for (std::size_t p = 0; p < ids.size(); ++p) {
                                    if (t.requires_grad(ids[p])) {
                                      t.grad(ids[p]).as_matrix(outer, widths[p]) += G.middleCols(col, widths[p]);
                                    }
                                    col += widths[p];
                                  }
                                });
}

/// Elements [start, start + length) along `axis`; the axis is kept.
template <typename S>
Var<S> slice(const Var<S>& a, Index axis, Index start, Index length) {
  using TensorT = Tensor<S>;
  const Shape& s = a.shape();
  const auto ax = static_cast<std::size_t>(axis < 0 ? static_cast<Index>(s.size()) + axis : axis);
  if (ax >= s.size() || start < 0 || length <= 0 || start + length > s[ax]) {
    throw ContractError("slice: range out of bounds for shape " + to_string(s));
  }
  Index outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  Index inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const Index full = s[ax] * inner;
  Shape out_shape = s;
  out_shape[ax] = length;
  TensorT Y(out_shape);
  Y.as_matrix(outer, length * inner) = a.value().as_matrix(outer, full).middleCols(start * inner, length * inner);
  return a.tape().record(std::move(Y), {a},
                         [ia = a.id(), outer, full, start, length, inner](Tape<S>& t, const TensorT& g) {
                           t.grad(ia).as_matrix(outer, full).middleCols(start * inner, length * inner) +=
                               g.as_matrix(outer, length * inner);
                         });
}

/// Repeats `a` n times along a new leading axis: shape [n, a.shape...].
template <typename S>
Var<S> broadcast_leading(const Var<S>& a, Index n) {
  using TensorT = Tensor<S>;
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  const Index inner = a.size();
  TensorT Y(out_shape);
  Y.as_matrix(n, inner).rowwise() = detail::RowVecMap<S>(a.value().data(), inner);
  return a.tape().record(std::move(Y), {a}, [ia = a.id(), n, inner](Tape<S>& t, const TensorT& g) {
    t.grad(ia).as_matrix(1, inner) += g.as_matrix(n, inner).colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  using TensorT = Tensor<S>;
  const double total = a.value().array().template cast<double>().sum();
  return a.tape().record(TensorT::scalar(static_cast<S>(total)), {a}, [ia = a.id()](Tape<S>& t, const TensorT& g) {
    t.grad(ia).array() += g[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  using TensorT = Tensor<S>;
  const double n = static_cast<double>(a.size());
  const double total = a.value().array().template cast<double>().sum();
  return a.tape().record(TensorT::scalar(static_cast<S>(total / n)), {a}, [ia = a.id(), n](Tape<S>& t, const TensorT& g) {
    t.grad(ia).array() += static_cast<S>(g[0] / n);
  });
}

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
/// logits: [batch, classes].
template <typename S>
Var<S> cross_entropy_from_logits(const Var<S>& logits, std::span<const int> labels) {
  using TensorT = Tensor<S>;
  if (logits.rank() != 2) throw ContractError("cross_entropy: logits must be [batch, classes]");
  const Index batch = logits.dim(0);
  const Index classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) throw ContractError("cross_entropy: label count != batch size");
  std::vector<int> y(labels.begin(), labels.end());
  for (int l : y) {
    if (l < 0 || l >= classes) throw ContractError("cross_entropy: label out of range");
  }
  const auto L = logits.value().as_matrix(batch, classes);
  double total = 0.0;
  for (Index r = 0; r < batch; ++r) {
    const double mx = L.row(r).maxCoeff();
    const double lse = mx + std::log((L.row(r).template cast<double>().array() - mx).exp().sum());
    total += lse - static_cast<double>(L(r, y[static_cast<std::size_t>(r)]));
  }
  return logits.tape().record(
      TensorT::scalar(static_cast<S>(total / static_cast<double>(batch))), {logits},
      [il = logits.id(), batch, classes, y = std::move(y)](Tape<S>& t, const TensorT& g) {
        const auto L = t.value(il).as_matrix(batch, classes);
        auto dL = t.grad(il).as_matrix(batch, classes);
        const double scale = static_cast<double>(g[0]) / static_cast<double>(batch);
        for (Index r = 0; r < batch; ++r) {
          const double mx = L.row(r).maxCoeff();
          Eigen::ArrayXd p = (L.row(r).template cast<double>().array() - mx).exp().transpose();
          p /= p.sum();
          p[y[static_cast<std::size_t>(r)]] -= 1.0;
          dL.row(r) += (p * scale).template cast<S>().matrix().transpose();
        }
      });
}

}  // namespace vit3d

#pragma once

#include "mvp/common.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

namespace mvp {

// Reverse-mode gradient tape over dense row-major matrices.
//
// Leaves enter with constant() (frozen) or watch() (trainable); the free
// functions below record one node per operation. backward() on a 1x1 result
// accumulates adjoints back to the leaves; grad() is answerable for watched
// leaves only. A tape serves one episode computation at a time, and identical
// inputs replay to bit-identical values and gradients.
//
// Frozen operands (backbone weights) can be passed as plain matrix pointers
// (linear, layer_norm_rows); they are not copied onto the tape and must
// outlive it.
template <typename Scalar>
class Tape;

// Lightweight handle to a tape node.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = MatrixX<Scalar>;
  using ScalarType = Scalar;
  using Var = mvp::Var<Scalar>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false); }
  Var watch(Matrix v) { return push(std::move(v), true); }

  const Matrix& val(Var v) const { return nodes_[check(v)].value; }

  // Gradients are produced for watched arrays only.
  const Matrix& grad(Var v) {
    Node& n = nodes_[check(v)];
    if (!n.watched) throw std::logic_error("Tape::grad: array is not watched");
    touch(v.id);
    return n.grad;
  }

  void backward(Var out) {
    Node& o = nodes_[check(out)];
    if (o.value.rows() != 1 || o.value.cols() != 1)
      throw std::invalid_argument("Tape::backward: output is not scalar");
    if (swept_) throw std::logic_error("Tape::backward: tape already swept");
    swept_ = true;
    touch(out.id).setOnes();
    // Creation order is a topological order; sweep it in reverse. Nodes whose
    // grad was never touched cannot influence the output and are skipped.
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() != 0 && n.backprop) n.backprop(*this);
    }
  }

  // --- used by op builders --------------------------------------------------

  Var push(Matrix v, bool watched) {
    nodes_.push_back(Node{std::move(v), Matrix(), nullptr, watched});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backprop(Var v, std::function<void(Tape&)> fn) {
    nodes_[check(v)].backprop = std::move(fn);
  }

  Matrix& touch(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated on first contribution
    std::function<void(Tape&)> backprop;
    bool watched = false;
  };

  std::size_t check(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("Tape: foreign or invalid var");
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& tape_of(Var<Scalar> a) {
  if (a.tape == nullptr) throw std::logic_error("op on default-constructed var");
  return *a.tape;
}

// Push value, then install a backprop closure that knows its own node id.
template <typename Scalar, typename MakeBack>
Var<Scalar> record(Tape<Scalar>& t, MatrixX<Scalar> value, MakeBack make_back) {
  auto v = t.push(std::move(value), false);
  t.set_backprop(v, make_back(v.id));
  return v;
}

}  // namespace detail

// --- elementwise / affine ----------------------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw std::invalid_argument("add: shape mismatch");
  return detail::record(t, MatrixX<Scalar>(av + bv), [ai = a.id, bi = b.id](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      tp.touch(ai) += g;
      tp.touch(bi) += g;
    };
  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  auto& t = detail::tape_of(a);
  return detail::record(t, MatrixX<Scalar>(t.val(a) * s), [ai = a.id, s](int self) {
    return [=](Tape<Scalar>& tp) { tp.touch(ai) += s * tp.grad_of(self); };
  });
}

template <typename Scalar>
Var<Scalar> one_minus(Var<Scalar> a) {
  auto& t = detail::tape_of(a);
  MatrixX<Scalar> v = MatrixX<Scalar>::Constant(t.val(a).rows(), t.val(a).cols(), Scalar(1)) - t.val(a);
  return detail::record(t, std::move(v), [ai = a.id](int self) {
    return [=](Tape<Scalar>& tp) { tp.touch(ai) -= tp.grad_of(self); };
  });
}

// y = x * W + 1 * b, with frozen W (k x n) and row bias b (1 x n).
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, const MatrixX<Scalar>* W, const MatrixX<Scalar>* b) {
  auto& t = detail::tape_of(x);
  const auto& xv = t.val(x);
  if (xv.cols() != W->rows() || b->rows() != 1 || b->cols() != W->cols())
    throw std::invalid_argument("linear: shape mismatch");
  MatrixX<Scalar> v = xv * (*W);
  v.rowwise() += b->row(0);
  return detail::record(t, std::move(v), [xi = x.id, W](int self) {
    return [=](Tape<Scalar>& tp) {
      tp.touch(xi).noalias() += tp.grad_of(self) * W->transpose();
    };
  });
}

// --- products ---------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: shape mismatch");
  return detail::record(t, MatrixX<Scalar>(av * bv), [ai = a.id, bi = b.id](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      tp.touch(ai).noalias() += g * tp.value_of(bi).transpose();
      tp.touch(bi).noalias() += tp.value_of(ai).transpose() * g;
    };
  });
}

// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  if (av.cols() != bv.cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  return detail::record(t, MatrixX<Scalar>(av * bv.transpose()), [ai = a.id, bi = b.id](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      tp.touch(ai).noalias() += g * tp.value_of(bi);
      tp.touch(bi).noalias() += g.transpose() * tp.value_of(ai);
    };
  });
}

// --- slicing / concatenation --------------------------------------------------

template <typename Scalar>
Var<Scalar> rows(Var<Scalar> a, Index start, Index n) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  if (start < 0 || n < 0 || start + n > av.rows()) throw std::invalid_argument("rows: slice out of range");
  return detail::record(t, MatrixX<Scalar>(av.middleRows(start, n)), [ai = a.id, start, n](int self) {
    return [=](Tape<Scalar>& tp) {
      tp.touch(ai).middleRows(start, n) += tp.grad_of(self);
    };
  });
}

template <typename Scalar>
Var<Scalar> cols(Var<Scalar> a, Index start, Index n) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  if (start < 0 || n < 0 || start + n > av.cols()) throw std::invalid_argument("cols: slice out of range");
  return detail::record(t, MatrixX<Scalar>(av.middleCols(start, n)), [ai = a.id, start, n](int self) {
    return [=](Tape<Scalar>& tp) {
      tp.touch(ai).middleCols(start, n) += tp.grad_of(self);
    };
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  auto& t = detail::tape_of(parts.front());
  Index total = 0;
  const Index c = t.val(parts.front()).cols();
  for (auto p : parts) {
    if (t.val(p).cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    total += t.val(p).rows();
  }
  MatrixX<Scalar> v(total, c);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index r = 0;
  for (auto p : parts) {
    const auto& pv = t.val(p);
    v.middleRows(r, pv.rows()) = pv;
    ids.push_back(p.id);
    offsets.push_back(r);
    r += pv.rows();
  }
  return detail::record(t, std::move(v), [ids, offsets](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        auto& pg = tp.touch(ids[k]);
        pg += g.middleRows(offsets[k], pg.rows());
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  auto& t = detail::tape_of(parts.front());
  Index total = 0;
  const Index r = t.val(parts.front()).rows();
  for (auto p : parts) {
    if (t.val(p).rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    total += t.val(p).cols();
  }
  MatrixX<Scalar> v(r, total);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index c = 0;
  for (auto p : parts) {
    const auto& pv = t.val(p);
    v.middleCols(c, pv.cols()) = pv;
    ids.push_back(p.id);
    offsets.push_back(c);
    c += pv.cols();
  }
  return detail::record(t, std::move(v), [ids, offsets](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        auto& pg = tp.touch(ids[k]);
        pg += g.middleCols(offsets[k], pg.cols());
      }
    };
  });
}

// --- nonlinearities -----------------------------------------------------------

// Row-wise softmax, stabilized by max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  if (av.cols() < 1) throw std::invalid_argument("softmax: empty axis");
  VectorX<Scalar> m = av.rowwise().maxCoeff();
  MatrixX<Scalar> y = (av.array().colwise() - m.array()).exp();
  VectorX<Scalar> s = y.rowwise().sum();
  y.array().colwise() /= s.array();
  return detail::record(t, std::move(y), [ai = a.id](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& y = tp.value_of(self);
      const auto& g = tp.grad_of(self);
      VectorX<Scalar> dot = (g.array() * y.array()).rowwise().sum();
      tp.touch(ai).array() += y.array() * (g.array().colwise() - dot.array());
    };
  });
}

// Row-wise layer norm with population variance; gain/bias are frozen 1 x d rows.
template <typename Scalar>
Var<Scalar> layer_norm_rows(Var<Scalar> a, const MatrixX<Scalar>* gain, const MatrixX<Scalar>* bias,
                            Scalar eps) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  if (gain->cols() != av.cols() || bias->cols() != av.cols() || gain->rows() != 1 || bias->rows() != 1)
    throw std::invalid_argument("layer_norm: shape mismatch");
  if (!(eps > Scalar(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  VectorX<Scalar> mu = av.rowwise().mean();
  MatrixX<Scalar> centered = av.array().colwise() - mu.array();
  VectorX<Scalar> var = centered.array().square().rowwise().mean();
  VectorX<Scalar> inv_std = (var.array() + eps).sqrt().inverse();
  MatrixX<Scalar> xhat = centered.array().colwise() * inv_std.array();
  MatrixX<Scalar> y = (xhat.array().rowwise() * gain->row(0).array()).rowwise() + bias->row(0).array();
  return detail::record(t, std::move(y), [ai = a.id, gain, xhat, inv_std](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& g = tp.grad_of(self);
      MatrixX<Scalar> gy = g.array().rowwise() * gain->row(0).array();
      VectorX<Scalar> mean_gy = gy.rowwise().mean();
      VectorX<Scalar> mean_gy_xhat = (gy.array() * xhat.array()).rowwise().mean();
      tp.touch(ai).array() += ((gy.array().colwise() - mean_gy.array()) -
                               xhat.array().colwise() * mean_gy_xhat.array())
                                  .colwise() *
                              inv_std.array();
    };
  });
}

// Exact-erf GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  auto& t = detail::tape_of(a);
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  MatrixX<Scalar> y = t.val(a).unaryExpr([inv_sqrt2](Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2));
  });
  return detail::record(t, std::move(y), [ai = a.id, inv_sqrt2](int self) {
    return [=](Tape<Scalar>& tp) {
      const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
      const auto& x = tp.value_of(ai);
      // d/dx = Phi(x) + x phi(x)
      tp.touch(ai).array() +=
          tp.grad_of(self).array() *
          x.unaryExpr([=](Scalar v) {
             return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) +
                    v * inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
           }).array();
    };
  });
}

// Each row divided by its L2 norm. Zero-norm rows are a domain error (the
// cosine distance downstream is undefined there; no silent epsilon).
template <typename Scalar>
Var<Scalar> row_l2_normalize(Var<Scalar> a) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  VectorX<Scalar> norms = av.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > Scalar(0))) throw std::domain_error("row_l2_normalize: zero-norm row");
  MatrixX<Scalar> y = av.array().colwise() / norms.array();
  return detail::record(t, std::move(y), [ai = a.id, norms](int self) {
    return [=](Tape<Scalar>& tp) {
      const auto& y = tp.value_of(self);
      const auto& g = tp.grad_of(self);
      VectorX<Scalar> dot = (g.array() * y.array()).rowwise().sum();
      tp.touch(ai).array() +=
          (g.array() - y.array().colwise() * dot.array()).colwise() / norms.array();
    };
  });
}

// sum(a .* W) as a 1x1 result; W is a fixed coefficient matrix. The generic
// scalar head used to gradient-check matrix-valued ops.
template <typename Scalar>
Var<Scalar> weighted_sum(Var<Scalar> a, typename Tape<Scalar>::Matrix W) {
  auto& t = detail::tape_of(a);
  const auto& av = t.val(a);
  if (av.rows() != W.rows() || av.cols() != W.cols())
    throw std::invalid_argument("weighted_sum: shape mismatch");
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = (av.array() * W.array()).sum();
  return detail::record(t, std::move(out), [ai = a.id, W](int self) {
    return [=](Tape<Scalar>& tp) { tp.touch(ai) += tp.grad_of(self)(0, 0) * W; };
  });
}

// --- prototypical loss head -----------------------------------------------------
//
// dists: q x C matrix of distances d(f_j, mu_c). Per query j with true class
// c_j and weight w_j (1/|S_c| in the weighted form, 1 in the plain-NLL form):
//   w_j * ( dists[j, c_j] + log sum_c' exp(-dists[j, c']) )
// and the result is the mean over queries.
template <typename Scalar>
Var<Scalar> episode_nll(Var<Scalar> dists, const std::vector<int>& labels,
                        const std::vector<Scalar>& weights) {
  auto& t = detail::tape_of(dists);
  const auto& d = t.val(dists);
  const Index q = d.rows();
  const Index c = d.cols();
  if (static_cast<Index>(labels.size()) != q || static_cast<Index>(weights.size()) != q)
    throw std::invalid_argument("episode_nll: label/weight count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw std::out_of_range("episode_nll: label outside [0, C)");
  MatrixX<Scalar> probs(q, c);  // softmax over -dists, saved for backward
  Scalar total = 0;
  for (Index j = 0; j < q; ++j) {
    const Scalar m = -d.row(j).minCoeff();
    VectorX<Scalar> e = (-d.row(j).transpose().array() - m).exp();
    const Scalar s = e.sum();
    probs.row(j) = (e / s).transpose();
    const Scalar lse = m + std::log(s);
    total += weights[static_cast<std::size_t>(j)] *
             (d(j, labels[static_cast<std::size_t>(j)]) + lse);
  }
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = total / Scalar(q);
  return detail::record(t, std::move(out), [di = dists.id, labels, weights, probs, q](int self) {
    return [=](Tape<Scalar>& tp) {
      const Scalar go = tp.grad_of(self)(0, 0);
      auto& dg = tp.touch(di);
      for (Index j = 0; j < q; ++j) {
        const Scalar w = go * weights[static_cast<std::size_t>(j)] / Scalar(q);
        dg.row(j) -= w * probs.row(j);
        dg(j, labels[static_cast<std::size_t>(j)]) += w;
      }
    };
  });
}

// --- value-only wrappers ----------------------------------------------------------

template <typename Scalar>
MatrixX<Scalar> softmax(const MatrixX<Scalar>& v) {
  Tape<Scalar> t;
  return t.val(softmax_rows(t.constant(v)));
}

template <typename Scalar>
MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& v, const MatrixX<Scalar>& gain,
                           const MatrixX<Scalar>& bias, Scalar eps = Scalar(1e-6)) {
  Tape<Scalar> t;
  return t.val(layer_norm_rows(t.constant(v), &gain, &bias, eps));
}

// --- finite differences ----------------------------------------------------------

template <typename Scalar>
constexpr Scalar fd_default_step() {
  if constexpr (std::is_same_v<Scalar, float>)
    return Scalar(1e-3);
  else
    return Scalar(1e-6);
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
// f must return a scalar; this is the verification oracle for the tape and
// stays independent of it.
template <typename Scalar, typename F>
MatrixX<Scalar> finite_difference_gradient(const F& f, const MatrixX<Scalar>& x,
                                           Scalar h = fd_default_step<Scalar>()) {
  static_assert(std::is_convertible_v<decltype(f(std::declval<const MatrixX<Scalar>&>())), Scalar>,
                "finite_difference_gradient: f must produce a scalar");
  if (!(h > Scalar(0))) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  MatrixX<Scalar> g(x.rows(), x.cols());
  MatrixX<Scalar> xp = x;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      xp(i, j) = x(i, j) + h;
      const Scalar fp = f(xp);
      xp(i, j) = x(i, j) - h;
      const Scalar fm = f(xp);
      xp(i, j) = x(i, j);
      g(i, j) = (fp - fm) / (Scalar(2) * h);
    }
  }
  return g;
}

}  // namespace mvp

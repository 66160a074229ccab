#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lplab/parallel.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

// Reverse-mode tape. Creation order is topological order, so backward() is a
// single reverse sweep. Values are computed eagerly; backward closures are
// only registered when a parent requires gradients.
//
// Cross-sample gradient reductions (conv/linear weight grads, batch sums)
// accumulate into fixed-size chunk buffers that are combined in chunk order,
// which keeps results bit-identical for any LPL_LAB_THREADS setting.
constexpr int kGradChunk = 4;

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int idx = -1;
  bool valid() const { return graph != nullptr && idx >= 0; }
};

template <typename T>
struct GraphNode {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::function<void(Graph<T>&, int)> backward;
};

template <typename T>
class Graph {
 public:
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    GraphNode<T> n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  int emplace(Tensor<T> value, bool requires_grad, std::function<void(Graph<T>&, int)> backward) {
    GraphNode<T> n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  GraphNode<T>& node(int i) { return nodes_[static_cast<size_t>(i)]; }
  const GraphNode<T>& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  const Tensor<T>& value(Var<T> v) const { return node(v.idx).value; }
  const Tensor<T>& grad(Var<T> v) const { return node(v.idx).grad; }

  // Adds `delta` into the gradient buffer of node i (no-op if grads are not
  // required there). The passed lambda fills/accumulates into a raw buffer.
  Tensor<T>& grad_buffer(int i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> root) {
    auto& r = node(root.idx);
    if (r.value.numel() != 1) throw std::logic_error("backward: root must be scalar");
    grad_buffer(root.idx)[0] = T(1);
    for (int i = root.idx; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<GraphNode<T>> nodes_;
};

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

template <typename T>
inline void check_same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw std::logic_error("vars belong to different graphs");
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T, typename FwdFn, typename BwdA, typename BwdB>
Var<T> binary_elementwise(Var<T> a, Var<T> b, FwdFn f, BwdA dfa, BwdB dfb) {
  detail::check_same_graph(a, b);
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("elementwise: shape mismatch");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(av[i], bv[i]);
  bool rg = g.node(a.idx).requires_grad || g.node(b.idx).requires_grad;
  int ai = a.idx, bi = b.idx;
  int idx = g.emplace(std::move(out), rg, [ai, bi, dfa, dfb](Graph<T>& gg, int self) {
    const Tensor<T>& go = gg.node(self).grad;
    const Tensor<T>& av2 = gg.node(ai).value;
    const Tensor<T>& bv2 = gg.node(bi).value;
    const Tensor<T>& ov = gg.node(self).value;
    if (gg.node(ai).requires_grad) {
      Tensor<T>& ga = gg.grad_buffer(ai);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * dfa(av2[i], bv2[i], ov[i]);
    }
    if (gg.node(bi).requires_grad) {
      Tensor<T>& gb = gg.grad_buffer(bi);
      for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * dfb(av2[i], bv2[i], ov[i]);
    }
  });
  return {&g, idx};
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_elementwise(Var<T> a, FwdFn f, BwdFn df) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(av[i]);
  bool rg = g.node(a.idx).requires_grad;
  int ai = a.idx;
  int idx = g.emplace(std::move(out), rg, [ai, df](Graph<T>& gg, int self) {
    const Tensor<T>& go = gg.node(self).grad;
    const Tensor<T>& av2 = gg.node(ai).value;
    const Tensor<T>& ov = gg.node(self).value;
    Tensor<T>& ga = gg.grad_buffer(ai);
    for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * df(av2[i], ov[i]);
  });
  return {&g, idx};
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary_elementwise(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return unary_elementwise(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary_elementwise(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> sqrt_op(Var<T> a) {
  return unary_elementwise(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> clamp_min(Var<T> a, T lo) {
  return unary_elementwise(
      a, [lo](T x) { return x < lo ? lo : x; }, [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return unary_elementwise(
      a,
      [](T x) {
        T s = T(1) / (T(1) + std::exp(-x));
        return x * s;
      },
      [](T x, T) {
        T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
  return unary_elementwise(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  // Chunked summation over the leading dimension keeps the result independent
  // of threading elsewhere and well-conditioned for long batches.
  T total = T(0);
  int64_t n = av.numel();
  for (int64_t i = 0; i < n; ++i) total += av[i];
  int ai = a.idx;
  int idx = g.emplace(Tensor<T>::scalar(total), g.node(a.idx).requires_grad,
                      [ai](Graph<T>& gg, int self) {
                        T go = gg.node(self).grad[0];
                        Tensor<T>& ga = gg.grad_buffer(ai);
                        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
                      });
  return {&g, idx};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  int64_t n = a.graph->value(a).numel();
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// Per-(sample, channel) spatial sum: [B,C,H,W] -> [B,C]
template <typename T>
Var<T> sum_spatial(Var<T> a) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  if (av.ndim() != 4) throw std::invalid_argument("sum_spatial: expected 4-d input");
  int B = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
  Tensor<T> out({B, C});
  int64_t hw = static_cast<int64_t>(H) * W;
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    T s = T(0);
    const T* p = av.ptr() + bc * hw;
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[bc] = s;
  }
  int ai = a.idx;
  int idx = g.emplace(std::move(out), g.node(a.idx).requires_grad, [ai, hw](Graph<T>& gg, int self) {
    const Tensor<T>& go = gg.node(self).grad;
    Tensor<T>& ga = gg.grad_buffer(ai);
    for (int64_t bc = 0; bc < go.numel(); ++bc) {
      T* p = ga.ptr() + bc * hw;
      T v = go[bc];
      for (int64_t i = 0; i < hw; ++i) p[i] += v;
    }
  });
  return {&g, idx};
}

// ---- broadcasting [B,C] over [B,C,H,W] --------------------------------------

template <typename T, bool kMul>
Var<T> broadcast_bc_impl(Var<T> x, Var<T> s) {
  detail::check_same_graph(x, s);
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& sv = g.value(s);
  if (xv.ndim() != 4 || sv.ndim() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1))
    throw std::invalid_argument("broadcast_bc: shape mismatch");
  int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int64_t bc = 0; bc < sv.numel(); ++bc) {
    const T* xp = xv.ptr() + bc * hw;
    T* op = out.ptr() + bc * hw;
    T c = sv[bc];
    if constexpr (kMul)
      for (int64_t i = 0; i < hw; ++i) op[i] = xp[i] * c;
    else
      for (int64_t i = 0; i < hw; ++i) op[i] = xp[i] + c;
  }
  bool rg = g.node(x.idx).requires_grad || g.node(s.idx).requires_grad;
  int xi = x.idx, si = s.idx;
  int idx = g.emplace(std::move(out), rg, [xi, si, hw](Graph<T>& gg, int self) {
    const Tensor<T>& go = gg.node(self).grad;
    const Tensor<T>& xv2 = gg.node(xi).value;
    const Tensor<T>& sv2 = gg.node(si).value;
    if (gg.node(xi).requires_grad) {
      Tensor<T>& gx = gg.grad_buffer(xi);
      for (int64_t bc = 0; bc < sv2.numel(); ++bc) {
        const T* gop = go.ptr() + bc * hw;
        T* gp = gx.ptr() + bc * hw;
        if constexpr (kMul) {
          T c = sv2[bc];
          for (int64_t i = 0; i < hw; ++i) gp[i] += gop[i] * c;
        } else {
          for (int64_t i = 0; i < hw; ++i) gp[i] += gop[i];
        }
      }
    }
    if (gg.node(si).requires_grad) {
      Tensor<T>& gs = gg.grad_buffer(si);
      for (int64_t bc = 0; bc < sv2.numel(); ++bc) {
        const T* gop = go.ptr() + bc * hw;
        T acc = T(0);
        if constexpr (kMul) {
          const T* xp = xv2.ptr() + bc * hw;
          for (int64_t i = 0; i < hw; ++i) acc += gop[i] * xp[i];
        } else {
          for (int64_t i = 0; i < hw; ++i) acc += gop[i];
        }
        gs[bc] += acc;
      }
    }
  });
  return {&g, idx};
}

template <typename T>
Var<T> mul_bc(Var<T> x, Var<T> scale_bc) {
  return broadcast_bc_impl<T, true>(x, scale_bc);
}

template <typename T>
Var<T> add_bc(Var<T> x, Var<T> shift_bc) {
  return broadcast_bc_impl<T, false>(x, shift_bc);
}

// ---- shape / indexing ------------------------------------------------------

template <typename T>
Var<T> slice_cols(Var<T> a, int start, int len) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  if (av.ndim() != 2 || start < 0 || start + len > av.dim(1))
    throw std::invalid_argument("slice_cols: bad range");
  int B = av.dim(0), N = av.dim(1);
  Tensor<T> out({B, len});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < len; ++j) out[static_cast<int64_t>(b) * len + j] = av[static_cast<int64_t>(b) * N + start + j];
  int ai = a.idx;
  int idx = g.emplace(std::move(out), g.node(a.idx).requires_grad,
                      [ai, start, len, N](Graph<T>& gg, int self) {
                        const Tensor<T>& go = gg.node(self).grad;
                        Tensor<T>& ga = gg.grad_buffer(ai);
                        int B2 = go.dim(0);
                        for (int b = 0; b < B2; ++b)
                          for (int j = 0; j < len; ++j)
                            ga[static_cast<int64_t>(b) * N + start + j] += go[static_cast<int64_t>(b) * len + j];
                      });
  return {&g, idx};
}

// Selects rows (dim 0); backward scatter-adds into the source rows.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<int> indices) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = g.value(a);
  int64_t row = av.numel() / av.dim(0);
  std::vector<int> oshape = av.shape();
  oshape[0] = static_cast<int>(indices.size());
  Tensor<T> out(oshape);
  for (size_t m = 0; m < indices.size(); ++m) {
    if (indices[m] < 0 || indices[m] >= av.dim(0)) throw std::out_of_range("gather_rows index");
    std::copy_n(av.ptr() + indices[m] * row, row, out.ptr() + static_cast<int64_t>(m) * row);
  }
  int ai = a.idx;
  int idx = g.emplace(std::move(out), g.node(a.idx).requires_grad,
                      [ai, indices, row](Graph<T>& gg, int self) {
                        const Tensor<T>& go = gg.node(self).grad;
                        Tensor<T>& ga = gg.grad_buffer(ai);
                        for (size_t m = 0; m < indices.size(); ++m) {
                          const T* src = go.ptr() + static_cast<int64_t>(m) * row;
                          T* dst = ga.ptr() + indices[m] * row;
                          for (int64_t i = 0; i < row; ++i) dst[i] += src[i];
                        }
                      });
  return {&g, idx};
}

// out[s] = a[s] * xconst[s] + b[s] * y[s] over leading (sample) dimension.
// Covers the x0-recovery formulas of all three frameworks.
template <typename T>
Var<T> lincomb_rows(const Tensor<T>& xconst, Var<T> y, std::vector<T> a, std::vector<T> b) {
  Graph<T>& g = *y.graph;
  const Tensor<T>& yv = g.value(y);
  if (!xconst.same_shape(yv)) throw std::invalid_argument("lincomb_rows: shape mismatch");
  int B = yv.dim(0);
  if (static_cast<int>(a.size()) != B || static_cast<int>(b.size()) != B)
    throw std::invalid_argument("lincomb_rows: coefficient count mismatch");
  int64_t row = yv.numel() / B;
  Tensor<T> out(yv.shape());
  for (int s = 0; s < B; ++s) {
    const T* xp = xconst.ptr() + s * row;
    const T* yp = yv.ptr() + s * row;
    T* op = out.ptr() + s * row;
    for (int64_t i = 0; i < row; ++i) op[i] = a[static_cast<size_t>(s)] * xp[i] + b[static_cast<size_t>(s)] * yp[i];
  }
  int yi = y.idx;
  int idx = g.emplace(std::move(out), g.node(y.idx).requires_grad,
                      [yi, b, row](Graph<T>& gg, int self) {
                        const Tensor<T>& go = gg.node(self).grad;
                        Tensor<T>& gy = gg.grad_buffer(yi);
                        int B2 = go.dim(0);
                        for (int s = 0; s < B2; ++s) {
                          const T* gp = go.ptr() + s * row;
                          T* yp = gy.ptr() + s * row;
                          T c = b[static_cast<size_t>(s)];
                          for (int64_t i = 0; i < row; ++i) yp[i] += c * gp[i];
                        }
                      });
  return {&g, idx};
}

// ---- linear / embedding ----------------------------------------------------

// x:[B,In] w:[Out,In] b:[Out] -> [B,Out]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  detail::check_same_graph(x, w);
  detail::check_same_graph(x, b);
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  int B = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
  if (wv.dim(1) != In || bv.dim(0) != Out) throw std::invalid_argument("linear: shape mismatch");
  Tensor<T> out({B, Out});
  {
    detail::CMapM<T> X(xv.ptr(), B, In), W(wv.ptr(), Out, In);
    detail::MapM<T> Y(out.ptr(), B, Out);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < Out; ++j) out[static_cast<int64_t>(i) * Out + j] += bv[j];
  }
  bool rg = g.node(x.idx).requires_grad || g.node(w.idx).requires_grad || g.node(b.idx).requires_grad;
  int xi = x.idx, wi = w.idx, bi = b.idx;
  int idx = g.emplace(std::move(out), rg, [xi, wi, bi, B, In, Out](Graph<T>& gg, int self) {
    const Tensor<T>& go = gg.node(self).grad;
    detail::CMapM<T> GO(go.ptr(), B, Out);
    if (gg.node(xi).requires_grad) {
      detail::CMapM<T> W(gg.node(wi).value.ptr(), Out, In);
      detail::MapM<T> GX(gg.grad_buffer(xi).ptr(), B, In);
      GX.noalias() += GO * W;
    }
    if (gg.node(wi).requires_grad) {
      detail::CMapM<T> X(gg.node(xi).value.ptr(), B, In);
      detail::MapM<T> GW(gg.grad_buffer(wi).ptr(), Out, In);
      GW.noalias() += GO.transpose() * X;
    }
    if (gg.node(bi).requires_grad) {
      Tensor<T>& gb = gg.grad_buffer(bi);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < Out; ++j) gb[j] += go[static_cast<int64_t>(i) * Out + j];
    }
  });
  return {&g, idx};
}

// table:[V,D], idx list of B entries -> [B,D]
template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  Graph<T>& g = *table.graph;
  const Tensor<T>& tv = g.value(table);
  int V = tv.dim(0), D = tv.dim(1);
  int B = static_cast<int>(ids.size());
  Tensor<T> out({B, D});
  for (int i = 0; i < B; ++i) {
    if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= V)
      throw std::out_of_range("embedding index");
    std::copy_n(tv.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * D, D,
                out.ptr() + static_cast<int64_t>(i) * D);
  }
  int ti = table.idx;
  int idx = g.emplace(std::move(out), g.node(table.idx).requires_grad,
                      [ti, ids, D](Graph<T>& gg, int self) {
                        const Tensor<T>& go = gg.node(self).grad;
                        Tensor<T>& gt = gg.grad_buffer(ti);
                        for (size_t i = 0; i < ids.size(); ++i) {
                          const T* src = go.ptr() + static_cast<int64_t>(i) * D;
                          T* dst = gt.ptr() + static_cast<int64_t>(ids[i]) * D;
                          for (int j = 0; j < D; ++j) dst[j] += src[j];
                        }
                      });
  return {&g, idx};
}

// ---- conv2d ----------------------------------------------------------------

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col: [C*k*k, OH*OW]
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, T* col) {
  int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst + static_cast<int64_t>(oy) * OW, OW, T(0));
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kj;
            dst[static_cast<int64_t>(oy) * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, T* x_accum) {
  int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* dst = x_accum + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += src[static_cast<int64_t>(oy) * OW + ox];
          }
        }
      }
    }
  }
}

// x:[B,C,H,W] w:[Co,C,k,k] b:[Co]; the only op with internal parallelism.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  detail::check_same_graph(x, w);
  detail::check_same_graph(x, b);
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  if (xv.ndim() != 4 || wv.ndim() != 4) throw std::invalid_argument("conv2d: expected 4-d tensors");
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int Co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C || wv.dim(3) != k || bv.dim(0) != Co)
    throw std::invalid_argument("conv2d: weight/bias shape mismatch");
  int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  int64_t K = static_cast<int64_t>(C) * k * k, N = static_cast<int64_t>(OH) * OW;

  Tensor<T> out({B, Co, OH, OW});
  parallel_for(B, [&](int64_t s) {
    std::vector<T> col(static_cast<size_t>(K * N));
    im2col(xv.ptr() + s * C * H * W, C, H, W, k, stride, pad, col.data());
    detail::CMapM<T> Wm(wv.ptr(), Co, K), Cm(col.data(), K, N);
    detail::MapM<T> Ym(out.ptr() + s * Co * N, Co, N);
    Ym.noalias() = Wm * Cm;
    for (int co = 0; co < Co; ++co) Ym.row(co).array() += bv[co];
  });

  bool rg = g.node(x.idx).requires_grad || g.node(w.idx).requires_grad || g.node(b.idx).requires_grad;
  int xi = x.idx, wi = w.idx, bi = b.idx;
  int idx = g.emplace(
      std::move(out), rg, [xi, wi, bi, B, C, H, W, Co, k, stride, pad, K, N](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.node(self).grad;
        const Tensor<T>& xv2 = gg.node(xi).value;
        const Tensor<T>& wv2 = gg.node(wi).value;
        bool need_x = gg.node(xi).requires_grad;
        bool need_w = gg.node(wi).requires_grad;
        bool need_b = gg.node(bi).requires_grad;

        Tensor<T>* gx = need_x ? &gg.grad_buffer(xi) : nullptr;
        int nchunks = (B + kGradChunk - 1) / kGradChunk;
        std::vector<Tensor<T>> wchunks;
        std::vector<std::vector<T>> bchunks;
        if (need_w) wchunks.assign(static_cast<size_t>(nchunks), Tensor<T>());
        if (need_b) bchunks.assign(static_cast<size_t>(nchunks), std::vector<T>());

        parallel_for(nchunks, [&](int64_t ch) {
          int s0 = static_cast<int>(ch) * kGradChunk;
          int s1 = std::min(B, s0 + kGradChunk);
          std::vector<T> col(static_cast<size_t>(K * N));
          std::vector<T> dcol(need_x ? static_cast<size_t>(K * N) : 0);
          detail::MapM<T>* gwm = nullptr;
          if (need_w) {
            wchunks[static_cast<size_t>(ch)] = Tensor<T>(wv2.shape());
          }
          if (need_b) bchunks[static_cast<size_t>(ch)].assign(static_cast<size_t>(Co), T(0));
          for (int s = s0; s < s1; ++s) {
            detail::CMapM<T> GO(go.ptr() + static_cast<int64_t>(s) * Co * N, Co, N);
            if (need_x) {
              detail::CMapM<T> Wm(wv2.ptr(), Co, K);
              detail::MapM<T> DC(dcol.data(), K, N);
              DC.noalias() = Wm.transpose() * GO;
              col2im(dcol.data(), C, H, W, k, stride, pad, gx->ptr() + static_cast<int64_t>(s) * C * H * W);
            }
            if (need_w || need_b) {
              if (need_w) {
                im2col(xv2.ptr() + static_cast<int64_t>(s) * C * H * W, C, H, W, k, stride, pad, col.data());
                detail::CMapM<T> Cm(col.data(), K, N);
                detail::MapM<T> GW(wchunks[static_cast<size_t>(ch)].ptr(), Co, K);
                GW.noalias() += GO * Cm.transpose();
              }
              if (need_b) {
                auto& bc = bchunks[static_cast<size_t>(ch)];
                for (int co = 0; co < Co; ++co) bc[static_cast<size_t>(co)] += GO.row(co).sum();
              }
            }
          }
          (void)gwm;
        });

        if (need_w) {
          Tensor<T>& gw = gg.grad_buffer(wi);
          for (int ch = 0; ch < nchunks; ++ch)
            for (int64_t i = 0; i < gw.numel(); ++i) gw[i] += wchunks[static_cast<size_t>(ch)][i];
        }
        if (need_b) {
          Tensor<T>& gb = gg.grad_buffer(bi);
          for (int ch = 0; ch < nchunks; ++ch)
            for (int co = 0; co < Co; ++co) gb[co] += bchunks[static_cast<size_t>(ch)][static_cast<size_t>(co)];
        }
      });
  return {&g, idx};
}

// ---- resampling ------------------------------------------------------------

template <typename T>
Var<T> upsample_nearest2(Var<T> x) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = g.value(x);
  int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> out({B, C, 2 * H, 2 * W});
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* src = xv.ptr() + bc * H * W;
    T* dst = out.ptr() + bc * 4 * H * W;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        T v = src[static_cast<int64_t>(y) * W + xx];
        int64_t o = static_cast<int64_t>(2 * y) * 2 * W + 2 * xx;
        dst[o] = v;
        dst[o + 1] = v;
        dst[o + 2 * W] = v;
        dst[o + 2 * W + 1] = v;
      }
  }
  int ai = x.idx;
  int idx = g.emplace(std::move(out), g.node(x.idx).requires_grad,
                      [ai, B, C, H, W](Graph<T>& gg, int self) {
                        const Tensor<T>& go = gg.node(self).grad;
                        Tensor<T>& ga = gg.grad_buffer(ai);
                        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                          T* dst = ga.ptr() + bc * H * W;
                          const T* src = go.ptr() + bc * 4 * H * W;
                          for (int y = 0; y < H; ++y)
                            for (int xx = 0; xx < W; ++xx) {
                              int64_t o = static_cast<int64_t>(2 * y) * 2 * W + 2 * xx;
                              dst[static_cast<int64_t>(y) * W + xx] +=
                                  src[o] + src[o + 1] + src[o + 2 * W] + src[o + 2 * W + 1];
                            }
                        }
                      });
  return {&g, idx};
}

// ---- convenience -----------------------------------------------------------

template <typename T>
Var<T> mse(Var<T> pred, Var<T> target) {
  return mean_all(square(sub(pred, target)));
}

}  // namespace lplab

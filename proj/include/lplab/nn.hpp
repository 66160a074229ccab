#pragma once

#include <functional>
#include <string>
#include <unordered_map>

#include "lplab/autograd.hpp"
#include "lplab/rng.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// Binds every parameter of a model into a graph exactly once, so gradients
// accumulate on a single leaf per parameter.
template <typename T>
class Binding {
 public:
  template <typename Model>
  Binding(Graph<T>& g, Model& m, bool requires_grad) : g_(&g) {
    m.visit_params([&](const std::string&, Tensor<T>& t) {
      vars_.emplace(t.ptr(), g.leaf(t, requires_grad));
    });
  }

  Var<T> operator[](const Tensor<T>& t) const {
    auto it = vars_.find(t.ptr());
    if (it == vars_.end()) throw std::logic_error("Binding: parameter not bound");
    return it->second;
  }

  // Gradient of a bound parameter after backward(); nullptr if untouched.
  const Tensor<T>* grad_of(const Tensor<T>& t) const {
    auto it = vars_.find(t.ptr());
    if (it == vars_.end()) return nullptr;
    const Tensor<T>& gr = g_->grad(it->second);
    return gr.empty() ? nullptr : &gr;
  }

 private:
  Graph<T>* g_;
  std::unordered_map<const T*, Var<T>> vars_;
};

// ---- layers ----------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int stride = 1, pad = 1;

  void init(Rng& rng, int cin, int cout, int k, int stride_, int pad_, bool zero_init = false) {
    stride = stride_;
    pad = pad_;
    double std = zero_init ? 0.0 : std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    w = rng.template randn<T>({cout, cin, k, k}, std);
    b = Tensor<T>({cout});
  }

  Var<T> apply(Graph<T>& g, const Binding<T>& bind, Var<T> x) const {
    return conv2d(x, bind[w], bind[b], stride, pad);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
  void visit_params(const ParamVisitor<T>& fn) { visit("conv", fn); }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;

  void init(Rng& rng, int in, int out, bool zero_init = false) {
    double std = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(in));
    w = rng.template randn<T>({out, in}, std);
    b = Tensor<T>({out});
  }

  Var<T> apply(Graph<T>& g, const Binding<T>& bind, Var<T> x) const {
    (void)g;
    return linear(x, bind[w], bind[b]);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
  void visit_params(const ParamVisitor<T>& fn) { visit("linear", fn); }
};

template <typename T>
struct EmbeddingLayer {
  Tensor<T> table;

  void init(Rng& rng, int count, int dim) { table = rng.template randn<T>({count, dim}, 0.02); }

  Var<T> apply(Graph<T>& g, const Binding<T>& bind, const std::vector<int>& ids) const {
    (void)g;
    return embedding(bind[table], ids);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) { fn(prefix + ".table", table); }
  void visit_params(const ParamVisitor<T>& fn) { visit("embedding", fn); }
};

// Residual conv block with per-block affine conditioning (scale/shift from a
// condition vector). Second conv is zero-initialized so the block starts as
// identity.
template <typename T>
struct ResBlock {
  Conv2dLayer<T> conv1, conv2;
  LinearLayer<T> film;
  int channels = 0;

  void init(Rng& rng, int c, int cond_dim) {
    channels = c;
    conv1.init(rng, c, c, 3, 1, 1);
    conv2.init(rng, c, c, 3, 1, 1, /*zero_init=*/true);
    film.init(rng, cond_dim, 2 * c);
  }

  Var<T> apply(Graph<T>& g, const Binding<T>& bind, Var<T> x, Var<T> cond) const {
    Var<T> h = conv1.apply(g, bind, silu(x));
    Var<T> ss = film.apply(g, bind, cond);
    Var<T> sc = slice_cols(ss, 0, channels);
    Var<T> sh = slice_cols(ss, channels, channels);
    h = add_bc(mul_bc(h, add_scalar(sc, T(1))), sh);
    h = conv2.apply(g, bind, silu(h));
    return add(x, h);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    conv1.visit(prefix + ".conv1", fn);
    conv2.visit(prefix + ".conv2", fn);
    film.visit(prefix + ".film", fn);
  }
  void visit_params(const ParamVisitor<T>& fn) { visit("block", fn); }
};

// Sinusoidal position/time features (no parameters, no gradient to t).
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<double>& t, int dim, double max_period = 10000.0) {
  int half = dim / 2;
  int B = static_cast<int>(t.size());
  Tensor<T> out({B, dim});
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < half; ++j) {
      double freq = std::exp(-std::log(max_period) * j / std::max(1, half - 1));
      double a = t[static_cast<size_t>(i)] * freq;
      out[static_cast<int64_t>(i) * dim + j] = static_cast<T>(std::sin(a));
      out[static_cast<int64_t>(i) * dim + half + j] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

// ---- parameter utilities ----------------------------------------------------

template <typename T, typename Model>
uint64_t param_checksum(Model& m) {
  uint64_t h = 1469598103934665603ULL;
  m.visit_params([&](const std::string&, Tensor<T>& t) {
    const auto* bytes = reinterpret_cast<const uint8_t*>(t.ptr());
    size_t n = static_cast<size_t>(t.numel()) * sizeof(T);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  });
  return h;
}

template <typename T, typename Model>
int64_t param_count(Model& m) {
  int64_t n = 0;
  m.visit_params([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

}  // namespace lplab

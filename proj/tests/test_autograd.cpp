#include "doctest.h"
#include "lplab/autograd.hpp"
#include "lplab/nn.hpp"
#include "lplab/rng.hpp"

using namespace lplab;

namespace {

// Central finite-difference check of d(fn)/d(leaf) for a scalar-valued graph.
// fn receives the graph and the bound leaf and must return a scalar Var.
template <typename BuildFn>
double max_grad_rel_error(const Tensor<double>& leaf_value, BuildFn fn, double h = 1e-6) {
  Graph<double> g;
  Var<double> leaf = g.leaf(leaf_value.clone(), true);
  Var<double> loss = fn(g, leaf);
  g.backward(loss);
  Tensor<double> analytic = g.grad(leaf).clone();

  double worst = 0.0;
  for (int64_t i = 0; i < leaf_value.numel(); ++i) {
    auto eval = [&](double delta) {
      Tensor<double> perturbed = leaf_value.clone();
      perturbed[i] += delta;
      Graph<double> g2;
      Var<double> l2 = g2.leaf(perturbed, false);
      return g2.value(fn(g2, l2)).item();
    };
    double fd = (eval(h) - eval(-h)) / (2.0 * h);
    double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Graph<float> g;
  Var<float> a = g.leaf(Tensor<float>({2}, {1.0f, -2.0f}));
  Var<float> b = g.leaf(Tensor<float>({2}, {3.0f, 4.0f}));
  CHECK(g.value(add(a, b))[0] == doctest::Approx(4.0));
  CHECK(g.value(sub(a, b))[1] == doctest::Approx(-6.0));
  CHECK(g.value(mul(a, b))[1] == doctest::Approx(-8.0));
  CHECK(g.value(div(a, b))[0] == doctest::Approx(1.0 / 3.0));
  CHECK(g.value(square(a))[1] == doctest::Approx(4.0));
  CHECK(g.value(clamp_min(a, 0.0f))[1] == doctest::Approx(0.0));
  CHECK(g.value(sum_all(b)).item() == doctest::Approx(7.0));
  CHECK(g.value(mean_all(b)).item() == doctest::Approx(3.5));
}

TEST_CASE("gradients of scalar chains match finite differences") {
  Rng rng(7);
  Tensor<double> x = rng.randn<double>({3, 5});

  CHECK(max_grad_rel_error(x, [](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(silu(v)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(x, [](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(mul(tanh_op(v), v));
        }) < 1e-5);
  CHECK(max_grad_rel_error(x, [](Graph<double>& g, Var<double> v) {
          (void)g;
          return mean_all(sqrt_op(add_scalar(square(v), 1.0)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(x, [](Graph<double>& g, Var<double> v) {
          Var<double> c = g.leaf(Tensor<double>::full({3, 5}, 0.75));
          return sum_all(div(v, add_scalar(square(c), 1.0)));
        }) < 1e-5);
}

TEST_CASE("conv2d forward equals a naive loop") {
  Rng rng(3);
  int B = 2, C = 3, H = 6, W = 5, Co = 4, k = 3, stride = 2, pad = 1;
  Tensor<float> x = rng.randn<float>({B, C, H, W});
  Tensor<float> w = rng.randn<float>({Co, C, k, k});
  Tensor<float> b = rng.randn<float>({Co});

  Graph<float> g;
  Var<float> out = conv2d(g.leaf(x), g.leaf(w), g.leaf(b), stride, pad);
  const Tensor<float>& y = g.value(out);

  int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  REQUIRE(y.shape() == std::vector<int>({B, Co, OH, OW}));
  for (int n = 0; n < B; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b[co];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<int64_t>(n) * C + c) * H + iy) * W + ix] *
                       w[((static_cast<int64_t>(co) * C + c) * k + ky) * k + kx];
              }
          CHECK(y[((static_cast<int64_t>(n) * Co + co) * OH + oy) * OW + ox] ==
                doctest::Approx(acc).epsilon(1e-4));
        }
}

TEST_CASE("conv2d gradients (input, weight, bias) match finite differences") {
  Rng rng(11);
  Tensor<double> x = rng.randn<double>({2, 2, 5, 5});
  Tensor<double> w = rng.randn<double>({3, 2, 3, 3});
  Tensor<double> b = rng.randn<double>({3});

  for (int stride : {1, 2}) {
    CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
            return sum_all(square(conv2d(v, g.leaf(w), g.leaf(b), stride, 1)));
          }) < 1e-5);
    CHECK(max_grad_rel_error(w, [&](Graph<double>& g, Var<double> v) {
            return sum_all(square(conv2d(g.leaf(x), v, g.leaf(b), stride, 1)));
          }) < 1e-5);
    CHECK(max_grad_rel_error(b, [&](Graph<double>& g, Var<double> v) {
            return sum_all(square(conv2d(g.leaf(x), g.leaf(w), v, stride, 1)));
          }) < 1e-5);
  }
}

TEST_CASE("linear and embedding gradients") {
  Rng rng(5);
  Tensor<double> x = rng.randn<double>({4, 6});
  Tensor<double> w = rng.randn<double>({3, 6});
  Tensor<double> b = rng.randn<double>({3});
  CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
          return sum_all(square(linear(v, g.leaf(w), g.leaf(b))));
        }) < 1e-5);
  CHECK(max_grad_rel_error(w, [&](Graph<double>& g, Var<double> v) {
          return sum_all(square(linear(g.leaf(x), v, g.leaf(b))));
        }) < 1e-5);

  Tensor<double> table = rng.randn<double>({5, 4});
  std::vector<int> ids = {0, 3, 3, 1};
  CHECK(max_grad_rel_error(table, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(embedding(v, ids)));
        }) < 1e-5);
}

TEST_CASE("broadcast, slice, gather, lincomb, upsample gradients") {
  Rng rng(13);
  Tensor<double> x = rng.randn<double>({2, 3, 4, 4});
  Tensor<double> s = rng.randn<double>({2, 3});
  CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
          return sum_all(square(mul_bc(v, g.leaf(s))));
        }) < 1e-5);
  CHECK(max_grad_rel_error(s, [&](Graph<double>& g, Var<double> v) {
          return sum_all(square(add_bc(g.leaf(x), v)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(s, [&](Graph<double>& g, Var<double> v) {
          return sum_all(square(mul_bc(g.leaf(x), v)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(sum_spatial(v)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(upsample_nearest2(v)));
        }) < 1e-5);

  Tensor<double> m = rng.randn<double>({4, 6});
  CHECK(max_grad_rel_error(m, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(slice_cols(v, 2, 3)));
        }) < 1e-5);
  CHECK(max_grad_rel_error(m, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(gather_rows(v, {1, 1, 3})));
        }) < 1e-5);

  Tensor<double> zt = rng.randn<double>({3, 2, 2, 2});
  Tensor<double> pred = rng.randn<double>({3, 2, 2, 2});
  CHECK(max_grad_rel_error(pred, [&](Graph<double>& g, Var<double> v) {
          (void)g;
          return sum_all(square(lincomb_rows(zt, v, {1.2, 0.5, -0.3}, {0.4, -1.1, 2.0})));
        }) < 1e-5);
}

TEST_CASE("resblock and full denoiser-style chain gradcheck") {
  Rng rng(17);
  ResBlock<double> block;
  block.init(rng, 3, 8);
  Tensor<double> x = rng.randn<double>({2, 3, 4, 4});
  Tensor<double> cond = rng.randn<double>({2, 8});
  // Re-randomize the zero-init conv so its gradient path is exercised.
  block.conv2.w = rng.randn<double>({3, 3, 3, 3}, 0.2);

  CHECK(max_grad_rel_error(x, [&](Graph<double>& g, Var<double> v) {
          Binding<double> bind(g, block, false);
          return sum_all(square(block.apply(g, bind, v, g.leaf(cond))));
        }) < 1e-5);
  CHECK(max_grad_rel_error(cond, [&](Graph<double>& g, Var<double> v) {
          Binding<double> bind(g, block, false);
          return sum_all(square(block.apply(g, bind, g.leaf(x), v)));
        }) < 1e-5);
}

TEST_CASE("parameter leaves accumulate a single gradient per parameter") {
  Rng rng(23);
  LinearLayer<double> layer;
  layer.init(rng, 3, 2);
  Tensor<double> x = rng.randn<double>({4, 3});
  Graph<double> g;
  Binding<double> bind(g, layer, true);
  Var<double> xin = g.leaf(x);
  // Same layer applied twice: gradients must sum on one leaf.
  Var<double> y = add(layer.apply(g, bind, xin), layer.apply(g, bind, xin));
  g.backward(sum_all(square(y)));
  const Tensor<double>* gw = bind.grad_of(layer.w);
  REQUIRE(gw != nullptr);

  // Finite differences over the weight entries.
  double h = 1e-6;
  for (int64_t i = 0; i < layer.w.numel(); ++i) {
    auto eval = [&](double delta) {
      layer.w[i] += delta;
      Graph<double> g2;
      Binding<double> b2(g2, layer, false);
      Var<double> y2 = add(layer.apply(g2, b2, g2.leaf(x)), layer.apply(g2, b2, g2.leaf(x)));
      double out = g2.value(sum_all(square(y2))).item();
      layer.w[i] -= delta;
      return out;
    };
    double fd = (eval(h) - eval(-h)) / (2 * h);
    CHECK((*gw)[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

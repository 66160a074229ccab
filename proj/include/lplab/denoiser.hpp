#pragma once

#include <array>
#include <vector>

#include "lplab/nn.hpp"
#include "lplab/rng.hpp"

namespace lplab {

// Small U-shaped conditional denoiser over latents [B,4,r,r]. Two stride-2
// stages, one bottleneck block, additive skips, sinusoidal time embedding and
// class embedding (last index = null class) injected through per-block affine
// modulation. The head is zero-initialized.
template <typename T>
struct Denoiser {
  static constexpr int kCondDim = 128;

  std::array<int, 3> channels = {40, 80, 160};
  int num_classes = 4;  // labels 0..K-1; embedding row K is the null class

  Conv2dLayer<T> stem, down1, down2, up1, up2, head;
  ResBlock<T> rb_in, rb_mid_down, rb_bottleneck, rb_mid_up, rb_out;
  LinearLayer<T> tmlp1, tmlp2;
  EmbeddingLayer<T> class_emb;

  void init(Rng& rng, int num_classes_, std::array<int, 3> widths = {40, 80, 160}) {
    num_classes = num_classes_;
    channels = widths;
    int c0 = channels[0], c1 = channels[1], c2 = channels[2];
    stem.init(rng, 4, c0, 3, 1, 1);
    rb_in.init(rng, c0, kCondDim);
    down1.init(rng, c0, c1, 3, 2, 1);
    rb_mid_down.init(rng, c1, kCondDim);
    down2.init(rng, c1, c2, 3, 2, 1);
    rb_bottleneck.init(rng, c2, kCondDim);
    up1.init(rng, c2, c1, 3, 1, 1);
    rb_mid_up.init(rng, c1, kCondDim);
    up2.init(rng, c1, c0, 3, 1, 1);
    rb_out.init(rng, c0, kCondDim);
    head.init(rng, c0, 4, 3, 1, 1, /*zero_init=*/true);
    tmlp1.init(rng, kCondDim, kCondDim);
    tmlp2.init(rng, kCondDim, kCondDim);
    class_emb.init(rng, num_classes + 1, kCondDim);
  }

  void visit_params(const ParamVisitor<T>& fn) {
    stem.visit("stem", fn);
    rb_in.visit("rb_in", fn);
    down1.visit("down1", fn);
    rb_mid_down.visit("rb_mid_down", fn);
    down2.visit("down2", fn);
    rb_bottleneck.visit("rb_bottleneck", fn);
    up1.visit("up1", fn);
    rb_mid_up.visit("rb_mid_up", fn);
    up2.visit("up2", fn);
    rb_out.visit("rb_out", fn);
    head.visit("head", fn);
    tmlp1.visit("time_mlp1", fn);
    tmlp2.visit("time_mlp2", fn);
    class_emb.visit("class_emb", fn);
  }

  // t_emb_value: raw discrete timestep for DDPM, 1000*t for flow time.
  Var<T> forward(Graph<T>& g, const Binding<T>& bind, Var<T> z,
                 const std::vector<double>& t_emb_value, const std::vector<int>& labels) const {
    for (int l : labels)
      if (l < 0 || l > num_classes) throw std::out_of_range("denoiser: label outside [0,K]");
    Var<T> temb = g.constant(sinusoidal_embedding<T>(t_emb_value, kCondDim));
    Var<T> cond = tmlp2.apply(g, bind, silu(tmlp1.apply(g, bind, temb)));
    cond = add(cond, class_emb.apply(g, bind, labels));
    cond = silu(cond);

    Var<T> x = stem.apply(g, bind, z);
    Var<T> a = rb_in.apply(g, bind, x, cond);
    Var<T> b = rb_mid_down.apply(g, bind, down1.apply(g, bind, silu(a)), cond);
    Var<T> c = rb_bottleneck.apply(g, bind, down2.apply(g, bind, silu(b)), cond);
    Var<T> u1 = add(up1.apply(g, bind, upsample_nearest2(silu(c))), b);
    Var<T> e = rb_mid_up.apply(g, bind, u1, cond);
    Var<T> u2 = add(up2.apply(g, bind, upsample_nearest2(silu(e))), a);
    Var<T> f = rb_out.apply(g, bind, u2, cond);
    return head.apply(g, bind, silu(f));
  }

  // Inference convenience: no gradient bookkeeping.
  Tensor<T> predict(const Tensor<T>& z, const std::vector<double>& t_emb_value,
                    const std::vector<int>& labels) const {
    Graph<T> g;
    Binding<T> bind(g, *const_cast<Denoiser*>(this), false);
    Var<T> out = forward(g, bind, g.constant(z), t_emb_value, labels);
    return g.value(out);
  }
};

}  // namespace lplab

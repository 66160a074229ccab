#pragma once

#include <array>
#include <string>
#include <vector>

#include "lplab/nn.hpp"
#include "lplab/rng.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

// Decoder tap activations phi_1..phi_L in decoder order, shallow to deep.
template <typename T>
struct FeaturePyramid {
  std::vector<Tensor<T>> features;  // each [B, C_l, r_l, r_l]
  std::vector<int> resolutions;
  std::vector<int> channels;

  int layer_count() const { return static_cast<int>(features.size()); }
};

// Small convolutional autoencoder, downsampling factor 4, latent channels 4.
// Encoder widths [32, 64]; decoder tap blocks [64, 64, 32, 32] at relative
// resolutions [r, 2r, 4r, 4r]. Taps are captured after each block's
// nonlinearity; the output layer is tanh so images stay in [-1, 1].
template <typename T>
struct Autoencoder {
  static constexpr int kDownFactor = 4;
  static constexpr int kLatentChannels = 4;
  static constexpr int kTapCount = 4;

  Conv2dLayer<T> enc1, enc2, enc_head;
  Conv2dLayer<T> dec1, dec2, dec3, dec4, dec_head;
  T latent_scale = T(1);
  bool frozen = false;

  void init(Rng& rng) {
    enc1.init(rng, 3, 32, 3, 2, 1);
    enc2.init(rng, 32, 64, 3, 2, 1);
    enc_head.init(rng, 64, kLatentChannels, 3, 1, 1);
    dec1.init(rng, kLatentChannels, 64, 3, 1, 1);
    dec2.init(rng, 64, 64, 3, 1, 1);
    dec3.init(rng, 64, 32, 3, 1, 1);
    dec4.init(rng, 32, 32, 3, 1, 1);
    dec_head.init(rng, 32, 3, 3, 1, 1);
  }

  void visit_params(const ParamVisitor<T>& fn) {
    enc1.visit("encoder.conv1", fn);
    enc2.visit("encoder.conv2", fn);
    enc_head.visit("encoder.head", fn);
    dec1.visit("decoder.block1", fn);
    dec2.visit("decoder.block2", fn);
    dec3.visit("decoder.block3", fn);
    dec4.visit("decoder.block4", fn);
    dec_head.visit("decoder.head", fn);
  }

  template <typename U>
  Autoencoder<U> cast() const {
    Autoencoder<U> out;
    auto cast_conv = [](const Conv2dLayer<T>& c, Conv2dLayer<U>& o) {
      o.w = c.w.template cast<U>();
      o.b = c.b.template cast<U>();
      o.stride = c.stride;
      o.pad = c.pad;
    };
    cast_conv(enc1, out.enc1);
    cast_conv(enc2, out.enc2);
    cast_conv(enc_head, out.enc_head);
    cast_conv(dec1, out.dec1);
    cast_conv(dec2, out.dec2);
    cast_conv(dec3, out.dec3);
    cast_conv(dec4, out.dec4);
    cast_conv(dec_head, out.dec_head);
    out.latent_scale = static_cast<U>(latent_scale);
    out.frozen = frozen;
    return out;
  }

  // ---- graph forward pieces -------------------------------------------------

  Var<T> encode_g(Graph<T>& g, const Binding<T>& bind, Var<T> image, bool apply_scale = true) const {
    Var<T> h = silu(enc1.apply(g, bind, image));
    h = silu(enc2.apply(g, bind, h));
    h = enc_head.apply(g, bind, h);
    if (apply_scale && latent_scale != T(1)) h = scale(h, latent_scale);
    return h;
  }

  struct TapsG {
    std::array<Var<T>, kTapCount> taps;
    Var<T> image;
  };

  TapsG decode_taps_g(Graph<T>& g, const Binding<T>& bind, Var<T> latent,
                      bool apply_scale = true) const {
    Var<T> z = latent;
    if (apply_scale && latent_scale != T(1)) z = scale(z, T(1) / latent_scale);
    TapsG out;
    Var<T> h = silu(dec1.apply(g, bind, z));
    out.taps[0] = h;
    h = silu(dec2.apply(g, bind, upsample_nearest2(h)));
    out.taps[1] = h;
    h = silu(dec3.apply(g, bind, upsample_nearest2(h)));
    out.taps[2] = h;
    h = silu(dec4.apply(g, bind, h));
    out.taps[3] = h;
    out.image = tanh_op(dec_head.apply(g, bind, h));
    return out;
  }

  // ---- plain (no-grad) helpers ----------------------------------------------

  Tensor<T> encode(const Tensor<T>& images) const {
    check_image_shape(images);
    Graph<T> g;
    Binding<T> bind(g, *const_cast<Autoencoder*>(this), false);
    Var<T> z = encode_g(g, bind, g.constant(images));
    return g.value(z);
  }

  Tensor<T> decode(const Tensor<T>& latents) const {
    check_latent_shape(latents);
    Graph<T> g;
    Binding<T> bind(g, *const_cast<Autoencoder*>(this), false);
    auto out = decode_taps_g(g, bind, g.constant(latents));
    return g.value(out.image);
  }

  struct DecodeWithTaps {
    FeaturePyramid<T> pyramid;
    Tensor<T> image;
  };

  DecodeWithTaps decode_with_taps(const Tensor<T>& latents) const {
    check_latent_shape(latents);
    Graph<T> g;
    Binding<T> bind(g, *const_cast<Autoencoder*>(this), false);
    auto out = decode_taps_g(g, bind, g.constant(latents));
    DecodeWithTaps res;
    for (int l = 0; l < kTapCount; ++l) {
      Tensor<T> f = g.value(out.taps[static_cast<size_t>(l)]);
      res.pyramid.features.push_back(f);
      res.pyramid.resolutions.push_back(f.dim(2));
      res.pyramid.channels.push_back(f.dim(1));
    }
    res.image = g.value(out.image);
    return res;
  }

  static void check_image_shape(const Tensor<T>& images) {
    if (images.ndim() != 4 || images.dim(1) != 3)
      throw std::invalid_argument("autoencoder: expected images [B,3,H,W], got " + shape_str(images));
    if (images.dim(2) % kDownFactor != 0 || images.dim(3) % kDownFactor != 0)
      throw std::invalid_argument("autoencoder: resolution must be divisible by 4");
  }

  static void check_latent_shape(const Tensor<T>& latents) {
    if (latents.ndim() != 4 || latents.dim(1) != kLatentChannels)
      throw std::invalid_argument("autoencoder: expected latents [B,4,r,r], got " + shape_str(latents));
  }
};

struct AeTrainConfig {
  int steps = 10000;
  int batch = 8;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double holdout_fraction = 0.1;
  double latent_l2 = 1e-6;
  uint64_t seed = 0;
  int log_every = 500;
  bool verbose = false;
};

struct AeTrainReport {
  double train_mse = 0.0;
  double holdout_mse = 0.0;
  double latent_std_before_scale = 0.0;
  int steps_run = 0;
};

// Trains on `images` [N,3,H,W] (values in [-1,1]), sets latent_scale so the
// corpus latent standard deviation is 1, then freezes the model.
AeTrainReport train_autoencoder(Autoencoder<float>& model, const Tensor<float>& images,
                                const AeTrainConfig& cfg);

// Batched encode of a whole corpus.
Tensor<float> encode_corpus(const Autoencoder<float>& ae, const Tensor<float>& images,
                            int batch = 64);

}  // namespace lplab

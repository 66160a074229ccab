#include "lplab/autoencoder.hpp"

#include <cmath>
#include <cstdio>

#include "lplab/optim.hpp"
#include "lplab/toydata.hpp"

namespace lplab {

namespace {

double mse_over(const Autoencoder<float>& ae, const Tensor<float>& images,
                const std::vector<int>& indices, int batch) {
  int H = images.dim(2), W = images.dim(3);
  int64_t per = static_cast<int64_t>(3) * H * W;
  double acc = 0.0;
  int64_t count = 0;
  for (size_t off = 0; off < indices.size(); off += static_cast<size_t>(batch)) {
    size_t n = std::min<size_t>(static_cast<size_t>(batch), indices.size() - off);
    Tensor<float> x({static_cast<int>(n), 3, H, W});
    for (size_t i = 0; i < n; ++i)
      std::copy_n(images.ptr() + indices[off + i] * per, per, x.ptr() + static_cast<int64_t>(i) * per);
    Tensor<float> recon = ae.decode(ae.encode(x));
    for (int64_t i = 0; i < x.numel(); ++i) {
      double d = static_cast<double>(recon[i]) - static_cast<double>(x[i]);
      acc += d * d;
    }
    count += x.numel();
  }
  return acc / static_cast<double>(count);
}

}  // namespace

AeTrainReport train_autoencoder(Autoencoder<float>& model, const Tensor<float>& images,
                                const AeTrainConfig& cfg) {
  Autoencoder<float>::check_image_shape(images);
  int N = images.dim(0);
  if (N < 4) throw ConfigError("train_autoencoder: need at least 4 images");
  int H = images.dim(2), W = images.dim(3);
  int64_t per = static_cast<int64_t>(3) * H * W;

  Rng root(cfg.seed);
  Rng init_rng = root.child("ae.init");
  model.init(init_rng);
  model.latent_scale = 1.0f;
  model.frozen = false;

  // Deterministic shuffle, last fraction held out.
  std::vector<int> order(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng = root.child("ae.split");
  for (int i = N - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
  int n_holdout = std::max(1, static_cast<int>(std::floor(N * cfg.holdout_fraction)));
  int n_train = N - n_holdout;
  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> holdout_idx(order.begin() + n_train, order.end());

  AdamW<float> opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  Rng batch_rng = root.child("ae.batches");

  for (int step = 1; step <= cfg.steps; ++step) {
    int B = std::min(cfg.batch, n_train);
    Tensor<float> x({B, 3, H, W});
    for (int i = 0; i < B; ++i) {
      int idx = train_idx[static_cast<size_t>(batch_rng.uniform_int(0, n_train - 1))];
      std::copy_n(images.ptr() + static_cast<int64_t>(idx) * per, per,
                  x.ptr() + static_cast<int64_t>(i) * per);
    }
    Graph<float> g;
    Binding<float> bind(g, model, true);
    Var<float> xin = g.constant(x);
    Var<float> z = model.encode_g(g, bind, xin, /*apply_scale=*/false);
    auto dec = model.decode_taps_g(g, bind, z, /*apply_scale=*/false);
    Var<float> loss = add(mse(dec.image, xin),
                          scale(mean_all(square(z)), static_cast<float>(cfg.latent_l2)));
    double lv = static_cast<double>(g.value(loss).item());
    if (!std::isfinite(lv))
      throw NumericalError("train_autoencoder: non-finite loss at step " + std::to_string(step));
    g.backward(loss);
    opt.step(model, bind);
    if (cfg.verbose && (step % cfg.log_every == 0 || step == 1))
      std::fprintf(stderr, "[ae] step %d loss %.6f\n", step, lv);
  }

  // Latent scale: unit corpus standard deviation.
  Tensor<float> latents = encode_corpus(model, images);
  double mean = 0.0;
  for (int64_t i = 0; i < latents.numel(); ++i) mean += static_cast<double>(latents[i]);
  mean /= static_cast<double>(latents.numel());
  double var = 0.0;
  for (int64_t i = 0; i < latents.numel(); ++i) {
    double d = static_cast<double>(latents[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(latents.numel());
  double sd = std::sqrt(var);
  if (!(sd > 0.0) || !std::isfinite(sd))
    throw NumericalError("train_autoencoder: degenerate latent distribution");
  model.latent_scale = static_cast<float>(1.0 / sd);
  model.frozen = true;

  AeTrainReport report;
  report.latent_std_before_scale = sd;
  report.steps_run = cfg.steps;
  report.train_mse = mse_over(model, images, train_idx, std::max(cfg.batch, 16));
  report.holdout_mse = mse_over(model, images, holdout_idx, std::max(cfg.batch, 16));
  return report;
}

Tensor<float> encode_corpus(const Autoencoder<float>& ae, const Tensor<float>& images, int batch) {
  int N = images.dim(0), H = images.dim(2), W = images.dim(3);
  int r = H / Autoencoder<float>::kDownFactor;
  int64_t per = static_cast<int64_t>(3) * H * W;
  int64_t zper = static_cast<int64_t>(Autoencoder<float>::kLatentChannels) * r * r;
  Tensor<float> out({N, Autoencoder<float>::kLatentChannels, r, W / Autoencoder<float>::kDownFactor});
  for (int off = 0; off < N; off += batch) {
    int n = std::min(batch, N - off);
    Tensor<float> x({n, 3, H, W});
    std::copy_n(images.ptr() + static_cast<int64_t>(off) * per, static_cast<int64_t>(n) * per, x.ptr());
    Tensor<float> z = ae.encode(x);
    std::copy_n(z.ptr(), static_cast<int64_t>(n) * zper, out.ptr() + static_cast<int64_t>(off) * zper);
  }
  return out;
}

}  // namespace lplab

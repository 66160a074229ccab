#include "lplab/samplers.hpp"

#include <cmath>

namespace lplab {

Tensor<float> guided_prediction(const Denoiser<float>& model, const Tensor<float>& z,
                                const std::vector<double>& t_emb, const std::vector<int>& labels,
                                double guidance) {
  std::vector<int> null_labels(labels.size(), model.num_classes);
  if (guidance == 1.0) return model.predict(z, t_emb, labels);
  if (guidance == 0.0) return model.predict(z, t_emb, null_labels);
  Tensor<float> cond = model.predict(z, t_emb, labels);
  Tensor<float> null = model.predict(z, t_emb, null_labels);
  Tensor<float> out(cond.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<float>(static_cast<double>(null[i]) +
                                guidance * (static_cast<double>(cond[i]) - static_cast<double>(null[i])));
  return out;
}

DenoiseFn make_guided_fn(const Denoiser<float>& model, const std::vector<int>& labels,
                         double guidance) {
  return [&model, labels, guidance](const Tensor<float>& z, const std::vector<double>& t_emb) {
    return guided_prediction(model, z, t_emb, labels, guidance);
  };
}

Tensor<float> ddim_sample(const DenoiseFn& fn, const NoiseSchedule& schedule, PredictionKind kind,
                          int count, int latent_res, int steps, uint64_t seed) {
  if (!schedule.discrete()) throw std::invalid_argument("ddim_sample: discrete DDPM schedule required");
  if (steps > schedule.T) throw std::invalid_argument("ddim_sample: steps exceed schedule length");
  if (steps < 1) throw std::invalid_argument("ddim_sample: steps must be >= 1");

  // Evenly spaced subset of [1, T] including both ends.
  std::vector<int> ts(static_cast<size_t>(steps));
  if (steps == 1) {
    ts[0] = schedule.T;
  } else {
    for (int i = 0; i < steps; ++i)
      ts[static_cast<size_t>(i)] = static_cast<int>(std::lround(
          1.0 + (schedule.T - 1.0) * static_cast<double>(i) / (steps - 1.0)));
  }

  Rng rng = Rng(seed).child("ddim.noise");
  Tensor<float> z = rng.randn<float>({count, 4, latent_res, latent_res});

  for (int i = steps - 1; i >= 1; --i) {
    double t_cur = ts[static_cast<size_t>(i)], t_next = ts[static_cast<size_t>(i - 1)];
    std::vector<double> tb(static_cast<size_t>(count), t_cur);
    Tensor<float> pred = fn(z, tb);
    Tensor<float> x0 = recover_x0(kind, z, pred, tb, schedule);
    double a_cur = schedule.alpha_at(t_cur), s_cur = schedule.sigma_at(t_cur);
    double a_next = schedule.alpha_at(t_next), s_next = schedule.sigma_at(t_next);
    for (int64_t j = 0; j < z.numel(); ++j) {
      double eps_hat = (static_cast<double>(z[j]) - a_cur * static_cast<double>(x0[j])) / s_cur;
      z[j] = static_cast<float>(a_next * static_cast<double>(x0[j]) + s_next * eps_hat);
    }
  }
  std::vector<double> tb(static_cast<size_t>(count), static_cast<double>(ts[0]));
  Tensor<float> pred = fn(z, tb);
  return recover_x0(kind, z, pred, tb, schedule);
}

Tensor<float> euler_sample(const DenoiseFn& fn, int count, int latent_res, int steps,
                           uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
  Rng rng = Rng(seed).child("euler.noise");
  Tensor<float> z = rng.randn<float>({count, 4, latent_res, latent_res});
  double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    double t_cur = 1.0 - h * i;
    std::vector<double> tb(static_cast<size_t>(count), 1000.0 * t_cur);
    Tensor<float> v = fn(z, tb);
    for (int64_t j = 0; j < z.numel(); ++j)
      z[j] = static_cast<float>(static_cast<double>(z[j]) - h * static_cast<double>(v[j]));
  }
  return z;
}

Tensor<float> sample_latents(const Denoiser<float>& model, const NoiseSchedule& schedule,
                             PredictionKind kind, const SampleRequest& req, int latent_res) {
  req.validate();
  std::vector<int> labels = req.labels;
  if (labels.empty()) labels.assign(static_cast<size_t>(req.count), 0);
  if (static_cast<int>(labels.size()) != req.count)
    throw std::invalid_argument("sample request: label count mismatch");
  DenoiseFn fn = make_guided_fn(model, labels, req.guidance);
  if (kind == PredictionKind::flow)
    return euler_sample(fn, req.count, latent_res, req.steps, req.seed);
  return ddim_sample(fn, schedule, kind, req.count, latent_res, req.steps, req.seed);
}

}  // namespace lplab

#pragma once

#include <functional>
#include <vector>

#include "lplab/denoiser.hpp"
#include "lplab/diffusion.hpp"
#include "lplab/rng.hpp"

namespace lplab {

// Batched denoiser call: z [B,4,r,r] and per-sample embedding-time values.
using DenoiseFn = std::function<Tensor<float>(const Tensor<float>&, const std::vector<double>&)>;

// Classifier-free guidance: pred_null + guidance * (pred_cond - pred_null).
// guidance == 1 returns the conditional branch without evaluating the null
// branch; guidance == 0 evaluates only the null branch.
Tensor<float> guided_prediction(const Denoiser<float>& model, const Tensor<float>& z,
                                const std::vector<double>& t_emb, const std::vector<int>& labels,
                                double guidance);

DenoiseFn make_guided_fn(const Denoiser<float>& model, const std::vector<int>& labels,
                         double guidance);

struct SampleRequest {
  int count = 16;
  std::vector<int> labels;  // size count (or empty for all zeros)
  double guidance = 1.5;
  int steps = 50;
  uint64_t seed = 0;
  bool use_ema = true;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("sample request: steps must be >= 1");
    if (guidance < 0.0) throw std::invalid_argument("sample request: guidance must be >= 0");
  }
};

// Deterministic DDIM (eta = 0) over an evenly spaced timestep subset that
// includes both endpoints. Returns clean latents [count,4,r,r].
Tensor<float> ddim_sample(const DenoiseFn& fn, const NoiseSchedule& schedule, PredictionKind kind,
                          int count, int latent_res, int steps, uint64_t seed);

// Euler ODE integration of the velocity field from t=1 down to t=0.
Tensor<float> euler_sample(const DenoiseFn& fn, int count, int latent_res, int steps,
                           uint64_t seed);

// Convenience: picks the sampler from the schedule kind.
Tensor<float> sample_latents(const Denoiser<float>& model, const NoiseSchedule& schedule,
                             PredictionKind kind, const SampleRequest& req, int latent_res);

}  // namespace lplab

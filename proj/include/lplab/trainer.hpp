#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>

#include "lplab/autoencoder.hpp"
#include "lplab/denoiser.hpp"
#include "lplab/diffusion.hpp"
#include "lplab/lpl.hpp"
#include "lplab/rng.hpp"
#include "lplab/toydata.hpp"

namespace lplab {

struct TrainerConfig {
  int phase1_steps = 20000;
  int phase2_steps = 10000;
  int batch = 64;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double gamma_ema = -1.0;  // negative = auto (0.99975 with LPL, 0.9999 without)
  double p_drop = 0.1;
  int ckpt_every = 1000;
  std::array<int, 3> channels = {40, 80, 160};
  bool mode_sampling = false;  // logit-normal flow-time sampling, off by default
  bool reweight_enabled = false;
  double reweight_variance_ratio = 0.1;

  double resolved_gamma(bool lpl_enabled) const {
    if (gamma_ema >= 0.0) return gamma_ema;
    return lpl_enabled ? 0.99975 : 0.9999;
  }
};

struct GeneratorTrainSetup {
  PredictionKind kind = PredictionKind::eps;
  NoiseSchedule schedule;
  LplConfig lpl;
  TrainerConfig trainer;
  int resolution = 64;  // image resolution, used to scale the LPL threshold
  uint64_t seed = 0;
};

struct MetricsRow {
  int step = 0;
  int phase = 1;
  double loss_diff = 0.0, loss_lpl = 0.0, loss_total = 0.0, gated_fraction = 0.0;
  std::array<double, 4> per_layer_lpl = {0, 0, 0, 0};
  double grad_norm = 0.0, gamma_ema = 0.0;
};

struct TrainResult {
  Denoiser<float> model;
  Denoiser<float> ema_model;
  int steps_run = 0;
};

// Uniform timestep draw: integers in [1,T] for discrete schedules, open (0,1)
// for flow time. mode_sampling switches flow time to logit-normal(0,1).
std::vector<double> sample_timestep(const NoiseSchedule& schedule, Rng& rng, int batch,
                                    bool mode_sampling = false);

// Replaces each label by `null_index` with probability p_drop.
std::vector<int> cfg_dropout(const std::vector<int>& labels, double p_drop, int null_index,
                             Rng& rng);

// Two-phase training: phase 1 runs the diffusion loss alone, phase 2 adds the
// perceptual term when enabled. Writes metrics.jsonl and periodic checkpoints
// into out_dir (pass "" to skip files).
TrainResult train_generator(const GeneratorTrainSetup& setup, const ImageSet& dataset,
                            const Autoencoder<float>& ae, const std::string& out_dir,
                            const std::function<void(const MetricsRow&)>& on_row = nullptr);

std::string metrics_row_json(const MetricsRow& row);

}  // namespace lplab

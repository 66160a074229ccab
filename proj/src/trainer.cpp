#include "lplab/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lplab/checkpoint.hpp"
#include "lplab/optim.hpp"

namespace fs = std::filesystem;

namespace lplab {

std::vector<double> sample_timestep(const NoiseSchedule& schedule, Rng& rng, int batch,
                                    bool mode_sampling) {
  std::vector<double> t(static_cast<size_t>(batch));
  if (schedule.discrete()) {
    for (auto& v : t) v = static_cast<double>(rng.uniform_int(1, schedule.T));
  } else if (mode_sampling) {
    // Logit-normal(0,1) approximation of heavy-tailed mode sampling.
    for (auto& v : t) v = 1.0 / (1.0 + std::exp(-rng.gaussian()));
  } else {
    for (auto& v : t) v = rng.uniform_open();
  }
  return t;
}

std::vector<int> cfg_dropout(const std::vector<int>& labels, double p_drop, int null_index,
                             Rng& rng) {
  if (p_drop < 0.0 || p_drop >= 1.0)
    throw std::invalid_argument("cfg_dropout: p_drop must lie in [0,1)");
  std::vector<int> out = labels;
  for (auto& l : out)
    if (rng.uniform() < p_drop) l = null_index;
  return out;
}

std::string metrics_row_json(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["phase"] = row.phase;
  j["loss_diff"] = row.loss_diff;
  j["loss_lpl"] = row.loss_lpl;
  j["loss_total"] = row.loss_total;
  j["gated_fraction"] = row.gated_fraction;
  j["per_layer_lpl"] = row.per_layer_lpl;
  j["grad_norm"] = row.grad_norm;
  j["gamma_ema"] = row.gamma_ema;
  return j.dump();
}

namespace {

void save_train_checkpoint(const std::string& path, Denoiser<float>& model,
                           Denoiser<float>& ema_model, int step) {
  std::vector<TensorEntry> entries = model_entries(model, "model.");
  auto ema = model_entries(ema_model, "ema.");
  entries.insert(entries.end(), ema.begin(), ema.end());
  entries.emplace_back("state.step", Tensor<float>::scalar(static_cast<float>(step)));
  save_checkpoint(path, entries);
}

}  // namespace

TrainResult train_generator(const GeneratorTrainSetup& setup, const ImageSet& dataset,
                            const Autoencoder<float>& ae, const std::string& out_dir,
                            const std::function<void(const MetricsRow&)>& on_row) {
  if (!ae.frozen) throw ConfigError("train_generator: autoencoder must be frozen");
  setup.lpl.validate();
  if (setup.kind == PredictionKind::flow && setup.schedule.discrete())
    throw ConfigError("train_generator: flow prediction needs the flow schedule");
  if (setup.kind != PredictionKind::flow && !setup.schedule.discrete())
    throw ConfigError("train_generator: eps/v prediction needs a discrete schedule");
  if (setup.kind == PredictionKind::eps && setup.schedule.zero_terminal)
    throw ConfigError("train_generator: zero-terminal schedule breaks epsilon recovery at t=T");
  if (dataset.count() < 1) throw ConfigError("train_generator: empty dataset");

  const TrainerConfig& tc = setup.trainer;
  const double gamma = tc.resolved_gamma(setup.lpl.enabled);
  const double tau_eff =
      scale_threshold(setup.lpl.tau_sigma, setup.lpl.base_resolution, setup.resolution);

  uint64_t ae_checksum_before = param_checksum<float>(const_cast<Autoencoder<float>&>(ae));

  // Latent cache: the encoder is frozen, so corpus latents are fixed.
  Tensor<float> latents = encode_corpus(ae, dataset.images);
  const int N = latents.dim(0);
  const int r = latents.dim(2);
  const int64_t zper = static_cast<int64_t>(4) * r * r;
  const int K = *std::max_element(dataset.labels.begin(), dataset.labels.end()) + 1;

  Rng root(setup.seed);
  Rng init_rng = root.child("gen.init");
  Rng batch_rng = root.child("gen.batches");
  Rng noise_rng = root.child("gen.noise");
  Rng t_rng = root.child("gen.timesteps");
  Rng drop_rng = root.child("gen.cfg_dropout");

  TrainResult result;
  result.model.init(init_rng, K, tc.channels);
  result.ema_model = result.model;
  result.ema_model.visit_params([](const std::string&, Tensor<float>& t) { t = t.clone(); });
  std::vector<Tensor<float>*> model_params, ema_params;
  result.model.visit_params([&](const std::string&, Tensor<float>& t) { model_params.push_back(&t); });
  result.ema_model.visit_params([&](const std::string&, Tensor<float>& t) { ema_params.push_back(&t); });

  AdamW<float> opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;

  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/checkpoints");
    metrics.open(out_dir + "/metrics.jsonl");
  }

  const int total_steps = tc.phase1_steps + tc.phase2_steps;
  const int B = std::min(tc.batch, N);
  for (int step = 1; step <= total_steps; ++step) {
    const int phase = step <= tc.phase1_steps ? 1 : 2;

    std::vector<int> idx(static_cast<size_t>(B));
    std::vector<int> labels(static_cast<size_t>(B));
    Tensor<float> z0({B, 4, r, r});
    for (int i = 0; i < B; ++i) {
      idx[static_cast<size_t>(i)] = static_cast<int>(batch_rng.uniform_int(0, N - 1));
      labels[static_cast<size_t>(i)] = dataset.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      std::copy_n(latents.ptr() + static_cast<int64_t>(idx[static_cast<size_t>(i)]) * zper, zper,
                  z0.ptr() + static_cast<int64_t>(i) * zper);
    }
    std::vector<int> cond = cfg_dropout(labels, tc.p_drop, K, drop_rng);
    Tensor<float> eps = noise_rng.randn<float>({B, 4, r, r});
    std::vector<double> t = sample_timestep(setup.schedule, t_rng, B, tc.mode_sampling);
    Tensor<float> z_t = add_noise(z0, eps, t, setup.schedule);
    Tensor<float> target = training_target(setup.kind, z0, eps, t, setup.schedule);

    std::vector<double> t_emb(t);
    if (!setup.schedule.discrete())
      for (auto& v : t_emb) v *= 1000.0;

    std::vector<bool> gates(static_cast<size_t>(B));
    int gated_count = 0;
    for (int i = 0; i < B; ++i) {
      gates[static_cast<size_t>(i)] = gate(setup.schedule, t[static_cast<size_t>(i)], tau_eff);
      gated_count += gates[static_cast<size_t>(i)] ? 1 : 0;
    }

    Graph<float> g;
    Binding<float> bind(g, result.model, true);
    Var<float> zt_leaf = g.constant(z_t);
    Var<float> target_leaf = g.constant(target);
    Var<float> pred = result.model.forward(g, bind, zt_leaf, t_emb, cond);

    Var<float> l_diff;
    if (tc.reweight_enabled) {
      // Per-sample weights from the control-arm reweighting formula.
      Tensor<float> w({B, 4});
      double denom = static_cast<double>(4) * r * r * B;
      for (int i = 0; i < B; ++i) {
        double wi = timestep_reweighting(gates[static_cast<size_t>(i)],
                                         setup.lpl.w_lpl, tc.reweight_variance_ratio);
        for (int c = 0; c < 4; ++c) w[static_cast<int64_t>(i) * 4 + c] = static_cast<float>(wi / denom);
      }
      l_diff = sum_all(mul(sum_spatial(square(sub(pred, target_leaf))), g.constant(w)));
    } else {
      l_diff = mse(pred, target_leaf);
    }

    MetricsRow row;
    row.step = step;
    row.phase = phase;
    row.gamma_ema = gamma;
    row.gated_fraction = static_cast<double>(gated_count) / B;
    row.loss_diff = static_cast<double>(g.value(l_diff).item());

    Var<float> total = l_diff;
    if (phase == 2 && setup.lpl.enabled && gated_count > 0) {
      std::vector<int> gidx;
      std::vector<double> tg;
      for (int i = 0; i < B; ++i)
        if (gates[static_cast<size_t>(i)]) {
          gidx.push_back(i);
          tg.push_back(t[static_cast<size_t>(i)]);
        }
      Tensor<float> z0_g({gated_count, 4, r, r});
      Tensor<float> zt_g({gated_count, 4, r, r});
      for (int m = 0; m < gated_count; ++m) {
        std::copy_n(z0.ptr() + static_cast<int64_t>(gidx[static_cast<size_t>(m)]) * zper, zper,
                    z0_g.ptr() + static_cast<int64_t>(m) * zper);
        std::copy_n(z_t.ptr() + static_cast<int64_t>(gidx[static_cast<size_t>(m)]) * zper, zper,
                    zt_g.ptr() + static_cast<int64_t>(m) * zper);
      }
      RecoveryCoeffs rc = recovery_coeffs(setup.kind, tg, setup.schedule);
      Var<float> pred_g = gather_rows(pred, gidx);
      Var<float> zhat_g = lincomb_rows(zt_g, pred_g,
                                       std::vector<float>(rc.a.begin(), rc.a.end()),
                                       std::vector<float>(rc.b.begin(), rc.b.end()));
      Binding<float> ae_bind(g, const_cast<Autoencoder<float>&>(ae), false);
      auto lpl_res = build_lpl_loss(g, ae, ae_bind, zhat_g, z0_g, B, setup.lpl);
      row.loss_lpl = static_cast<double>(g.value(lpl_res.total).item());
      for (size_t l = 0; l < lpl_res.per_layer.size() && l < 4; ++l)
        row.per_layer_lpl[l] = lpl_res.per_layer[l];
      total = add(l_diff, scale(lpl_res.total, static_cast<float>(setup.lpl.w_lpl)));
    }
    row.loss_total = static_cast<double>(g.value(total).item());

    if (!std::isfinite(row.loss_total)) {
      if (metrics.is_open()) metrics.flush();
      throw NumericalError("train_generator: non-finite loss at step " + std::to_string(step) +
                           " (last periodic checkpoint retained)");
    }

    g.backward(total);
    row.grad_norm = grad_global_norm(result.model, bind);
    opt.step(result.model, bind);

    for (size_t i = 0; i < model_params.size(); ++i)
      ema_update(*ema_params[i], *model_params[i], gamma);

    if (on_row) on_row(row);
    if (metrics.is_open()) {
      metrics << metrics_row_json(row) << "\n";
      metrics.flush();
    }
    if (!out_dir.empty() && (step % tc.ckpt_every == 0 || step == total_steps)) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "/checkpoints/step_%06d.ckpt", step);
      save_train_checkpoint(out_dir + buf, result.model, result.ema_model, step);
    }
    result.steps_run = step;
  }

  if (param_checksum<float>(const_cast<Autoencoder<float>&>(ae)) != ae_checksum_before)
    throw NumericalError("train_generator: frozen autoencoder parameters changed");
  return result;
}

}  // namespace lplab

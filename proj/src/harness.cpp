#include "lplab/harness.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "lplab/checkpoint.hpp"
#include "lplab/evalsuite.hpp"
#include "lplab/probes.hpp"
#include "lplab/samplers.hpp"
#include "lplab/trainer.hpp"

namespace fs = std::filesystem;

namespace lplab {

std::string sha1_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestError("missing input file: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::string blob = "blob " + std::to_string(data.size());
  blob.push_back('\0');
  blob += data;

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, blob.data(), blob.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);

  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void ManifestWriter::add_input(const std::string& path) {
  inputs.emplace_back(path, sha1_file(path));
}

void ManifestWriter::write(double wall_seconds) const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config;
  nlohmann::ordered_json in = nlohmann::ordered_json::object();
  for (const auto& [path, hash] : inputs) in[path] = hash;
  j["inputs"] = in;
  j["artifacts"] = artifacts;
  j["timings"] = {{"wall_seconds", wall_seconds}};
  std::ofstream f(out_dir + "/manifest.json");
  f << j.dump(2) << "\n";
}

void save_autoencoder(const std::string& path, Autoencoder<float>& ae) {
  std::vector<TensorEntry> entries = model_entries(ae, "ae.");
  entries.emplace_back("ae.latent_scale", Tensor<float>::scalar(ae.latent_scale));
  save_checkpoint(path, entries);
}

Autoencoder<float> load_autoencoder(const std::string& path) {
  auto entries = load_checkpoint(path, "ae.");
  Autoencoder<float> ae;
  Rng dummy(0);
  ae.init(dummy);
  restore_model(ae, entries, "ae.");
  for (const auto& [name, value] : entries)
    if (name == "ae.latent_scale") ae.latent_scale = std::get<Tensor<float>>(value).item();
  ae.frozen = true;
  return ae;
}

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

ImageSet dataset_from(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return generate_textured_dataset(cfg.data);
  return load_image_set(data_dir);
}

Denoiser<float> load_denoiser(const std::string& ckpt_path, const RunConfig& cfg, bool use_ema) {
  Denoiser<float> model;
  Rng dummy(0);
  model.init(dummy, cfg.data.classes, cfg.trainer.channels);
  auto entries = load_checkpoint(ckpt_path, use_ema ? "ema." : "model.");
  restore_model(model, entries, use_ema ? "ema." : "model.");
  return model;
}

std::string find_final_checkpoint(const std::string& run_or_ckpt) {
  if (!fs::is_directory(run_or_ckpt)) return run_or_ckpt;
  std::string best;
  for (const auto& e : fs::directory_iterator(run_or_ckpt + "/checkpoints"))
    if (e.path().extension() == ".ckpt" && e.path().string() > best) best = e.path().string();
  if (best.empty()) throw IngestError("no checkpoints found under " + run_or_ckpt);
  return best;
}

void save_samples_dir(const std::string& dir, const Tensor<float>& images,
                      const std::vector<int>& labels, const nlohmann::ordered_json& extra) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["spec"] = {{"count", images.dim(0)}, {"resolution", images.dim(2)},
                      {"classes", 1 + *std::max_element(labels.begin(), labels.end())},
                      {"texture_freq_min", 0.0}, {"texture_freq_max", 0.0},
                      {"texture_amplitude", 0.0}, {"seed", 0}};
  manifest["labels"] = labels;
  std::vector<std::string> names;
  for (int i = 0; i < images.dim(0); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d.png", i);
    names.emplace_back(buf);
    write_png(dir + "/" + buf, images, i);
  }
  manifest["files"] = names;
  std::ofstream f(dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
  std::ofstream sm(dir + "/samples_manifest.json");
  sm << extra.dump(2) << "\n";
}

nlohmann::ordered_json eval_pair(const RunConfig& cfg, const Autoencoder<float>& ae,
                                 const ImageSet& real, const ImageSet& fake,
                                 const std::string& out) {
  FeatureSet fr = embed_for_metrics(real.images, ae, "real");
  FeatureSet ff = embed_for_metrics(fake.images, ae, "generated");
  double fd = frechet_distance(fr, ff);
  PrdcResult pr = prdc(fr, ff, cfg.eval.knn_k);
  SpectrumProfile sp_real = radial_power_spectrum(real.images);
  SpectrumProfile sp_fake = radial_power_spectrum(fake.images);
  SpectrumDifference diff = spectrum_difference(sp_fake, sp_real);

  write_spectrum_csv(out + "/spectrum_real.csv", sp_real);
  write_spectrum_csv(out + "/spectrum_generated.csv", sp_fake);
  write_heatmap_png(out + "/spectrum_difference.png", diff.grid);

  nlohmann::ordered_json report;
  report["frechet_distance"] = fd;
  report["precision"] = pr.precision;
  report["recall"] = pr.recall;
  report["density"] = pr.density;
  report["coverage"] = pr.coverage;
  report["band_errors"] = {{"low", diff.bands.low}, {"mid", diff.bands.mid}, {"high", diff.bands.high}};
  report["real_count"] = real.count();
  report["generated_count"] = fake.count();
  return report;
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg, const std::string& config_path, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  ImageSet set = generate_textured_dataset(cfg.data);
  save_image_set(set, cfg.data, out + "/dataset");
  ManifestWriter mw{out, "gen-data", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.artifacts = {"dataset"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_train_ae(const RunConfig& cfg, const std::string& config_path, const std::string& data_dir,
                 const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  ImageSet set = dataset_from(cfg, data_dir);
  Autoencoder<float> ae;
  AeTrainConfig tc = cfg.ae;
  tc.verbose = true;
  AeTrainReport report = train_autoencoder(ae, set.images, tc);
  save_autoencoder(out + "/ae.ckpt", ae);
  nlohmann::ordered_json rj;
  rj["train_mse"] = report.train_mse;
  rj["holdout_mse"] = report.holdout_mse;
  rj["latent_std_before_scale"] = report.latent_std_before_scale;
  rj["latent_scale"] = ae.latent_scale;
  rj["steps"] = report.steps_run;
  std::ofstream rf(out + "/ae_report.json");
  rf << rj.dump(2) << "\n";
  ManifestWriter mw{out, "train-ae", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  if (!data_dir.empty()) mw.add_input(data_dir + "/manifest.json");
  mw.artifacts = {"ae.ckpt", "ae_report.json"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_train_gen(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
                  const std::string& data_dir, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  ImageSet set = dataset_from(cfg, data_dir);
  Autoencoder<float> ae = load_autoencoder(ae_path);
  GeneratorTrainSetup setup = cfg.build_setup();
  train_generator(setup, set, ae, out);
  ManifestWriter mw{out, "train-gen", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.add_input(ae_path);
  if (!data_dir.empty()) mw.add_input(data_dir + "/manifest.json");
  mw.artifacts = {"metrics.jsonl", "checkpoints"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
               const std::string& ckpt_path, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  Autoencoder<float> ae = load_autoencoder(ae_path);
  std::string ckpt = find_final_checkpoint(ckpt_path);
  Denoiser<float> model = load_denoiser(ckpt, cfg, cfg.sampler.use_ema);

  SampleRequest req;
  req.count = cfg.sampler.count;
  req.steps = cfg.sampler.steps;
  req.guidance = cfg.sampler.guidance;
  req.seed = cfg.sampler.seed;
  req.use_ema = cfg.sampler.use_ema;
  req.labels.resize(static_cast<size_t>(req.count));
  for (int i = 0; i < req.count; ++i)
    req.labels[static_cast<size_t>(i)] = i % cfg.data.classes;

  int latent_res = cfg.data.resolution / Autoencoder<float>::kDownFactor;
  NoiseSchedule schedule = cfg.build_schedule();
  Tensor<float> latents = sample_latents(model, schedule, cfg.framework, req, latent_res);

  // Decode in batches.
  int N = latents.dim(0);
  Tensor<float> images({N, 3, cfg.data.resolution, cfg.data.resolution});
  int64_t iper = static_cast<int64_t>(3) * cfg.data.resolution * cfg.data.resolution;
  int64_t zper = static_cast<int64_t>(4) * latent_res * latent_res;
  for (int off = 0; off < N; off += 64) {
    int n = std::min(64, N - off);
    Tensor<float> zb({n, 4, latent_res, latent_res});
    std::copy_n(latents.ptr() + static_cast<int64_t>(off) * zper, static_cast<int64_t>(n) * zper, zb.ptr());
    Tensor<float> img = ae.decode(zb);
    std::copy_n(img.ptr(), static_cast<int64_t>(n) * iper, images.ptr() + static_cast<int64_t>(off) * iper);
  }

  nlohmann::ordered_json extra;
  extra["seed"] = req.seed;
  extra["guidance"] = req.guidance;
  extra["steps"] = req.steps;
  extra["checkpoint"] = ckpt;
  extra["checkpoint_hash"] = sha1_file(ckpt);
  extra["use_ema"] = req.use_ema;
  save_samples_dir(out + "/samples", images, req.labels, extra);
  write_png_grid(out + "/grid.png", images, 8);

  ManifestWriter mw{out, "sample", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.add_input(ae_path);
  mw.add_input(ckpt);
  mw.artifacts = {"samples", "grid.png"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
             const std::string& real_dir, const std::string& fake_dir, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  Autoencoder<float> ae = load_autoencoder(ae_path);
  ImageSet real = load_image_set(real_dir);
  ImageSet fake = load_image_set(fake_dir);
  nlohmann::ordered_json report = eval_pair(cfg, ae, real, fake, out);
  report["config"] = run_config_json(cfg);
  std::ofstream rf(out + "/eval_report.json");
  rf << report.dump(2) << "\n";
  ManifestWriter mw{out, "eval", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.add_input(ae_path);
  mw.add_input(real_dir + "/manifest.json");
  mw.add_input(fake_dir + "/manifest.json");
  mw.artifacts = {"eval_report.json", "spectrum_real.csv", "spectrum_generated.csv",
                  "spectrum_difference.png"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_spectrum(const std::string& images_dir, const std::string& ref_dir, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  ImageSet set = load_image_set(images_dir);
  SpectrumProfile sp = radial_power_spectrum(set.images);
  write_spectrum_csv(out + "/spectrum.csv", sp);
  write_heatmap_png(out + "/spectrum_log_power.png", sp.mean_log_power);
  ManifestWriter mw{out, "spectrum", nlohmann::ordered_json::object()};
  mw.add_input(images_dir + "/manifest.json");
  mw.artifacts = {"spectrum.csv", "spectrum_log_power.png"};
  if (!ref_dir.empty()) {
    ImageSet ref = load_image_set(ref_dir);
    SpectrumProfile sr = radial_power_spectrum(ref.images);
    SpectrumDifference diff = spectrum_difference(sp, sr);
    write_heatmap_png(out + "/spectrum_difference.png", diff.grid);
    nlohmann::ordered_json bj = {{"low", diff.bands.low}, {"mid", diff.bands.mid},
                                 {"high", diff.bands.high}};
    std::ofstream bf(out + "/band_errors.json");
    bf << bj.dump(2) << "\n";
    mw.add_input(ref_dir + "/manifest.json");
    mw.artifacts.push_back("spectrum_difference.png");
    mw.artifacts.push_back("band_errors.json");
  }
  mw.write(timer.seconds());
  return 0;
}

int cmd_probe(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
              const std::string& data_dir, const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  Autoencoder<float> ae = load_autoencoder(ae_path);
  ImageSet set = dataset_from(cfg, data_dir);
  int n = std::min(8, set.count());
  Tensor<float> images({n, 3, set.resolution, set.resolution});
  std::copy_n(set.images.ptr(), images.numel(), images.ptr());

  nlohmann::ordered_json report;
  std::vector<Resample> methods = {Resample::nearest, Resample::bilinear, Resample::bicubic};
  for (double s : {1.3, 2.0}) {
    for (const std::string& space : {std::string("pixel"), std::string("latent")}) {
      auto rows = interp_roundtrip_probe(ae, images, s, methods, space);
      nlohmann::ordered_json rj = nlohmann::ordered_json::array();
      for (const auto& row : rows) {
        rj.push_back({{"image", row.image_index},
                      {"method", row.method},
                      {"space", row.space},
                      {"latent_mse", row.latent_mse},
                      {"pixel_mse", row.pixel_mse}});
      }
      report["interp_s" + std::to_string(s) + "_" + space] = rj;
    }
  }

  // Perturbation probe: full-grid vs single-cell region on the first image.
  Tensor<float> first({1, 3, set.resolution, set.resolution});
  std::copy_n(set.images.ptr(), first.numel(), first.ptr());
  Tensor<float> z = ae.encode(first);
  Tensor<float> full_mask = Tensor<float>::full(z.shape(), 1.0f);
  Tensor<float> cell_mask(z.shape());
  int r = z.dim(2);
  for (int c = 0; c < 4; ++c) cell_mask[(static_cast<int64_t>(c) * r + r / 2) * r + r / 2] = 1.0f;
  PerturbationReport full_rep = perturbation_probe(ae, first, full_mask, -1.0, cfg.seed);
  PerturbationReport cell_rep = perturbation_probe(ae, first, cell_mask, -1.0, cfg.seed);
  report["perturbation"] = {{"full_mask_error_norm", full_rep.error_norm},
                            {"single_cell_error_norm", cell_rep.error_norm},
                            {"noise_variance", full_rep.noise_variance}};
  {
    Tensor<float> map({1, 3, full_rep.error_map.dim(0), full_rep.error_map.dim(1)});
    for (int64_t i = 0; i < full_rep.error_map.numel(); ++i) {
      float v = std::min(1.0f, full_rep.error_map[i] * 4.0f) * 2.0f - 1.0f;
      map[i] = v;
      map[full_rep.error_map.numel() + i] = v;
      map[2 * full_rep.error_map.numel() + i] = v;
    }
    write_png(out + "/perturbation_error_map.png", map, 0);
  }

  LinearityReport lin = decoder_linearity_probe(ae, z, 0.05, cfg.seed);
  report["decoder_linearity"] = {{"delta_norm", lin.delta_norm},
                                 {"residual_norm", lin.residual_norm},
                                 {"response_norm", lin.response_norm}};

  std::ofstream rf(out + "/probe_report.json");
  rf << report.dump(2) << "\n";
  ManifestWriter mw{out, "probe", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.add_input(ae_path);
  mw.artifacts = {"probe_report.json", "perturbation_error_map.png"};
  mw.write(timer.seconds());
  return 0;
}

int cmd_verify_theory(const std::string& out, int instances, uint64_t seed) {
  Timer timer;
  fs::create_directories(out);
  Rng rng(seed);
  int identity_passes = 0, bound_passes = 0;
  double worst_identity = 0.0;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int i = 0; i < instances; ++i) {
    int image_dim = static_cast<int>(rng.uniform_int(2, 24));
    int latent_dim = image_dim + static_cast<int>(rng.uniform_int(0, 64 - image_dim));
    LinearDecoderModel dec = make_linear_decoder(image_dim, latent_dim, rng);
    std::vector<double> mu1(static_cast<size_t>(latent_dim)), mu2(static_cast<size_t>(latent_dim));
    for (auto& v : mu1) v = rng.gaussian();
    for (auto& v : mu2) v = rng.gaussian();
    double beta = rng.uniform(0.05, 2.0), sigma2 = rng.uniform(0.05, 2.0);
    PenaltyReport rep = verify_projection_penalty(dec, mu1, mu2, beta, sigma2);
    identity_passes += rep.identity_ok ? 1 : 0;
    bound_passes += rep.bound_ok ? 1 : 0;
    worst_identity = std::max(worst_identity, rep.identity_error);
    rows.push_back({{"image_dim", image_dim},
                    {"latent_dim", latent_dim},
                    {"kl", rep.kl},
                    {"identity_error", rep.identity_error},
                    {"quadratic_term", rep.quadratic_term},
                    {"lambda_max_bound", rep.lambda_max_bound}});
  }
  nlohmann::ordered_json report;
  report["instances"] = instances;
  report["identity_passes"] = identity_passes;
  report["bound_passes"] = bound_passes;
  report["worst_identity_error"] = worst_identity;
  report["rows"] = rows;
  std::ofstream rf(out + "/theory_report.json");
  rf << report.dump(2) << "\n";
  ManifestWriter mw{out, "verify-theory", nlohmann::ordered_json::object()};
  mw.artifacts = {"theory_report.json"};
  mw.write(timer.seconds());
  return (identity_passes == instances && bound_passes == instances) ? 0 : 3;
}

int cmd_sweep(const RunConfig& cfg, const std::string& config_path, const std::string& param,
              std::vector<double> values, const std::string& ae_path, const std::string& data_dir,
              const std::string& out) {
  Timer timer;
  fs::create_directories(out);
  if (values.empty()) {
    if (param == "tau_sigma") values = {0.5, 1.0, 1.5, 2.0, 4.0, 8.0};
    else if (param == "w_lpl") values = {0.0, 1.0, 3.0, 10.0};
    else if (param == "gamma_ema") values = {0.999, 0.9995, 0.99975, 0.9999};
    else throw ConfigError("sweep: unknown parameter " + param);
  }
  ImageSet set = dataset_from(cfg, data_dir);
  Autoencoder<float> ae = load_autoencoder(ae_path);

  std::ofstream csv(out + "/summary.csv");
  csv << param << ",loss_diff,loss_lpl,frechet,band_low,band_mid,band_high\n";
  for (double v : values) {
    RunConfig c = cfg;
    if (param == "tau_sigma") c.lpl.tau_sigma = v;
    else if (param == "w_lpl") c.lpl.w_lpl = v;
    else if (param == "gamma_ema") c.trainer.gamma_ema = v;
    else throw ConfigError("sweep: unknown parameter " + param);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/%s_%g", out.c_str(), param.c_str(), v);
    std::string run_dir = buf;
    fs::create_directories(run_dir);

    GeneratorTrainSetup setup = c.build_setup();
    MetricsRow last;
    TrainResult tr = train_generator(setup, set, ae, run_dir,
                                     [&](const MetricsRow& row) { last = row; });

    SampleRequest req;
    req.count = c.sampler.count;
    req.steps = c.sampler.steps;
    req.guidance = c.sampler.guidance;
    req.seed = c.sampler.seed;
    req.labels.resize(static_cast<size_t>(req.count));
    for (int i = 0; i < req.count; ++i) req.labels[static_cast<size_t>(i)] = i % c.data.classes;
    int latent_res = c.data.resolution / Autoencoder<float>::kDownFactor;
    Tensor<float> latents = sample_latents(c.sampler.use_ema ? tr.ema_model : tr.model,
                                           setup.schedule, c.framework, req, latent_res);
    Tensor<float> images = ae.decode(latents);

    FeatureSet fr = embed_for_metrics(set.images, ae, "real");
    FeatureSet ff = embed_for_metrics(images, ae, "generated");
    double fd = frechet_distance(fr, ff);
    SpectrumProfile sp_real = radial_power_spectrum(set.images);
    SpectrumProfile sp_fake = radial_power_spectrum(images);
    BandErrors bands = band_errors(sp_fake.radial, sp_real.radial);
    csv << v << "," << last.loss_diff << "," << last.loss_lpl << "," << fd << "," << bands.low
        << "," << bands.mid << "," << bands.high << "\n";
    csv.flush();
  }
  ManifestWriter mw{out, "sweep", run_config_json(cfg)};
  if (!config_path.empty()) mw.add_input(config_path);
  mw.add_input(ae_path);
  mw.artifacts = {"summary.csv"};
  mw.write(timer.seconds());
  return 0;
}

}  // namespace lplab
